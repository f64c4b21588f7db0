# tidb/core/config.py
"""
Line-oriented key=value configuration with dotted sections.

    # comment
    seed = 7
    grid.T = 8
    model.frontend_channels = [32, 32, 32]

Command-line flags of the form --section.key=value override the file.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import demjson3
from pydantic import ValidationError

from .errors import ConfigError
from ..models.config_models import RunConfig

_JSONISH_START = set('[{"-+.0123456789')
_JSONISH_WORDS = {"true", "false", "null"}


def _decode_value(text: str) -> Any:
    text = text.strip()
    if not text:
        return ""
    if text[0] in _JSONISH_START or text in _JSONISH_WORDS:
        try:
            return demjson3.decode(text)
        except demjson3.JSONError:
            pass
    if text[0] == "'" and text[-1] == "'" and len(text) >= 2:
        return text[1:-1]
    return text


def _set_dotted(tree: Dict[str, Any], key: str, value: Any, origin: str) -> None:
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"{origin}: empty key")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{origin}: '{part}' is a value, not a section")
        node = child
    node[parts[-1]] = value


def parse_config_text(text: str, origin: str = "<config>") -> Dict[str, Any]:
    """Parses key=value lines into a nested dict (no validation)."""
    tree: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        _set_dotted(tree, key, _decode_value(value), f"{origin}:{lineno}")
    return tree


def parse_overrides(args: Iterable[str]) -> Dict[str, Any]:
    """Parses --section.key=value flags into a nested dict."""
    tree: Dict[str, Any] = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"unrecognised argument {arg!r}; overrides take the form --section.key=value")
        key, value = arg[2:].split("=", 1)
        _set_dotted(tree, key, _decode_value(value), arg)
    return tree


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(tree: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from e


def load_config(path: Optional[Path | str] = None, overrides: Iterable[str] = (),
                base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Loads the config file (if any), applies overrides, and validates the result."""
    tree: Dict[str, Any] = dict(base or {})
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        tree = _merge(tree, parse_config_text(text, origin=str(path)))
    tree = _merge(tree, parse_overrides(overrides))
    return build_config(tree)


def dump_config(config: RunConfig) -> str:
    """Renders a RunConfig back into the key=value format."""
    lines = []
    data = config.model_dump(mode="json")
    for key, value in data.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                lines.append(f"{key}.{sub_key} = {demjson3.encode(sub_value)}")
        else:
            lines.append(f"{key} = {demjson3.encode(value)}")
    return "\n".join(lines) + "\n"
