# tidb/core/caching.py
import hashlib
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from rich.console import Console

from .constants import CACHE_DIR_ENV
from .errors import FormatError

load_dotenv()

console = Console(stderr=True)


def get_cache_dir() -> Path:
    """Scaling-tensor cache directory: $TIDB_CACHE_DIR or ~/.cache/tidb."""
    override = os.getenv(CACHE_DIR_ENV)
    cache_dir = Path(override).expanduser() if override else Path.home() / ".cache" / "tidb"
    cache_dir.mkdir(parents=True, exist_ok=True)
    return cache_dir


def get_cache_key(grid, alpha: float, quadrature_step: float, max_frame_step: float) -> str:
    """Generates a unique key for a scaling tensor from everything that determines its values."""
    hasher = hashlib.sha256()
    for value in (grid.tau0, grid.T, grid.S, grid.r, grid.B, grid.M, alpha, quadrature_step, max_frame_step):
        hasher.update(repr(float(value)).encode("utf-8"))
        hasher.update(b"|")
    return hasher.hexdigest()


def load_from_cache(cache_key: str):
    """Loads a ScalingTensor from the cache if present and readable."""
    from ..engine.scaling import load_scaling_tensor

    cache_file = get_cache_dir() / f"{cache_key}.tidb"
    if not cache_file.exists():
        return None
    try:
        return load_scaling_tensor(cache_file)
    except FormatError as e:
        console.print(f"[yellow]Discarding corrupt cache entry {cache_file.name}: {e}[/yellow]")
        cache_file.unlink(missing_ok=True)
        return None


def save_to_cache(cache_key: str, tensor) -> Optional[Path]:
    """Saves a ScalingTensor to the cache; failures only cost a rebuild next time."""
    from ..engine.scaling import save_scaling_tensor

    cache_file = get_cache_dir() / f"{cache_key}.tidb"
    tmp_file = cache_file.with_suffix(".tmp")
    try:
        save_scaling_tensor(tensor, tmp_file)
        tmp_file.replace(cache_file)
        return cache_file
    except OSError as e:
        console.print(f"[yellow]Could not write scaling-tensor cache {cache_file}: {e}[/yellow]")
        tmp_file.unlink(missing_ok=True)
        return None


def clear_cache() -> int:
    """Deletes every cached tensor and returns the count."""
    deleted = 0
    for item in get_cache_dir().glob("*.tidb"):
        item.unlink()
        deleted += 1
    return deleted
