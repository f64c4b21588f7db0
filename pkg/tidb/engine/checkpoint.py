# tidb/engine/checkpoint.py
"""
Checkpoints: a CKPT container holding the RunConfig snapshot, best and current parameters,
RMSprop accumulators, training counters and the metrics history.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from ..core.constants import CHECKPOINT_FORMAT_VERSION
from ..core.container import ContainerKind, read_container, write_container
from ..core.errors import ConfigError, FormatError
from ..models.config_models import RunConfig
from ..models.data_models import EpochMetrics
from .network import Network, Params, build_network
from .trainer import TrainState

_BEST, _CURRENT, _ACCUM = "best/", "current/", "accum/"


@dataclass
class Checkpoint:
    config: RunConfig
    params: Params
    state: Optional[TrainState] = None
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @property
    def history(self) -> List[EpochMetrics]:
        return self.state.history if self.state is not None else []


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    return value if value is not None and math.isfinite(value) else None


def save_checkpoint(path: Path | str, config: RunConfig, params: Params,
                    state: Optional[TrainState] = None) -> None:
    meta: Dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "param_names": list(params),
        "has_state": state is not None,
    }
    arrays = {_BEST + name: value for name, value in params.items()}
    if state is not None:
        meta["state"] = {
            "epoch": state.epoch,
            "best_val_loss": _finite_or_none(state.best_val_loss),
            "best_epoch": state.best_epoch,
            "lr": state.lr,
            "seed": state.seed,
            "epochs_since_improvement": state.epochs_since_improvement,
            "last_finite_loss": _finite_or_none(state.last_finite_loss),
            "history": [m.model_dump() for m in state.history],
        }
        arrays.update({_CURRENT + name: value for name, value in state.current_params.items()})
        arrays.update({_ACCUM + name: value for name, value in state.accumulators.items()})
    write_container(path, ContainerKind.CHECKPOINT, meta, arrays)


def _section(arrays: Dict[str, np.ndarray], prefix: str, names: List[str], dtype, path) -> Params:
    out: Params = {}
    for name in names:
        key = prefix + name
        if key not in arrays:
            raise FormatError(f"{path} is missing array {key!r}")
        out[name] = arrays[key].astype(dtype)
    return out


def load_checkpoint(path: Path | str) -> Checkpoint:
    meta, arrays = read_container(path, ContainerKind.CHECKPOINT)
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{path} has checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}")
    try:
        config = RunConfig.model_validate(meta["config"])
        names = list(meta["param_names"])
    except (KeyError, TypeError, ValidationError) as e:
        raise FormatError(f"{path} carries an unusable config snapshot: {e}") from e

    dtype = np.dtype(config.train.dtype)
    params = _section(arrays, _BEST, names, dtype, path)
    state = None
    if meta.get("has_state"):
        s = meta.get("state") or {}
        try:
            history = [EpochMetrics.model_validate(m) for m in s.get("history", [])]
            best = s.get("best_val_loss")
            state = TrainState(
                params={name: value.copy() for name, value in params.items()},
                current_params=_section(arrays, _CURRENT, names, dtype, path),
                accumulators=_section(arrays, _ACCUM, names, dtype, path),
                epoch=int(s["epoch"]),
                best_val_loss=math.inf if best is None else float(best),
                best_epoch=int(s["best_epoch"]),
                lr=float(s["lr"]),
                seed=int(s["seed"]),
                epochs_since_improvement=int(s["epochs_since_improvement"]),
                last_finite_loss=s.get("last_finite_loss"),
                history=history,
            )
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise FormatError(f"{path} carries an unusable training state: {e}") from e
    return Checkpoint(config=config, params=params, state=state, format_version=version)


def restore_network(checkpoint: Checkpoint, psi=None) -> Network:
    """Rebuilds the network described by the checkpoint's config and loads its best parameters."""
    net = build_network(checkpoint.config, psi=psi)
    expected = {name: value.shape for name, value in net.params.items()}
    stored = {name: value.shape for name, value in checkpoint.params.items()}
    if expected != stored:
        raise ConfigError("checkpoint parameters do not match the architecture in its config")
    net.params = {name: value.copy() for name, value in checkpoint.params.items()}
    return net
