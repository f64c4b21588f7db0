# tidb/engine/trainer.py
"""
RMSprop training with early stopping and learning-rate reduction on plateau.

Every source of randomness is derived from (seed, epoch), and batch gradients are reduced in a
fixed order, so a run resumed from a checkpoint continues exactly like an uninterrupted one.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from rich.console import Console

from ..core.errors import InputError, TrainingDivergence
from ..models.config_models import TrainConfig
from ..models.data_models import EpochMetrics
from .network import Network, Params

console = Console(stderr=True)


@dataclass
class TrainingExample:
    track_id: str
    features: NDArray   # N x C
    targets: NDArray    # N x (S+1)


@dataclass
class TrainState:
    params: Params                      # best-validation parameters
    current_params: Params
    accumulators: Params
    epoch: int = 0                      # last completed epoch
    best_val_loss: float = math.inf
    best_epoch: int = 0
    lr: float = 1e-3
    seed: int = 0
    epochs_since_improvement: int = 0
    last_finite_loss: Optional[float] = None
    history: List[EpochMetrics] = field(default_factory=list)


class RMSprop:
    """a = rho * a + (1 - rho) * g^2;  p -= lr * g / (sqrt(a) + eps)"""

    def __init__(self, lr: float, rho: float = 0.9, epsilon: float = 1e-8,
                 accumulators: Optional[Params] = None):
        self.lr = lr
        self.rho = rho
        self.epsilon = epsilon
        self.accumulators: Params = accumulators if accumulators is not None else {}

    def update_params(self, params: Params, grads: Params) -> None:
        for name, g in grads.items():
            p = params[name]
            a = self.accumulators.setdefault(name, np.zeros_like(p))
            a[:] = self.rho * a + (1. - self.rho) * g * g
            p[:] = p - self.lr * g / (np.sqrt(a) + self.epsilon)


def _track_hash(track_id: str) -> int:
    return int(hashlib.sha256(track_id.encode("utf-8")).hexdigest(), 16)


def split_validation(track_ids: Sequence[str], fraction: float) -> Tuple[List[str], List[str]]:
    """Deterministic split by hash of track id; at least one validation track when there are two or more."""
    ids = list(track_ids)
    threshold = round(fraction * 100)
    val = [t for t in ids if _track_hash(t) % 100 < threshold]
    if not val and len(ids) >= 2 and fraction > 0:
        val = [min(ids, key=_track_hash)]
    elif len(val) == len(ids) and len(ids) >= 2:
        val.remove(max(val, key=_track_hash))
    val_set = set(val)
    return [t for t in ids if t not in val_set], val


def sample_excerpt(example: TrainingExample, frames: int, rng: np.random.Generator) -> Tuple[NDArray, NDArray]:
    n = example.features.shape[0]
    if n <= frames:
        return example.features, example.targets
    start = int(rng.integers(0, n - frames + 1))
    return example.features[start:start + frames], example.targets[start:start + frames]


def _copy(params: Params) -> Params:
    return {name: value.copy() for name, value in params.items()}


def init_state(net: Network, hp: TrainConfig, seed: int) -> TrainState:
    return TrainState(
        params=_copy(net.params), current_params=_copy(net.params),
        accumulators={name: np.zeros_like(p) for name, p in net.params.items()},
        lr=hp.lr, seed=seed,
    )


def _batch_step(net: Network, params: Params, batch: List[Tuple[NDArray, NDArray]],
                weight: float, pool: Optional[ThreadPoolExecutor]) -> Tuple[float, Params]:
    def run(item):
        return net.loss_and_grads(item[0], item[1], params, weight)

    results = list(pool.map(run, batch)) if pool is not None else [run(item) for item in batch]
    total: Params = {}
    for _, grads in results:
        for name, g in grads.items():
            total[name] = total[name] + g if name in total else g.copy()
    scale = 1.0 / len(batch)
    for name in total:
        total[name] *= scale
    return float(np.mean([loss.loss for loss, _ in results])), total


def evaluate_loss(net: Network, examples: Sequence[TrainingExample], params: Params,
                  weight: float, pool: Optional[ThreadPoolExecutor] = None) -> float:
    def run(example):
        return net.loss(example.features, example.targets, params, weight)

    losses = list(pool.map(run, examples)) if pool is not None else [run(e) for e in examples]
    return float(np.mean(losses))


def train(net: Network, train_set: Sequence[TrainingExample], val_set: Sequence[TrainingExample],
          hp: TrainConfig, seed: int = 0, state: Optional[TrainState] = None, jobs: Optional[int] = None,
          on_epoch: Optional[Callable[[EpochMetrics, bool], None]] = None) -> TrainState:
    """
    Trains `net` in place and returns the final TrainState. `state.params` (also loaded into
    `net.params` on return) are the parameters with the lowest validation loss.
    """
    if not train_set:
        raise InputError("training set is empty")
    if not val_set:
        console.print("[yellow]No validation tracks; early stopping follows the training loss.[/yellow]")

    state = state if state is not None else init_state(net, hp, seed)
    optimizer = RMSprop(state.lr, hp.rms_decay, hp.rms_eps, accumulators=state.accumulators)
    params = state.current_params
    excerpt_frames = max(1, int(round(hp.excerpt_seconds * net.grid.r)))
    workers = jobs if jobs is not None else min(hp.batch_size, 8)

    with ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext() as pool:
        while state.epoch < hp.max_epochs and state.epochs_since_improvement < hp.early_stop_patience:
            epoch = state.epoch + 1
            rng = np.random.default_rng([state.seed, epoch])
            order = rng.permutation(len(train_set))
            batch_losses = []
            for start in range(0, len(order), hp.batch_size):
                batch = [sample_excerpt(train_set[i], excerpt_frames, rng) for i in order[start:start + hp.batch_size]]
                loss, grads = _batch_step(net, params, batch, hp.non_downbeat_weight, pool)
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingDivergence(epoch, state.last_finite_loss)
                state.last_finite_loss = loss
                optimizer.update_params(params, grads)
                batch_losses.append(loss)

            train_loss = float(np.mean(batch_losses))
            val_loss = (evaluate_loss(net, val_set, params, hp.non_downbeat_weight, pool)
                        if val_set else train_loss)
            if not math.isfinite(val_loss):
                raise TrainingDivergence(epoch, state.last_finite_loss)

            improved = val_loss < state.best_val_loss
            if improved:
                state.best_val_loss = val_loss
                state.best_epoch = epoch
                state.params = _copy(params)
                state.epochs_since_improvement = 0
            else:
                state.epochs_since_improvement += 1
                if state.epochs_since_improvement % hp.plateau_patience == 0:
                    optimizer.lr *= hp.lr_factor

            metrics = EpochMetrics(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=optimizer.lr)
            state.history.append(metrics)
            state.epoch = epoch
            state.lr = optimizer.lr
            if on_epoch is not None:
                on_epoch(metrics, improved)

    net.params = _copy(state.params)
    return state
