# tidb/engine/decoder.py
"""
Bar-pointer HMM decoding of activation grids into downbeat times.

A state is (tempo q, bar position phi) with phi in [0, L_q). Within a bar the pointer advances
one frame per frame; at the end of a bar it wraps to phi = 0 and may move to a neighbouring tempo.
The first d_q positions of every bar form the downbeat region.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix

from ..core.constants import (
    DEFAULT_BEATS_PER_BAR, DEFAULT_TEMPO_SUBDIVISION, DEFAULT_TRANSITION_LAMBDA, OBS_FLOOR, TARGET_WINDOW_SECONDS,
)
from ..core.errors import CapacityError, FormatError, InputError, ParameterError, ShapeError
from ..models.config_models import DecoderConfig
from ..models.data_models import ArchitectureEnum
from .scaling import ScaleGrid


@dataclass(frozen=True, eq=False)
class BarPointerStateSpace:
    tempo_states: NDArray       # beat period of each tempo state, seconds
    beats_per_bar: int
    frame_rate: float
    bar_lengths: NDArray        # L_q, frames
    downbeat_widths: NDArray    # d_q, frames
    first_states: NDArray       # index of state (q, 0)
    state_tempo: NDArray        # q of every state
    state_position: NDArray     # phi of every state

    @property
    def n_states(self) -> int:
        return int(self.bar_lengths.sum())

    @property
    def n_tempi(self) -> int:
        return len(self.tempo_states)

    @property
    def downbeat_mask(self) -> NDArray:
        return self.state_position < self.downbeat_widths[self.state_tempo]

    @property
    def sigma(self) -> float:
        """|non-downbeat states| / |downbeat states|"""
        downbeats = int(self.downbeat_widths.sum())
        return (self.n_states - downbeats) / downbeats

    @property
    def max_bar_length(self) -> int:
        return int(self.bar_lengths.max())

    def state(self, q: int, phi: int) -> int:
        return int(self.first_states[q] + phi)


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """
    Sparse transition probabilities stored by destination: row i of `incoming` lists the
    predecessors of state i (column indices) and the probability of moving from each to i.
    """
    incoming: csr_matrix
    transition_lambda: float = 0.0

    @property
    def n_states(self) -> int:
        return self.incoming.shape[0]

    @property
    def log_probabilities(self) -> NDArray:
        return np.log(self.incoming.data)

    def outgoing_sums(self) -> NDArray:
        return np.asarray(self.incoming.sum(axis=0)).ravel()

    def to_dense(self) -> NDArray:
        """from x to: dense[x, y] = P(y | x)"""
        return self.incoming.toarray().T

    @classmethod
    def from_dense(cls, matrix: NDArray) -> "TransitionModel":
        """Builds a model from a dense from-to matrix; zero entries become missing edges."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"transition matrix must be square, got {matrix.shape}")
        return cls(_incoming(*np.nonzero(matrix), matrix[np.nonzero(matrix)], matrix.shape[0]))


def _incoming(prev: NDArray, nxt: NDArray, probs: NDArray, n_states: int) -> csr_matrix:
    keep = probs > 0
    m = csr_matrix((probs[keep], (nxt[keep], prev[keep])), shape=(n_states, n_states))
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass
class StatePath:
    states: NDArray
    log_prob: float

    def __len__(self) -> int:
        return len(self.states)


def downbeat_width(frame_rate: float, window: float = TARGET_WINDOW_SECONDS) -> int:
    """Half the target window in frames, rounded half up, at least one frame."""
    return max(1, int(math.floor(window * frame_rate / 2.0 + 0.5)))


def build_state_space(grid: ScaleGrid, tempo_subdivision: int = DEFAULT_TEMPO_SUBDIVISION,
                      beats_per_bar: int = DEFAULT_BEATS_PER_BAR,
                      transition_lambda: float = DEFAULT_TRANSITION_LAMBDA,
                      max_states: int = 500_000) -> Tuple[BarPointerStateSpace, TransitionModel]:
    if tempo_subdivision < 1 or int(tempo_subdivision) != tempo_subdivision:
        raise ParameterError(f"tempo_subdivision must be a positive integer, got {tempo_subdivision}")
    if beats_per_bar < 1:
        raise ParameterError(f"beats_per_bar must be positive, got {beats_per_bar}")
    if not 0.0 <= transition_lambda <= 0.5:
        raise ParameterError(f"transition lambda must lie in [0, 0.5], got {transition_lambda}")

    n_tempi = grid.S * int(tempo_subdivision)
    taus = np.geomspace(grid.taus[0], grid.taus[-1], n_tempi)
    lengths = np.maximum(1, np.round(beats_per_bar * taus * grid.r)).astype(np.int64)
    total = int(lengths.sum())
    if total > max_states:
        raise CapacityError(f"bar-pointer model needs {total} states, cap is {max_states}")
    widths = np.minimum(downbeat_width(grid.r), lengths)
    if widths.sum() >= total:
        raise ParameterError("every state falls in a downbeat region; bars are too short at this frame rate")

    first = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    state_tempo = np.repeat(np.arange(n_tempi), lengths)
    state_position = np.arange(total) - first[state_tempo]
    space = BarPointerStateSpace(
        tempo_states=taus, beats_per_bar=int(beats_per_bar), frame_rate=float(grid.r),
        bar_lengths=lengths, downbeat_widths=widths, first_states=first,
        state_tempo=state_tempo, state_position=state_position,
    )

    # within the bar
    advancing = state_position < lengths[state_tempo] - 1
    prev = [np.flatnonzero(advancing)]
    nxt = [prev[0] + 1]
    probs = [np.ones(prev[0].size)]

    # bar wrap: {q-1, q, q+1} with {lambda, 1 - 2 lambda, lambda}, renormalised at the edges
    ends = first + lengths - 1
    for q in range(n_tempi):
        moves = [(q + dq, p) for dq, p in ((-1, transition_lambda), (0, 1.0 - 2.0 * transition_lambda),
                                           (1, transition_lambda)) if 0 <= q + dq < n_tempi]
        mass = sum(p for _, p in moves)
        for target, p in moves:
            prev.append(np.array([ends[q]]))
            nxt.append(np.array([first[target]]))
            probs.append(np.array([p / mass]))

    incoming = _incoming(np.concatenate(prev), np.concatenate(nxt), np.concatenate(probs), total)
    return space, TransitionModel(incoming, transition_lambda)


def build_decoder_space(grid: ScaleGrid, cfg: DecoderConfig) -> Tuple[BarPointerStateSpace, TransitionModel]:
    return build_state_space(grid, cfg.tempo_subdivision, cfg.beats_per_bar, cfg.transition_lambda, cfg.max_states)


# --- Observation model ---

def interpolation_weights(grid: ScaleGrid, tempo_states: NDArray) -> NDArray:
    """S x Q matrix c(tau_j, tau_q): linear interpolation in log tempo, clamped at the grid edges."""
    log_taus = np.log(np.asarray(grid.taus))
    c = np.zeros((grid.S, len(tempo_states)))
    if grid.S == 1:
        c[0] = 1.0
        return c
    x = np.interp(np.log(tempo_states), log_taus, np.arange(grid.S, dtype=np.float64))
    lo = np.minimum(np.floor(x).astype(np.int64), grid.S - 2)
    frac = x - lo
    cols = np.arange(len(tempo_states))
    c[lo, cols] = 1.0 - frac
    c[lo + 1, cols] += frac
    return c


def observation_densities(o: NDArray, space: BarPointerStateSpace, grid: ScaleGrid,
                          arch: ArchitectureEnum = ArchitectureEnum.INV,
                          floor: float = OBS_FLOOR) -> Tuple[NDArray, NDArray]:
    """
    Compact observation model: an N x K densities array and a state -> column pointer table.

    inv: column q holds sum_j c(tau_j, tau_q) o_j for the downbeat states of tempo q; the last
    column holds o_S / (sigma S) for every non-downbeat state.
    noinv: column 0 holds p for downbeat states, column 1 holds (1 - p) / sigma.
    """
    o = np.asarray(o, dtype=np.float64)
    arch = ArchitectureEnum(arch)
    downbeat = space.downbeat_mask
    if arch == ArchitectureEnum.INV:
        if o.ndim != 2 or o.shape[1] != grid.S + 1:
            raise ShapeError(f"expected N x {grid.S + 1} activations, got {o.shape}")
        densities = np.empty((o.shape[0], space.n_tempi + 1))
        densities[:, :-1] = o[:, :grid.S] @ interpolation_weights(grid, space.tempo_states)
        densities[:, -1] = o[:, grid.S] / (space.sigma * grid.S)
        pointers = np.where(downbeat, space.state_tempo, space.n_tempi)
    else:
        if o.ndim != 2 or o.shape[1] != 2:
            raise ShapeError(f"expected N x 2 activations, got {o.shape}")
        densities = np.stack([o[:, 0], o[:, 1] / space.sigma], axis=1)
        pointers = np.where(downbeat, 0, 1)
    if not np.all(np.isfinite(densities)):
        raise InputError("activations contain NaN or infinite values")
    return np.maximum(densities, floor), pointers


def observation_probs(o: NDArray, space: BarPointerStateSpace, grid: ScaleGrid,
                      arch: ArchitectureEnum = ArchitectureEnum.INV, floor: float = OBS_FLOOR) -> NDArray:
    """Full N x states observation matrix."""
    densities, pointers = observation_densities(o, space, grid, arch, floor)
    return densities[:, pointers]


# --- Decoding ---

def viterbi(obs: NDArray, trans: TransitionModel, init: Optional[NDArray] = None,
            pointers: Optional[NDArray] = None) -> StatePath:
    """
    Most probable state path, in the log domain. Ties go to the lowest state index, both for
    the predecessor of a state and for the final state.

    obs is either N x states, or N x K densities indexed through `pointers` (states -> K).
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise InputError("viterbi needs a non-empty N x K observation matrix")
    if not np.all(obs > 0) or not np.all(np.isfinite(obs)):
        raise InputError("observations must be finite and strictly positive")
    n_states = trans.n_states
    if pointers is None:
        if obs.shape[1] != n_states:
            raise ShapeError(f"{obs.shape[1]} observation columns for {n_states} states")
        pointers = np.arange(n_states)
    elif len(pointers) != n_states:
        raise ShapeError(f"pointer table has {len(pointers)} entries for {n_states} states")
    log_obs = np.log(obs)

    if init is None:
        log_init = np.full(n_states, -math.log(n_states))
    else:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (n_states,) or np.any(init < 0):
            raise InputError("initial distribution must be a non-negative vector over the states")
        with np.errstate(divide="ignore"):
            log_init = np.log(init)

    m = trans.incoming
    prev = m.indices
    log_trans = trans.log_probabilities
    counts = np.diff(m.indptr)
    reached = np.flatnonzero(counts)
    starts = m.indptr[:-1][reached]
    dest = np.repeat(np.arange(n_states), counts)
    edge_index = np.arange(prev.size)

    n_frames = obs.shape[0]
    back = np.full((n_frames, n_states), -1, dtype=np.int32 if n_states < 2**31 else np.int64)
    delta = log_init + log_obs[0][pointers]
    for n in range(1, n_frames):
        best = np.full(n_states, -np.inf)
        arg = np.full(n_states, -1)
        if prev.size:
            candidates = delta[prev] + log_trans
            best[reached] = np.maximum.reduceat(candidates, starts)
            winners = np.where(candidates == best[dest], edge_index, prev.size)
            arg[reached] = prev[np.minimum.reduceat(winners, starts)]
        delta = best + log_obs[n][pointers]
        back[n] = arg

    last = int(np.argmax(delta))
    log_prob = float(delta[last])
    if not math.isfinite(log_prob):
        raise InputError("no state path has non-zero probability")
    states = np.empty(n_frames, dtype=np.int64)
    states[-1] = last
    for n in range(n_frames - 1, 0, -1):
        states[n - 1] = back[n, states[n]]
    return StatePath(states, log_prob)


def path_log_probability(states: Sequence[int], obs: NDArray, trans: TransitionModel,
                         init: Optional[NDArray] = None) -> float:
    """Log probability of one given state path (-inf when it uses a missing edge)."""
    states = np.asarray(states, dtype=np.int64)
    n_states = trans.n_states
    with np.errstate(divide="ignore"):
        log_init = (np.full(n_states, -math.log(n_states)) if init is None
                    else np.log(np.asarray(init, dtype=np.float64)))
        total = log_init[states[0]] + math.log(obs[0, states[0]])
        for n in range(1, len(states)):
            p = trans.incoming[states[n], states[n - 1]]
            if p <= 0:
                return -math.inf
            total += math.log(p) + math.log(obs[n, states[n]])
    return float(total)


def extract_downbeats(path: StatePath, space: BarPointerStateSpace, frame_rate: Optional[float] = None) -> List[float]:
    """Times (seconds) of the frames where the bar pointer enters position 0."""
    if len(path) == 0:
        return []
    r = space.frame_rate if frame_rate is None else frame_rate
    phi = space.state_position[path.states]
    entering = phi == 0
    entering[1:] &= phi[:-1] != 0
    return [float(n / r) for n in np.flatnonzero(entering)]


class BarPointerDecoder:
    """State space, transitions and observation settings for decoding one network's activations."""

    def __init__(self, grid: ScaleGrid, cfg: Optional[DecoderConfig] = None,
                 arch: ArchitectureEnum = ArchitectureEnum.INV):
        self.grid = grid
        self.cfg = cfg if cfg is not None else DecoderConfig()
        self.arch = ArchitectureEnum(arch)
        self.space, self.trans = build_decoder_space(grid, self.cfg)

    @property
    def warmup_seconds(self) -> float:
        return self.space.max_bar_length / self.space.frame_rate

    def decode_path(self, activations: NDArray) -> StatePath:
        densities, pointers = observation_densities(activations, self.space, self.grid, self.arch, self.cfg.obs_floor)
        return viterbi(densities, self.trans, pointers=pointers)

    def decode(self, activations: NDArray) -> List[float]:
        if len(activations) == 0:
            return []
        return extract_downbeats(self.decode_path(activations), self.space)

    def decode_many(self, activations: Sequence[NDArray], jobs: Optional[int] = None) -> List[List[float]]:
        """Decodes several tracks, in parallel processes when jobs != 1; output order follows input order."""
        if jobs == 1 or len(activations) <= 1:
            return [self.decode(a) for a in activations]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(self.decode, activations))


def decode_activations(activations: NDArray, grid: ScaleGrid, cfg: Optional[DecoderConfig] = None,
                       arch: ArchitectureEnum = ArchitectureEnum.INV) -> List[float]:
    return BarPointerDecoder(grid, cfg, arch).decode(activations)


# --- Downbeat files ---

def write_downbeats(path: Path | str, times: Sequence[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{t:.3f}\n" for t in times), encoding="utf-8")


def read_downbeats(path: Path | str) -> List[float]:
    """Reads a downbeat (or annotation) file: the first column of every non-empty line is a time."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    times = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            times.append(float(fields[0]))
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: not a time: {fields[0]!r}") from e
    return times
