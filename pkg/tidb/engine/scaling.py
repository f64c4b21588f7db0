# tidb/engine/scaling.py
"""
Scale grid and scaling tensor.

A pattern k of M samples in musical time is turned into S frame-time kernels
h_j = <psi[:, :, j], k>, one per tempo bin. psi[n, m, j] places sample m of the
pattern at frame s_j * m (band-limited interpolation) and smooths that placement
along the log-spaced scale axis with a raised-cosine window of width 2/alpha bins.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..core import caching
from ..core.constants import (
    DEFAULT_ALPHA, DEFAULT_MAX_FRAME_STEP, DEFAULT_QUADRATURE_STEP,
    MAX_N_STAR, MAX_TENSOR_ELEMENTS, SINC_HALF_WIDTH,
)
from ..core.container import ContainerKind, read_container, write_container
from ..core.errors import CapacityError, FormatError, ParameterError


@dataclass(frozen=True)
class ScaleGrid:
    tau0: float
    T: int
    S: int
    r: float
    B: int
    M: int
    taus: Tuple[float, ...]
    scales: Tuple[float, ...]
    n_star: int

    def scale_at(self, j: ArrayLike) -> NDArray[np.float64]:
        """Continuous extension s(j) = r * tau0 * 2^(j/T) * B / M, defined for any real j."""
        j = np.asarray(j, dtype=np.float64)
        return self.r * self.tau0 * np.exp2(j / self.T) * self.B / self.M

    @property
    def bpm(self) -> NDArray[np.float64]:
        return 60.0 / np.asarray(self.taus)

    def nearest_bin(self, tau: float) -> int:
        """Index of the tempo bin closest to beat period `tau` in log-tempo, clamped to the grid."""
        position = self.T * math.log2(tau / self.tau0)
        return int(min(max(round(position), 0), self.S - 1))


def build_scale_grid(tau0: float, T: int, S: int, r: float, B: int, M: int,
                     max_n_star: int = MAX_N_STAR) -> ScaleGrid:
    for name, value in (("tau0", tau0), ("T", T), ("S", S), ("r", r), ("B", B), ("M", M)):
        if not value > 0:
            raise ParameterError(f"{name} must be positive, got {value}")
    for name, value in (("T", T), ("S", S), ("B", B), ("M", M)):
        if int(value) != value:
            raise ParameterError(f"{name} must be an integer, got {value}")
    T, S, B, M = int(T), int(S), int(B), int(M)

    j = np.arange(S, dtype=np.float64)
    taus = tau0 * np.exp2(j / T)
    scales = r * taus * B / M
    # rounding keeps exact products such as 6.25 * 64 from landing one frame high
    n_star = max(1, int(math.ceil(round(float(scales[-1]) * M, 9))))
    if n_star > max_n_star:
        raise CapacityError(f"kernel length N*={n_star} exceeds the cap of {max_n_star} frames")

    return ScaleGrid(
        tau0=float(tau0), T=T, S=S, r=float(r), B=B, M=M,
        taus=tuple(float(t) for t in taus),
        scales=tuple(float(s) for s in scales),
        n_star=n_star,
    )


def kappa_n(d: ArrayLike):
    """Interpolation kernel sin(pi d) / (pi d), equal to 1 at d = 0."""
    out = np.sinc(np.asarray(d, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def kappa_s(d: ArrayLike, alpha: float = DEFAULT_ALPHA):
    """Scale-smoothing window alpha * cos^2(alpha d pi / 2) on |d| < 1/alpha, zero elsewhere (unit integral)."""
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    d = np.asarray(d, dtype=np.float64)
    out = np.where(np.abs(d) < 1.0 / alpha, alpha * np.cos(alpha * d * np.pi / 2.0) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def quadrature_nodes(grid: ScaleGrid, j: int, alpha: float, quadrature_step: float,
                     max_frame_step: float) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Midpoint nodes over [j - 1/alpha, j + 1/alpha] and their weights kappa_s * width.

    Nodes are at most `quadrature_step` bins apart and move the last pattern sample by at
    most `max_frame_step` frames between neighbours.
    """
    half = 1.0 / alpha
    frame_sweep = float(grid.scale_at(j + half) - grid.scale_at(j - half)) * (grid.M - 1)
    count = max(2, math.ceil(2.0 * half / quadrature_step), math.ceil(frame_sweep / max_frame_step))
    width = 2.0 * half / count
    nodes = (j - half) + (np.arange(count) + 0.5) * width
    weights = kappa_s(j - nodes, alpha) * width
    return nodes, weights


@dataclass(frozen=True, eq=False)
class ScalingTensor:
    values: NDArray[np.float64]  # N* x M x S
    grid: ScaleGrid
    alpha: float
    quadrature_step: float
    max_frame_step: float = DEFAULT_MAX_FRAME_STEP

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    def swept_extent(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Lowest and highest frame position s(j~) * m reached inside the smoothing support, each M x S."""
        m = np.arange(self.grid.M, dtype=np.float64)[:, None]
        j = np.arange(self.grid.S, dtype=np.float64)[None, :]
        half = 1.0 / self.alpha
        return self.grid.scale_at(j - half) * m, self.grid.scale_at(j + half) * m

    def interior_mask(self, W: float = SINC_HALF_WIDTH) -> NDArray[np.bool_]:
        """Columns (m, j) whose swept placement, widened by W frames, stays inside [0, N*-1]."""
        lo, hi = self.swept_extent()
        return (lo >= W) & (hi <= self.grid.n_star - 1 - W)

    def column_support(self, tol: float = 1e-6) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
        """
        Run-length sparsity index: for each (m, j), the half-open frame range [start, stop)
        outside of which every |value| <= tol. Empty columns get start == stop == 0.
        """
        above = np.abs(self.values) > tol
        any_above = above.any(axis=0)
        n_star = self.values.shape[0]
        start = np.where(any_above, above.argmax(axis=0), 0)
        stop = np.where(any_above, n_star - above[::-1].argmax(axis=0), 0)
        return start.astype(np.int64), stop.astype(np.int64)


def build_scaling_tensor(grid: ScaleGrid, alpha: float = DEFAULT_ALPHA,
                         quadrature_step: float = DEFAULT_QUADRATURE_STEP,
                         max_frame_step: float = DEFAULT_MAX_FRAME_STEP,
                         max_elements: int = MAX_TENSOR_ELEMENTS) -> ScalingTensor:
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if not 0 < quadrature_step <= 0.5:
        raise ParameterError(f"quadrature_step must lie in (0, 0.5], got {quadrature_step}")
    if not max_frame_step > 0:
        raise ParameterError(f"max_frame_step must be positive, got {max_frame_step}")
    elements = grid.n_star * grid.M * grid.S
    if elements > max_elements:
        raise CapacityError(f"scaling tensor of {elements} elements exceeds the cap of {max_elements}")

    n = np.arange(grid.n_star, dtype=np.float64)[:, None]
    m = np.arange(grid.M, dtype=np.float64)[None, :]
    values = np.empty((grid.n_star, grid.M, grid.S), dtype=np.float64)
    for j in range(grid.S):
        nodes, weights = quadrature_nodes(grid, j, alpha, quadrature_step, max_frame_step)
        column = np.zeros((grid.n_star, grid.M), dtype=np.float64)
        for node, weight in zip(nodes, weights):
            column += weight * np.sinc(n - float(grid.scale_at(node)) * m)
        values[:, :, j] = column
    values.setflags(write=False)
    return ScalingTensor(values=values, grid=grid, alpha=float(alpha),
                         quadrature_step=float(quadrature_step), max_frame_step=float(max_frame_step))


def get_scaling_tensor(grid: ScaleGrid, alpha: float = DEFAULT_ALPHA,
                       quadrature_step: float = DEFAULT_QUADRATURE_STEP,
                       max_frame_step: float = DEFAULT_MAX_FRAME_STEP,
                       max_elements: int = MAX_TENSOR_ELEMENTS,
                       use_cache: bool = True) -> ScalingTensor:
    """build_scaling_tensor backed by the on-disk cache."""
    if not use_cache:
        return build_scaling_tensor(grid, alpha, quadrature_step, max_frame_step, max_elements)
    key = caching.get_cache_key(grid, alpha, quadrature_step, max_frame_step)
    cached = caching.load_from_cache(key)
    if cached is not None and cached.grid == grid:
        return cached
    tensor = build_scaling_tensor(grid, alpha, quadrature_step, max_frame_step, max_elements)
    caching.save_to_cache(key, tensor)
    return tensor


def _grid_meta(grid: ScaleGrid) -> dict:
    return {"tau0": grid.tau0, "T": grid.T, "S": grid.S, "r": grid.r, "B": grid.B, "M": grid.M}


def save_scaling_tensor(tensor: ScalingTensor, path: Path | str) -> None:
    meta = {
        "grid": _grid_meta(tensor.grid),
        "alpha": tensor.alpha,
        "quadrature_step": tensor.quadrature_step,
        "max_frame_step": tensor.max_frame_step,
    }
    write_container(path, ContainerKind.SCALING_TENSOR, meta, {"values": tensor.values})


def load_scaling_tensor(path: Path | str, max_n_star: Optional[int] = None) -> ScalingTensor:
    meta, arrays = read_container(path, ContainerKind.SCALING_TENSOR)
    try:
        g = meta["grid"]
        grid = build_scale_grid(g["tau0"], g["T"], g["S"], g["r"], g["B"], g["M"],
                                max_n_star=max_n_star or MAX_N_STAR)
        values = arrays["values"]
        alpha, step = float(meta["alpha"]), float(meta["quadrature_step"])
        frame_step = float(meta.get("max_frame_step", DEFAULT_MAX_FRAME_STEP))
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path} is missing scaling-tensor metadata: {e}") from e
    if values.shape != (grid.n_star, grid.M, grid.S):
        raise FormatError(f"{path} holds values of shape {values.shape}, grid implies "
                          f"{(grid.n_star, grid.M, grid.S)}")
    values.setflags(write=False)
    return ScalingTensor(values=values, grid=grid, alpha=alpha, quadrature_step=step, max_frame_step=frame_step)
