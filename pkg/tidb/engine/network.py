# tidb/engine/network.py
"""
The tempo-invariant network (`inv`), the dilated baseline (`noinv`), target grids and prediction.

Layers hold only their configuration; parameters live in one name -> array dict owned by the
Network so the optimiser can treat them uniformly. forward() returns the caches backward() needs
instead of storing them, so several batch items can run through the same network at once.
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from rich.console import Console
from scipy.special import expit

from ..core.constants import NON_DOWNBEAT_WEIGHT, TARGET_WINDOW_SECONDS
from ..core.errors import ConfigError, InputError, ShapeError
from ..models.config_models import RunConfig
from ..models.data_models import ArchitectureEnum, TrackAnnotation
from . import nnkernels as nk
from .scaling import ScaleGrid, ScalingTensor, build_scale_grid, get_scaling_tensor

console = Console(stderr=True)

Params = Dict[str, NDArray]


class ConvLayer:
    """Standard dilated 1-D convolution, optionally followed by a rectifier."""

    def __init__(self, name: str, kernel: int, c_in: int, c_out: int, dilation: int = 1,
                 activation: bool = True, use_bias: bool = True, padding: nk.Padding = "lookahead"):
        self.name = name
        self.kernel, self.c_in, self.c_out = kernel, c_in, c_out
        self.dilation = dilation
        self.activation = activation
        self.use_bias = use_bias
        self.padding = padding

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {f"{self.name}.weight": (self.kernel, self.c_in, self.c_out)}
        if self.use_bias:
            shapes[f"{self.name}.bias"] = (self.c_out,)
        return shapes

    def fan(self) -> Tuple[int, int]:
        return self.kernel * self.c_in, self.kernel * self.c_out

    def forward(self, params: Params, x: NDArray):
        z = nk.conv1d(x, params[f"{self.name}.weight"], params.get(f"{self.name}.bias"),
                      self.dilation, self.padding)
        return (nk.relu(z) if self.activation else z), (x, z)

    def backward(self, params: Params, grad: NDArray, cache) -> Tuple[NDArray, Params]:
        x, z = cache
        if self.activation:
            grad = nk.relu_backward(grad, z)
        grad_x, grad_w, grad_b = nk.conv1d_backward(grad, x, params[f"{self.name}.weight"],
                                                    self.dilation, self.padding)
        grads = {f"{self.name}.weight": grad_w}
        if self.use_bias:
            grads[f"{self.name}.bias"] = grad_b
        return grad_x, grads


class ScaleInvariantLayer:
    """Pattern kernel k (M x C x H) expanded to S frame-time kernels through the scaling tensor."""

    def __init__(self, name: str, psi_values: NDArray, c_in: int, c_out: int, stacked: bool,
                 activation: bool = True, use_bias: bool = True, padding: nk.Padding = "lookahead"):
        self.name = name
        self.psi_values = psi_values
        self.M = psi_values.shape[1]
        self.c_in, self.c_out = c_in, c_out
        self.stacked = stacked
        self.activation = activation
        self.use_bias = use_bias
        self.padding = padding

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {f"{self.name}.pattern": (self.M, self.c_in, self.c_out)}
        if self.use_bias:
            shapes[f"{self.name}.bias"] = (self.c_out,)
        return shapes

    def fan(self) -> Tuple[int, int]:
        return self.M * self.c_in, self.M * self.c_out

    def forward(self, params: Params, x: NDArray):
        k = params[f"{self.name}.pattern"]
        kernels = nk.materialise_kernels(k, self.psi_values).astype(k.dtype, copy=False)
        z = nk.si_conv(x, k, self.psi_values, self.stacked, params.get(f"{self.name}.bias"),
                       self.padding, kernels=kernels)
        return (nk.relu(z) if self.activation else z), (x, z, kernels)

    def backward(self, params: Params, grad: NDArray, cache) -> Tuple[NDArray, Params]:
        x, z, kernels = cache
        if self.activation:
            grad = nk.relu_backward(grad, z)
        k = params[f"{self.name}.pattern"]
        grad_x, grad_k, grad_b = nk.si_conv_backward(grad, x, k, self.psi_values, self.stacked,
                                                     self.padding, kernels=kernels)
        grads = {f"{self.name}.pattern": grad_k.astype(k.dtype, copy=False)}
        if self.use_bias:
            grads[f"{self.name}.bias"] = grad_b
        return grad_x, grads


class Network:
    def __init__(self, arch: ArchitectureEnum, layers: List, grid: ScaleGrid, params: Params,
                 psi: Optional[ScalingTensor] = None, input_channels: int = 64):
        self.arch = ArchitectureEnum(arch)
        self.layers = layers
        self.grid = grid
        self.params = params
        self.psi = psi
        self.input_channels = input_channels

    @property
    def n_outputs(self) -> int:
        """Bins of the activation grid: S tempo bins plus no-downbeat, or downbeat/no-downbeat."""
        return self.grid.S + 1 if self.arch == ArchitectureEnum.INV else 2

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, x: NDArray, params: Optional[Params] = None) -> Tuple[NDArray, List]:
        """Logits (N x S for inv, N x 1 for noinv) and the per-layer caches."""
        params = self.params if params is None else params
        if x.ndim != 2 or x.shape[1] != self.input_channels:
            raise ShapeError(f"expected N x {self.input_channels} features, got {x.shape}")
        caches = []
        h = x.astype(next(iter(params.values())).dtype, copy=False)
        for layer in self.layers:
            h, cache = layer.forward(params, h)
            caches.append(cache)
        logits = h[:, :, 0] if self.arch == ArchitectureEnum.INV else h
        return logits, caches

    def backward(self, grad_logits: NDArray, caches: List, params: Optional[Params] = None) -> Params:
        params = self.params if params is None else params
        grad = grad_logits[:, :, None] if self.arch == ArchitectureEnum.INV else grad_logits
        grads: Params = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad, layer_grads = layer.backward(params, grad.astype(cache[0].dtype, copy=False), cache)
            grads.update(layer_grads)
        return grads

    def activations(self, logits: NDArray) -> NDArray:
        logits = logits.astype(np.float64)
        if self.arch == ArchitectureEnum.INV:
            return nk.softmax_zero_bin(logits)
        p = expit(logits[:, 0])
        return np.stack([p, 1.0 - p], axis=1)

    def loss_and_grads(self, x: NDArray, target: NDArray, params: Optional[Params] = None,
                       non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> Tuple[nk.LossOutput, Params]:
        params = self.params if params is None else params
        logits, caches = self.forward(x, params)
        if target.shape[0] != logits.shape[0]:
            raise ShapeError(f"target has {target.shape[0]} frames, network produced {logits.shape[0]}")
        logits64 = logits.astype(np.float64)
        if self.arch == ArchitectureEnum.INV:
            o = nk.softmax_zero_bin(logits64)
            loss = nk.weighted_xent(o, target, non_downbeat_weight)
            grad_logits = nk.weighted_xent_backward(o, target, logits64, non_downbeat_weight)
        else:
            loss = nk.logistic_xent(logits64, target, non_downbeat_weight)
            grad_logits = nk.logistic_xent_backward(logits64, target, non_downbeat_weight)
        return loss, self.backward(grad_logits, caches, params)

    def loss(self, x: NDArray, target: NDArray, params: Optional[Params] = None,
             non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> float:
        logits, _ = self.forward(x, params)
        logits64 = logits.astype(np.float64)
        if self.arch == ArchitectureEnum.INV:
            return nk.weighted_xent(nk.softmax_zero_bin(logits64), target, non_downbeat_weight).loss
        return nk.logistic_xent(logits64, target, non_downbeat_weight).loss


def frontend_receptive_field(kernels: List[int]) -> int:
    return 1 + sum(k - 1 for k in kernels)


def init_parameters(layers: List, seed: int, init: str = "glorot", dtype=np.float32) -> Params:
    """Glorot-uniform weights and zero biases, drawn layer by layer from one seeded stream."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for layer in layers:
        fan_in, fan_out = layer.fan()
        for name, shape in layer.parameter_shapes().items():
            if init == "zeros" or name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def grid_from_config(config: RunConfig) -> ScaleGrid:
    g = config.grid
    return build_scale_grid(g.tau0, g.T, g.S, g.r, g.B, g.M, max_n_star=g.max_n_star)


def build_network(config: RunConfig, psi: Optional[ScalingTensor] = None,
                  seed: Optional[int] = None) -> Network:
    mc = config.model
    grid = grid_from_config(config)
    rf = frontend_receptive_field([mc.frontend_kernel] * len(mc.frontend_channels))
    if rf > 0.25 * grid.r:
        raise ConfigError(f"frontend receptive field of {rf} frames exceeds 0.25 s ({0.25 * grid.r:g} frames)")
    dtype = np.dtype(config.train.dtype)

    layers: List = []
    c_in = mc.input_channels
    for i, channels in enumerate(mc.frontend_channels):
        layers.append(ConvLayer(f"frontend.{i}", mc.frontend_kernel, c_in, channels,
                                use_bias=mc.use_bias, padding=mc.padding))
        c_in = channels

    if mc.arch == ArchitectureEnum.INV:
        if psi is None:
            g = config.grid
            psi = get_scaling_tensor(grid, g.alpha, g.quadrature_step, g.max_frame_step, g.max_tensor_elements)
        if psi.grid != grid:
            raise ConfigError("scaling tensor was built for a different scale grid")
        psi_values = psi.values.astype(dtype)
        last = len(mc.ti_channels) - 1
        for i, channels in enumerate(mc.ti_channels):
            layers.append(ScaleInvariantLayer(f"ti.{i}", psi_values, c_in, channels, stacked=i > 0,
                                              activation=i < last, use_bias=mc.use_bias, padding=mc.padding))
            c_in = channels
    else:
        psi = None
        last = len(mc.dilated_channels) - 1
        for i, (channels, dilation) in enumerate(zip(mc.dilated_channels, mc.dilations)):
            layers.append(ConvLayer(f"dilated.{i}", mc.dilated_kernel, c_in, channels, dilation,
                                    activation=i < last, use_bias=mc.use_bias, padding=mc.padding))
            c_in = channels

    params = init_parameters(layers, config.seed if seed is None else seed, mc.init, dtype)
    return Network(mc.arch, layers, grid, params, psi=psi, input_channels=mc.input_channels)


def predict(net: Network, features: NDArray, frame_rate: Optional[float] = None) -> NDArray:
    """Activation grid: N x (S+1) for inv, N x 2 (downbeat, no downbeat) for noinv."""
    if frame_rate is not None and not math.isclose(frame_rate, net.grid.r):
        raise ShapeError(f"features at {frame_rate} fps, network expects {net.grid.r} fps")
    if features.ndim != 2 or features.shape[1] != net.input_channels:
        raise ShapeError(f"expected N x {net.input_channels} features, got {features.shape}")
    logits, _ = net.forward(features)
    return net.activations(logits)


# --- Targets ---

def _local_beat_period(annotation: TrackAnnotation, downbeat: float, index: int,
                       beats_per_bar: int) -> Optional[float]:
    bpm = annotation.tempo_at(downbeat)
    if bpm:
        return 60.0 / bpm
    beats = np.asarray(annotation.beats)
    if beats.size >= 2:
        i = int(np.argmin(np.abs(beats - downbeat)))
        return float(beats[i + 1] - beats[i]) if i + 1 < beats.size else float(beats[i] - beats[i - 1])
    downbeats = annotation.downbeats
    if len(downbeats) >= 2:
        if index + 1 < len(downbeats):
            return (downbeats[index + 1] - downbeats[index]) / beats_per_bar
        return (downbeats[index] - downbeats[index - 1]) / beats_per_bar
    return None


def tempo_weights(grid: ScaleGrid, tau_star: float) -> NDArray:
    """Raised-cosine tempo window over log-tempo: weight 1 at tau*, 1/2 one bin away, zero beyond."""
    x = np.log2(np.asarray(grid.taus) / tau_star)
    inside = np.abs(x) <= 1.0 / grid.T + 1e-9
    w = np.where(inside, np.cos(np.pi * grid.T * x / 4.0) ** 2, 0.0)
    return w / w.sum()


def make_targets(annotation: TrackAnnotation, grid: ScaleGrid, n_frames: int,
                 window: float = TARGET_WINDOW_SECONDS, beats_per_bar: int = 4) -> Tuple[NDArray, int]:
    """
    N x (S+1) target grid and the number of downbeats whose beat period had to be clamped to the grid.
    """
    target = np.zeros((n_frames, grid.S + 1), dtype=np.float64)
    target[:, grid.S] = 1.0
    clamped = 0
    half = window * grid.r / 2.0
    frames = np.arange(n_frames)
    for index, t in enumerate(annotation.downbeats):
        tau = _local_beat_period(annotation, t, index, beats_per_bar)
        if tau is None or tau <= 0:
            raise InputError(f"cannot derive a beat period for the downbeat at {t:.3f} s")
        if not grid.taus[0] <= tau <= grid.taus[-1]:
            tau = min(max(tau, grid.taus[0]), grid.taus[-1])
            clamped += 1
        rows = frames[np.abs(frames - t * grid.r) <= half + 1e-9]
        if rows.size:
            target[rows, :grid.S] = tempo_weights(grid, tau)
            target[rows, grid.S] = 0.0
    if clamped:
        console.print(f"[yellow]{clamped} downbeat tempo(s) clamped to the scale grid[/yellow]")
    return target, clamped
