# tidb/engine/nnkernels.py
"""
Differentiable building blocks with hand-written adjoints.

Shapes: feature maps are N x C (no scale axis) or N x S x C (scale axis); standard
kernels are L x C_in x C_out; pattern kernels are M x C_in x H. All convolutions are
correlations: y[n, o] = sum_c sum_l x[n + l*dilation, c] * h[l, c, o].

Padding modes:
    valid      no padding, N - span + 1 outputs
    same       symmetric zero padding, N outputs centred on the input frame
    lookahead  zero padding on the right only, output n sees input frames [n, n + span - 1]
"""

from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray
from scipy.special import expit, xlogy

from ..core.constants import LOGIT_CLAMP, NON_DOWNBEAT_WEIGHT
from ..core.errors import InputError, ShapeError
from .scaling import ScalingTensor

Padding = Literal["valid", "same", "lookahead"]
Strategy = Literal["materialise", "contract_first"]


@dataclass
class LossOutput:
    loss: float
    per_frame: NDArray[np.float64]


# --- Standard convolution ---

def _pad_widths(span: int, padding: Padding) -> Tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        left = (span - 1) // 2
        return left, span - 1 - left
    if padding == "lookahead":
        return 0, span - 1
    raise ShapeError(f"unknown padding mode {padding!r}")


def _windows(x: NDArray, span: int, dilation: int, padding: Padding) -> Tuple[NDArray, Tuple[int, int]]:
    """Dilated sliding windows over the padded input, shape N' x C x L."""
    left, right = _pad_widths(span, padding)
    xpad = np.pad(x, ((left, right), (0, 0)))
    if xpad.shape[0] < span:
        raise ShapeError(f"kernel span {span} exceeds padded input length {xpad.shape[0]}")
    return sliding_window_view(xpad, span, axis=0)[:, :, ::dilation], (left, right)


def conv1d(x: NDArray, h: NDArray, bias: Optional[NDArray] = None, dilation: int = 1,
           padding: Padding = "valid") -> NDArray:
    if h.ndim != 3 or x.ndim != 2 or h.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d expects x (N, C) and h (L, C, O); got {x.shape} and {h.shape}")
    if h.shape[0] < 1 or dilation < 1:
        raise ShapeError("kernel length and dilation must be at least 1")
    span = (h.shape[0] - 1) * dilation + 1
    windows, _ = _windows(x, span, dilation, padding)
    y = np.tensordot(windows, h, axes=([2, 1], [0, 1]))
    if bias is not None:
        y = y + bias
    return y


def conv1d_backward(grad_y: NDArray, x: NDArray, h: NDArray, dilation: int = 1,
                    padding: Padding = "valid") -> Tuple[NDArray, NDArray, NDArray]:
    """Returns (grad_x, grad_h, grad_bias) for y = conv1d(x, h, bias, dilation, padding)."""
    L = h.shape[0]
    span = (L - 1) * dilation + 1
    windows, (left, _) = _windows(x, span, dilation, padding)
    if grad_y.shape != (windows.shape[0], h.shape[2]):
        raise ShapeError(f"grad_y has shape {grad_y.shape}, forward output was {(windows.shape[0], h.shape[2])}")

    grad_h = np.tensordot(windows, grad_y, axes=([0], [0])).transpose(1, 0, 2)
    # transposed convolution: correlate the fully padded gradient with the reversed kernel
    grad_windows = sliding_window_view(np.pad(grad_y, ((span - 1, span - 1), (0, 0))), span, axis=0)[:, :, ::dilation]
    grad_xpad = np.tensordot(grad_windows, h[::-1], axes=([2, 1], [0, 2]))
    grad_x = grad_xpad[left:left + x.shape[0]]
    return grad_x, grad_h, grad_y.sum(axis=0)


# --- Scale-invariant convolution ---

def _psi_values(psi: ScalingTensor | NDArray) -> NDArray:
    return psi.values if isinstance(psi, ScalingTensor) else np.asarray(psi)


def materialise_kernels(k: NDArray, psi: ScalingTensor | NDArray) -> NDArray:
    """h_j[n, c, o] = sum_m psi[n, m, j] * k[m, c, o], returned as S x N* x C x H."""
    values = _psi_values(psi)
    if k.shape[0] != values.shape[1]:
        raise ShapeError(f"pattern length {k.shape[0]} does not match the scaling tensor's M={values.shape[1]}")
    return np.einsum("nmj,mch->jnch", values, k)


def _check_si_input(x: NDArray, k: NDArray, values: NDArray, stacked: bool) -> None:
    S = values.shape[2]
    if stacked:
        if x.ndim != 3 or x.shape[1] != S:
            raise ShapeError(f"stacked input must be N x {S} x C, got {x.shape}")
    elif x.ndim != 2:
        raise ShapeError(f"first-layer input must be N x C, got {x.shape}")
    if x.shape[-1] != k.shape[1]:
        raise ShapeError(f"input has {x.shape[-1]} channels, pattern kernel expects {k.shape[1]}")


def si_conv(x: NDArray, k: NDArray, psi: ScalingTensor | NDArray, stacked: bool = False,
            bias: Optional[NDArray] = None, padding: Padding = "valid",
            strategy: Strategy = "materialise", kernels: Optional[NDArray] = None) -> NDArray:
    """
    Scale-invariant convolution, output N' x S x H.

    First form (stacked=False): y_j = x * h_j for an N x C input.
    Stacked form: y_j = x_j * h_j for an N x S x C input.
    `kernels` may carry materialise_kernels(k, psi) computed earlier in the same step.
    """
    values = _psi_values(psi)
    _check_si_input(x, k, values, stacked)
    n_star, _, S = values.shape
    C, H = k.shape[1], k.shape[2]

    if strategy == "contract_first":
        y = _si_conv_contract_first(x, k, values, stacked, padding)
    else:
        h = materialise_kernels(k, values) if kernels is None else kernels
        if stacked:
            y = np.stack([conv1d(x[:, j], h[j], padding=padding) for j in range(S)], axis=1)
        else:
            h_all = h.transpose(1, 2, 0, 3).reshape(n_star, C, S * H)
            y = conv1d(x, h_all, padding=padding).reshape(-1, S, H)
    if bias is not None:
        y = y + bias
    return y


def _si_conv_contract_first(x: NDArray, k: NDArray, values: NDArray, stacked: bool, padding: Padding) -> NDArray:
    """Convolve x with every psi column first, then contract the pattern axis with k."""
    n_star = values.shape[0]
    if stacked:
        out = []
        for j in range(values.shape[2]):
            windows, _ = _windows(x[:, j], n_star, 1, padding)
            z = np.tensordot(windows, values[:, :, j], axes=([2], [0]))  # N' x C x M
            out.append(np.einsum("ncm,mch->nh", z, k))
        return np.stack(out, axis=1)
    windows, _ = _windows(x, n_star, 1, padding)
    z = np.tensordot(windows, values, axes=([2], [0]))  # N' x C x M x S
    return np.einsum("ncmj,mch->njh", z, k)


def si_conv_backward(grad_y: NDArray, x: NDArray, k: NDArray, psi: ScalingTensor | NDArray,
                     stacked: bool = False, padding: Padding = "valid",
                     kernels: Optional[NDArray] = None) -> Tuple[NDArray, NDArray, NDArray]:
    """Returns (grad_x, grad_k, grad_bias). psi is constant and receives no gradient."""
    values = _psi_values(psi)
    _check_si_input(x, k, values, stacked)
    n_star, _, S = values.shape
    C, H = k.shape[1], k.shape[2]
    if grad_y.ndim != 3 or grad_y.shape[1:] != (S, H):
        raise ShapeError(f"grad_y must be N' x {S} x {H}, got {grad_y.shape}")
    h = materialise_kernels(k, values) if kernels is None else kernels

    if stacked:
        grad_x = np.empty_like(x, dtype=np.result_type(x, grad_y))
        grad_h = np.empty((S, n_star, C, H), dtype=grad_x.dtype)
        for j in range(S):
            grad_x[:, j], grad_h[j], _ = conv1d_backward(grad_y[:, j], x[:, j], h[j], padding=padding)
        grad_k = np.einsum("nmj,jnch->mch", values, grad_h)
    else:
        h_all = h.transpose(1, 2, 0, 3).reshape(n_star, C, S * H)
        grad_x, grad_h_all, _ = conv1d_backward(grad_y.reshape(-1, S * H), x, h_all, padding=padding)
        grad_k = np.einsum("nmj,ncjh->mch", values, grad_h_all.reshape(n_star, C, S, H))
    return grad_x, grad_k, grad_y.sum(axis=(0, 1))


# --- Activations and output heads ---

def relu(x: NDArray) -> NDArray:
    return np.maximum(x, 0)


def relu_backward(grad: NDArray, x: NDArray) -> NDArray:
    return np.where(x > 0, grad, 0)


def softmax_zero_bin(logits: NDArray) -> NDArray:
    """Softmax over [logits_0 .. logits_{S-1}, 0] per frame; the last bin is p(no downbeat)."""
    z = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    z = np.concatenate([z, np.zeros((z.shape[0], 1), dtype=z.dtype)], axis=1)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _frame_weights(non_downbeat: NDArray[np.bool_], non_downbeat_weight: float) -> NDArray:
    return np.where(non_downbeat, non_downbeat_weight, 1.0)


def _non_downbeat_frames(target: NDArray) -> NDArray[np.bool_]:
    return target[:, -1] >= 1.0 - 1e-9


def weighted_xent(o: NDArray, target: NDArray, non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> LossOutput:
    """Frame-wise categorical cross-entropy, frames whose target is all no-downbeat down-weighted."""
    if o.shape != target.shape:
        raise ShapeError(f"output {o.shape} and target {target.shape} differ")
    if not np.allclose(target.sum(axis=1), 1.0, atol=1e-6):
        raise InputError("every target row must sum to 1")
    weights = _frame_weights(_non_downbeat_frames(target), non_downbeat_weight)
    per_frame = -xlogy(target, o).sum(axis=1) * weights
    return LossOutput(loss=float(per_frame.mean()), per_frame=per_frame)


def weighted_xent_backward(o: NDArray, target: NDArray, logits: NDArray,
                           non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> NDArray:
    """Gradient of weighted_xent(softmax_zero_bin(logits), target) with respect to the logits."""
    weights = _frame_weights(_non_downbeat_frames(target), non_downbeat_weight)
    grad = (o - target)[:, :-1] * (weights / target.shape[0])[:, None]
    return np.where(np.abs(logits) > LOGIT_CLAMP, 0.0, grad)


def logistic_xent(logits: NDArray, target: NDArray, non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> LossOutput:
    """
    Binary cross-entropy of the single-logit downbeat head.

    `logits` is N x 1 (or N); `target` is the same TargetGrid used by the softmax head,
    whose downbeat probability is 1 - target[:, S].
    """
    z = np.asarray(logits).reshape(-1)
    if not np.allclose(target.sum(axis=1), 1.0, atol=1e-6):
        raise InputError("every target row must sum to 1")
    y = 1.0 - target[:, -1]
    weights = _frame_weights(_non_downbeat_frames(target), non_downbeat_weight)
    per_frame = (y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)) * weights
    return LossOutput(loss=float(per_frame.mean()), per_frame=per_frame)


def logistic_xent_backward(logits: NDArray, target: NDArray,
                           non_downbeat_weight: float = NON_DOWNBEAT_WEIGHT) -> NDArray:
    shape = np.shape(logits)
    z = np.asarray(logits).reshape(-1)
    y = 1.0 - target[:, -1]
    weights = _frame_weights(_non_downbeat_frames(target), non_downbeat_weight)
    return ((expit(z) - y) * weights / z.shape[0]).reshape(shape)
