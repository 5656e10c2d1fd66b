"""Dense layer primitives with hand-written backward passes.

Tensors are plain float64 numpy arrays, NCHW for feature maps and (N, F)
for flat features. Every forward function here is pure; backward functions
return a :class:`LayerGrads` holding the input gradient and one entry per
parameter.

Convolution is cross-correlation (no kernel flip). Output pixel ``(l, m)``
(0-based) reads the padded input window whose top-left corner is
``(S*l, S*m)``; this is the 1-based mapping ``S*l - (S-1)`` shifted to
0-based indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerGrads:
    input: np.ndarray | None
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


def _pad4(pad) -> tuple[int, int, int, int]:
    """Normalise ``pad`` to (top, bottom, left, right)."""
    if np.isscalar(pad):
        p = int(pad)
        pads = (p, p, p, p)
    else:
        pads = tuple(int(p) for p in pad)
        if len(pads) == 2:
            pads = (pads[0], pads[0], pads[1], pads[1])
        if len(pads) != 4:
            raise DimensionError(f"pad must be an int, (py, px) or 4 per-side values, got {pad!r}")
    if min(pads) < 0:
        raise DimensionError(f"padding must be non-negative, got {pads}")
    return pads


def conv_output_size(size: int, k: int, stride: int, pad_lo: int, pad_hi: int) -> int:
    return (size + pad_lo + pad_hi - k) // stride + 1


def _check_conv(x: np.ndarray, kernel: np.ndarray, stride: int, pads) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv input must be NCHW, got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be [D, C, ky, kx], got shape {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"input channels (axis 1 of input, {x.shape[1]}) do not match "
            f"kernel in-channels (axis 1 of kernel, {kernel.shape[1]})"
        )
    if stride < 1:
        raise DimensionError(f"stride must be positive, got {stride}")
    top, bottom, left, right = pads
    if x.shape[2] + top + bottom < kernel.shape[2]:
        raise DimensionError(f"padded height {x.shape[2] + top + bottom} < kernel height {kernel.shape[2]}")
    if x.shape[3] + left + right < kernel.shape[3]:
        raise DimensionError(f"padded width {x.shape[3] + left + right} < kernel width {kernel.shape[3]}")


def _im2col(x: np.ndarray, ky: int, kx: int, stride: int, pads) -> tuple[np.ndarray, int, int]:
    top, bottom, left, right = pads
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right))) if any(pads) else x
    ho = conv_output_size(x.shape[2], ky, stride, top, bottom)
    wo = conv_output_size(x.shape[3], kx, stride, left, right)
    win = sliding_window_view(xp, (ky, kx), axis=(2, 3))[:, :, : stride * ho : stride, : stride * wo : stride]
    # (N, C, Ho, Wo, ky, kx) -> (N*Ho*Wo, C*ky*kx)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(x.shape[0] * ho * wo, -1)
    return cols, ho, wo


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, pad=0) -> np.ndarray:
    return conv2d_forward_cols(x, kernel, bias, stride, pad)[0]


def conv2d_forward_cols(x, kernel, bias, stride=1, pad=0) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`conv2d_forward` but also returns the im2col matrix for reuse in backward."""
    pads = _pad4(pad)
    _check_conv(x, kernel, stride, pads)
    d = kernel.shape[0]
    if bias.shape != (d,):
        raise DimensionError(f"bias must have shape ({d},), got {bias.shape}")
    cols, ho, wo = _im2col(x, kernel.shape[2], kernel.shape[3], stride, pads)
    out = cols @ kernel.reshape(d, -1).T
    out += bias
    return out.reshape(x.shape[0], ho, wo, d).transpose(0, 3, 1, 2), cols


def conv2d_backward(
    x: np.ndarray,
    kernel: np.ndarray,
    output_grad: np.ndarray,
    stride: int = 1,
    pad=0,
    cols: np.ndarray | None = None,
    input_grad: bool = True,
) -> LayerGrads:
    """Kernel, bias and input gradients of :func:`conv2d_forward`.

    ``cols`` may carry the im2col matrix from the forward pass;
    ``input_grad=False`` skips the input gradient (first layer).
    """
    pads = _pad4(pad)
    _check_conv(x, kernel, stride, pads)
    n, c, h, w = x.shape
    d, _, ky, kx = kernel.shape
    top, bottom, left, right = pads
    ho = conv_output_size(h, ky, stride, top, bottom)
    wo = conv_output_size(w, kx, stride, left, right)
    if output_grad.shape != (n, d, ho, wo):
        raise DimensionError(f"output_grad shape {output_grad.shape} != forward output shape {(n, d, ho, wo)}")

    if cols is None:
        cols, _, _ = _im2col(x, ky, kx, stride, pads)
    g = output_grad.transpose(0, 2, 3, 1).reshape(-1, d)
    dkernel = (g.T @ cols).reshape(kernel.shape)
    dbias = output_grad.sum(axis=(0, 2, 3))
    if not input_grad:
        return LayerGrads(None, {"kernel": dkernel, "bias": dbias})

    # (C*ky*kx, N*Ho*Wo) laid out channel-first so each tap is a contiguous block
    dcols = (kernel.reshape(d, -1).T @ g.T).reshape(c, ky, kx, n, ho, wo)
    dxp = np.zeros((c, n, h + top + bottom, w + left + right))
    for i in range(ky):
        for j in range(kx):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
    dx = dxp[:, :, top : top + h, left : left + w].transpose(1, 0, 2, 3)
    return LayerGrads(np.ascontiguousarray(dx), {"kernel": dkernel, "bias": dbias})


@dataclass(frozen=True)
class RunningStats:
    mean: np.ndarray
    var: np.ndarray


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def _check_bn(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> None:
    if x.ndim not in (2, 4):
        raise DimensionError(f"batchnorm input must be NCHW or (N, F), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")


def _bshape(x: np.ndarray) -> tuple[int, ...]:
    return (1, -1, 1, 1) if x.ndim == 4 else (1, -1)


def _reduce_axes(x: np.ndarray) -> tuple[int, ...]:
    return (0, 2, 3) if x.ndim == 4 else (0,)


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: str = "train",
    running: RunningStats | None = None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> tuple[np.ndarray, RunningStats | None, BatchNormCache | None]:
    """Per-channel batch normalisation.

    Returns ``(y, new_running_stats, cache)``. In train mode the batch
    statistics (biased variance) normalise the input and the running stats
    are blended in with ``momentum``; when ``running`` is None the blend
    starts from mean 0 / variance 1. Eval mode needs populated running
    stats and returns no cache.
    """
    _check_bn(x, gamma, beta)
    shape = _bshape(x)
    if mode == "eval":
        if running is None:
            raise StateError("batchnorm eval mode requires populated running statistics")
        inv_std = 1.0 / np.sqrt(running.var + eps)
        y = (x - running.mean.reshape(shape)) * (inv_std * gamma).reshape(shape) + beta.reshape(shape)
        return y, running, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    axes = _reduce_axes(x)
    mu = x.mean(axis=axes)
    xc = x - mu.reshape(shape)
    var = (xc * xc).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std.reshape(shape)
    y = xhat * gamma.reshape(shape) + beta.reshape(shape)

    prev = running or RunningStats(np.zeros_like(mu), np.ones_like(var))
    new = RunningStats(
        (1 - momentum) * prev.mean + momentum * mu,
        (1 - momentum) * prev.var + momentum * var,
    )
    return y, new, BatchNormCache(xhat, inv_std, gamma)


def batchnorm_backward(cache: BatchNormCache, output_grad: np.ndarray) -> LayerGrads:
    """Adjoint of train-mode batchnorm, including the batch-statistics path."""
    if output_grad.shape != cache.xhat.shape:
        raise DimensionError(f"output_grad shape {output_grad.shape} != input shape {cache.xhat.shape}")
    axes = _reduce_axes(output_grad)
    shape = _bshape(output_grad)
    m = output_grad.size // output_grad.shape[1]
    dbeta = output_grad.sum(axis=axes)
    dgamma = (output_grad * cache.xhat).sum(axis=axes)
    scale = (cache.gamma * cache.inv_std / m).reshape(shape)
    dx = scale * (m * output_grad - dbeta.reshape(shape) - cache.xhat * dgamma.reshape(shape))
    return LayerGrads(dx, {"gamma": dgamma, "beta": dbeta})


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear expects (N, Fin) input and (Fout, Fin) weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"input features (axis 1 of input, {x.shape[1]}) != weight Fin (axis 1, {weight.shape[1]})")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    return x @ weight.T + bias


def linear_backward(x: np.ndarray, weight: np.ndarray, output_grad: np.ndarray) -> LayerGrads:
    if output_grad.shape != (x.shape[0], weight.shape[0]):
        raise DimensionError(f"output_grad shape {output_grad.shape} != {(x.shape[0], weight.shape[0])}")
    return LayerGrads(output_grad @ weight, {"weight": output_grad.T @ x, "bias": output_grad.sum(axis=0)})


def softmax(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise DimensionError(f"softmax expects (N, Z) with Z >= 1, got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(probs: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and the combined softmax+CE logits gradient."""
    labels = np.asarray(labels, dtype=np.int64)
    n, z = probs.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z):
        raise IndexError(f"labels must lie in [0, {z}), got range [{labels.min()}, {labels.max()}]")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(float).tiny))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """``v <- momentum*v + g``; ``p <- p - lr*v``. Returns new params and velocity."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    velocity = velocity or {}
    new_params, new_vel = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        v = momentum * velocity[name] + g if name in velocity else g.copy()
        new_vel[name] = v
        new_params[name] = p - lr * v
    return new_params, new_vel


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function; ``x`` is restored afterwards."""
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.shape != n.shape:
        raise DimensionError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(f: Callable[[np.ndarray], float], point: np.ndarray, analytic_grad: np.ndarray, h: float = 1e-5) -> float:
    """Max of ``|a - n| / max(1, |a|, |n|)`` between analytic and central-difference gradients."""
    x = np.array(point, dtype=float, copy=True)
    return max_relative_error(analytic_grad, numerical_gradient(f, x, h))
