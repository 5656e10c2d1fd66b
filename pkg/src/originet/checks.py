"""Finite-difference checks of every hand-written backward pass.

Each check returns ``{name: max relative discrepancy}``. ``fault=True``
doubles one analytic gradient so callers can confirm the harness notices.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .activations import KINDS, act_derivative, act_forward
from .model import TINY_CONFIG, ModelConfig, build

ACTIVATION_TOL = 1e-7
LAYER_TOL = 1e-6
MODEL_TOL = 1e-4

# kinds whose forward map has a kink at 0
BRANCHED = {"relu", "elu", "leaky_relu", "rrelu"}


def check_activations(seed: int = 0, n: int = 1000, lo: float = -20.0, hi: float = 20.0, h: float = 1e-5, fault: bool = False) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}
    for kind in KINDS:
        x = rng.uniform(lo, hi, n)
        if kind in BRANCHED:
            x = x[np.abs(x) > 1e-6]
            # keep the difference stencil on one side of the kink
            step = np.minimum(h, np.abs(x) / 2)
        else:
            step = np.full_like(x, h)
        numeric = (act_forward(kind, x + step) - act_forward(kind, x - step)) / (2 * step)
        analytic = act_derivative(kind, x)
        if fault and kind == "rrelu":
            analytic = analytic * 2
        out[kind] = T.max_relative_error(analytic, numeric)
    return out


def _projected(fn, shape, rng):
    """Scalar loss ``sum(fn(...) * R)`` so any output gradient ``R`` can be checked."""
    r = rng.standard_normal(shape)
    return r, (lambda *a: float(np.sum(fn(*a) * r)))


def check_layers(seed: int = 0, fault: bool = False) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}
    for k, stride in ((3, 1), (3, 2), (5, 1), (5, 2)):
        pad = (k - 1) // 2
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        y = T.conv2d_forward(x, w, b, stride, pad)
        r = rng.standard_normal(y.shape)
        g = T.conv2d_backward(x, w, r, stride, pad)
        dk = g["kernel"] * (2 if fault and k == 3 and stride == 2 else 1)
        errs = [
            T.gradcheck(lambda v: float(np.sum(T.conv2d_forward(v, w, b, stride, pad) * r)), x, g.input),
            T.gradcheck(lambda v: float(np.sum(T.conv2d_forward(x, v, b, stride, pad) * r)), w, dk),
            T.gradcheck(lambda v: float(np.sum(T.conv2d_forward(x, w, v, stride, pad) * r)), b, g["bias"]),
        ]
        out[f"conv2d_k{k}_s{stride}"] = max(errs)

    x = rng.standard_normal((2, 3, 4, 4)) * 2 + 0.5
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    r = rng.standard_normal(x.shape)

    def bn(xv, gv, bv):
        return float(np.sum(T.batchnorm_forward(xv, gv, bv, "train")[0] * r))

    _, _, cache = T.batchnorm_forward(x, gamma, beta, "train")
    g = T.batchnorm_backward(cache, r)
    out["batchnorm_train"] = max(
        T.gradcheck(lambda v: bn(v, gamma, beta), x, g.input),
        T.gradcheck(lambda v: bn(x, v, beta), gamma, g["gamma"]),
        T.gradcheck(lambda v: bn(x, gamma, v), beta, g["beta"]),
    )

    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    r = rng.standard_normal((3, 4))
    g = T.linear_backward(x, w, r)
    out["linear"] = max(
        T.gradcheck(lambda v: float(np.sum(T.linear_forward(v, w, b) * r)), x, g.input),
        T.gradcheck(lambda v: float(np.sum(T.linear_forward(x, v, b) * r)), w, g["weight"]),
        T.gradcheck(lambda v: float(np.sum(T.linear_forward(x, w, v) * r)), b, g["bias"]),
    )

    logits = rng.standard_normal((4, 5)) * 3
    labels = rng.integers(0, 5, 4)
    _, dlogits = T.cross_entropy_loss(T.softmax(logits), labels)
    out["softmax_cross_entropy"] = T.gradcheck(lambda v: T.cross_entropy_loss(T.softmax(v), labels)[0], logits, dlogits)
    return out


def check_model(seed: int = 0, config: ModelConfig = TINY_CONFIG, batch: int = 2, fault: bool = False) -> dict[str, float]:
    """Gradcheck of the full train-mode loss over every parameter tensor."""
    rng = np.random.default_rng(seed)
    model = build(config, seed)
    # perturb BN affine params away from their trivial init
    for name in model.params:
        if name.endswith((".gamma", ".beta", ".bias")):
            model.params[name] = model.params[name] + 0.1 * rng.standard_normal(model.params[name].shape)
    x = rng.standard_normal((batch, config.input_channels, config.input_size, config.input_size))
    y = rng.integers(0, config.num_classes, batch)
    _, cache = model.forward(x, "train")
    grads = model.backward(cache, labels=y)
    if fault:
        grads["block1.conv_s.kernel"] = grads["block1.conv_s.kernel"] * 2
    out = {}
    for name, value in list(model.params.items()):
        def f(v, name=name):
            model.params[name] = v
            return model.loss(x, y)

        out[name] = T.gradcheck(f, value, grads[name])
        model.params[name] = value
    return out


def run_scope(scope: str, seed: int = 0, fault: bool = False) -> tuple[dict[str, float], float]:
    """Run one scope; returns per-item discrepancies and the tolerance that applies."""
    if scope == "activation":
        return check_activations(seed, fault=fault), ACTIVATION_TOL
    if scope == "layer":
        return check_layers(seed, fault=fault), LAYER_TOL
    if scope == "model":
        return check_model(seed, fault=fault), MODEL_TOL
    raise ValueError(f"unknown gradcheck scope {scope!r}; expected activation, layer or model")
