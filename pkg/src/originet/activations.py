"""Elementwise activations with analytic derivatives.

Six kinds are supported: sigmoid, tanh, relu, elu, leaky_relu and rrelu.
RReLU (refined ReLU) gates a leaky-linear term with a sigmoid::

    rrelu(x) = sigmoid(x) * (1 + alpha*x)   x < 0
             = sigmoid(x) * (1 + x)         x >= 0

It is evaluated through this factorisation with an overflow-free sigmoid,
so inputs far beyond +-710 neither overflow nor produce NaN.

At the branch point ``x = 0`` the ReLU family takes the ``x >= 0`` branch
of the derivative.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NumericError

KINDS = ("sigmoid", "tanh", "relu", "elu", "leaky_relu", "rrelu")
DEFAULT_ALPHA = {"elu": 1.0, "leaky_relu": 0.1, "rrelu": 0.1}

_ALIASES = {
    "sig": "sigmoid",
    "lrelu": "leaky_relu",
    "leakyrelu": "leaky_relu",
    "leaky-relu": "leaky_relu",
    "lr": "leaky_relu",
}


@dataclass(frozen=True)
class ActivationKind:
    name: str
    alpha: float | None = None

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown activation {self.name!r}; expected one of {', '.join(KINDS)}")
        if self.name in DEFAULT_ALPHA:
            if self.alpha is None:
                object.__setattr__(self, "alpha", DEFAULT_ALPHA[self.name])
            if not self.alpha > 0:
                raise ValueError(f"{self.name} alpha must be > 0, got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError(f"{self.name} takes no alpha")

    @classmethod
    def parse(cls, text: str) -> "ActivationKind":
        """Parse ``"rrelu"``, ``"elu:0.5"`` or ``"leaky_relu(0.2)"``."""
        text = text.strip().lower().replace("(", ":").rstrip(")")
        name, _, alpha = text.partition(":")
        name = _ALIASES.get(name.strip(), name.strip())
        return cls(name, float(alpha) if alpha else None)

    def __str__(self) -> str:
        return self.name if self.alpha is None else f"{self.name}:{self.alpha!r}"


def _as_kind(kind) -> ActivationKind:
    return kind if isinstance(kind, ActivationKind) else ActivationKind.parse(str(kind))


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError("activation input contains non-finite values")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(np.asarray(x, dtype=float))


def act_forward(kind, x) -> np.ndarray:
    kind = _as_kind(kind)
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    a = kind.alpha
    if kind.name == "sigmoid":
        return stable_sigmoid(x)
    if kind.name == "tanh":
        return np.tanh(x)
    if kind.name == "relu":
        return np.where(x >= 0, x, 0.0)
    if kind.name == "leaky_relu":
        return np.where(x >= 0, x, a * x)
    if kind.name == "elu":
        return np.where(x >= 0, x, a * np.expm1(np.minimum(x, 0.0)))
    s = stable_sigmoid(x)
    return s * np.where(x >= 0, 1.0 + x, 1.0 + a * x)


def act_derivative(kind, x) -> np.ndarray:
    """Exact derivative of :func:`act_forward`.

    For rrelu this is ``s(1-s)(1+c*x) + c*s`` with ``c = 1`` for ``x >= 0``
    and ``c = alpha`` otherwise. The left and right slopes at 0 differ
    (``(1+2*alpha)/4`` against ``3/4``); the value at 0 is the right one.
    """
    kind = _as_kind(kind)
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    a = kind.alpha
    if kind.name == "sigmoid":
        s = stable_sigmoid(x)
        return s * (1.0 - s)
    if kind.name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind.name == "relu":
        return np.where(x >= 0, 1.0, 0.0)
    if kind.name == "leaky_relu":
        return np.where(x >= 0, 1.0, a)
    if kind.name == "elu":
        return np.where(x >= 0, 1.0, a * np.exp(np.minimum(x, 0.0)))
    s = stable_sigmoid(x)
    c = np.where(x >= 0, 1.0, a)
    return s * (1.0 - s) * (1.0 + c * x) + c * s


def rrelu_published_derivative(x, alpha: float = 0.1) -> np.ndarray:
    """The published closed form ``e^x (e^x + c*x + 2) / (e^x + 1)^2``.

    ``c = 1`` for ``x >= 0`` (where it equals :func:`act_derivative`) and
    ``c = alpha`` below zero, where it does not differentiate the forward
    map. Kept for comparison and curve export; never used for training.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    c = np.where(x >= 0, 1.0, alpha)
    # e^x/(e^x+1)^2 = s(1-s) and e^x*e^x/(e^x+1)^2 = s^2 keep this finite for large |x|
    s = stable_sigmoid(x)
    return s * s + s * (1.0 - s) * (c * x + 2.0)


def act_backward(kind, x, output_grad) -> np.ndarray:
    output_grad = np.asarray(output_grad, dtype=float)
    x = np.asarray(x, dtype=float)
    if output_grad.shape != x.shape:
        raise ValueError(f"output_grad shape {output_grad.shape} != input shape {x.shape}")
    return output_grad * act_derivative(kind, x)


def activation_curve(kind, x_min: float, x_max: float, steps: int) -> np.ndarray:
    """Rows of ``(x, forward, derivative)`` sampled uniformly on ``[x_min, x_max]``."""
    if not (np.isfinite(x_min) and np.isfinite(x_max)) or not x_min < x_max:
        raise ValueError(f"need finite x_min < x_max, got [{x_min}, {x_max}]")
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    x = np.linspace(x_min, x_max, int(steps))
    return np.column_stack([x, act_forward(kind, x), act_derivative(kind, x)])


def activation_curve_csv(kind, x_min: float, x_max: float, steps: int, path: str | Path) -> Path:
    rows = activation_curve(kind, x_min, x_max, steps)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "forward", "derivative"])
        for row in rows:
            writer.writerow([f"{v:.17g}" for v in row])
    return path
