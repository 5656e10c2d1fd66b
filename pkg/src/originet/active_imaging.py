"""Collapse a frame sequence into a single active image.

Frames are indexed 1..tau. The signed frame difference is
``FT(t) = F_t - F_{t-1}`` for ``t >= 2``, the pairwise accumulation is
``E(t) = FT(t-1) + FT(t)`` and the active image is the sum of ``E(t)``
over ``t = 2..tau``.

``FT(1)`` has no difference to take. With ``ft1_mode="zero"`` (the
default) it is the zero image, so the sum telescopes to
``F_tau + F_{tau-1} - 2*F_1``. ``ft1_mode="first_frame"`` uses ``F_1``
instead, which keeps appearance content in the result.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DimensionError, NumericError

FT1_MODES = ("zero", "first_frame")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class FrameSequence:
    frames: np.ndarray  # (tau, H, W) or (tau, H, W, C)
    subject_id: str = ""
    label: int = -1
    video_id: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.frames, (list, tuple)):
            shapes = {np.shape(f) for f in self.frames}
            if len(shapes) > 1:
                raise DimensionError(f"frames differ in shape: {sorted(shapes)}")
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim not in (3, 4):
            raise DimensionError(f"frames must be (tau, H, W) or (tau, H, W, C), got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError(f"a frame sequence needs tau >= 2 frames, got {frames.shape[0]}")
        self.frames = frames

    @classmethod
    def from_frames(cls, frames, **kw) -> "FrameSequence":
        frames = [np.asarray(f, dtype=float) for f in frames]
        if len({f.shape for f in frames}) > 1:
            raise DimensionError(f"frames differ in shape: {sorted({f.shape for f in frames})}")
        return cls(np.stack(frames), **kw)

    @property
    def tau(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return self.frames.shape[1:]

    def frame(self, t: int) -> np.ndarray:
        """Frame ``F_t`` with 1-based ``t``."""
        return self.frames[t - 1]

    def to_grayscale(self) -> "FrameSequence":
        if self.frames.ndim == 3:
            return self
        if self.frames.shape[-1] != 3:
            raise DimensionError(f"grayscale conversion needs 3 channels, got {self.frames.shape[-1]}")
        return FrameSequence(self.frames @ LUMA, self.subject_id, self.label, self.video_id, dict(self.meta))

    def __add__(self, other: "FrameSequence") -> "FrameSequence":
        return FrameSequence(self.frames + other.frames, self.subject_id, self.label, self.video_id)

    def __mul__(self, k: float) -> "FrameSequence":
        return FrameSequence(self.frames * k, self.subject_id, self.label, self.video_id)

    __rmul__ = __mul__


@dataclass
class ActiveImage:
    pixels: np.ndarray
    normalized: bool = False
    source: str = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.pixels.shape


def _check_t(seq: FrameSequence, t: int) -> None:
    if not 2 <= t <= seq.tau:
        raise IndexError(f"frame index t={t} outside [2, {seq.tau}]")


def frame_diff(seq: FrameSequence, t: int, absolute: bool = False) -> np.ndarray:
    _check_t(seq, t)
    d = seq.frame(t) - seq.frame(t - 1)
    return np.abs(d) if absolute else d


def _ft(seq: FrameSequence, t: int, ft1_mode: str, absolute: bool) -> np.ndarray:
    if t == 1:
        return np.zeros(seq.frame_shape) if ft1_mode == "zero" else seq.frame(1)
    return frame_diff(seq, t, absolute)


def pairwise_accum(seq: FrameSequence, t: int, ft1_mode: str = "zero", absolute: bool = False) -> np.ndarray:
    _check_t(seq, t)
    if ft1_mode not in FT1_MODES:
        raise ValueError(f"ft1_mode must be one of {FT1_MODES}, got {ft1_mode!r}")
    return _ft(seq, t - 1, ft1_mode, absolute) + _ft(seq, t, ft1_mode, absolute)


def active_image(seq: FrameSequence, ft1_mode: str = "zero", absolute: bool = False) -> ActiveImage:
    """Stream the pairwise accumulations over ``t = 2..tau``.

    Each step reuses the previous frame difference, so every frame is
    touched once. Channels are handled independently.
    """
    if ft1_mode not in FT1_MODES:
        raise ValueError(f"ft1_mode must be one of {FT1_MODES}, got {ft1_mode!r}")
    if seq.tau < 2:
        raise ValueError(f"active image needs tau >= 2, got {seq.tau}")
    acc = np.zeros(seq.frame_shape)
    prev = _ft(seq, 1, ft1_mode, absolute)
    for t in range(2, seq.tau + 1):
        cur = frame_diff(seq, t, absolute)
        acc = acc + (prev + cur)
        prev = cur
    return ActiveImage(acc, normalized=False, source=seq.video_id)


def active_image_oracle(seq: FrameSequence, ft1_mode: str = "zero", absolute: bool = False) -> np.ndarray:
    """Literal per-pixel loop evaluation, for tests only."""
    frames = seq.frames
    tau = frames.shape[0]
    flat = frames.reshape(tau, -1)
    out = np.zeros(flat.shape[1])

    def ft(t, p):
        if t == 1:
            return 0.0 if ft1_mode == "zero" else float(flat[0, p])
        d = float(flat[t - 1, p]) - float(flat[t - 2, p])
        return abs(d) if absolute else d

    for p in range(flat.shape[1]):
        total = 0.0
        for t in range(2, tau + 1):
            total = total + (ft(t - 1, p) + ft(t, p))
        out[p] = total
    return out.reshape(frames.shape[1:])


def normalize_active(img: ActiveImage | np.ndarray) -> ActiveImage:
    """Min-max rescale to [0, 255] jointly over channels; constant maps to 128."""
    pixels = img.pixels if isinstance(img, ActiveImage) else np.asarray(img, dtype=float)
    source = img.source if isinstance(img, ActiveImage) else ""
    if not np.all(np.isfinite(pixels)):
        raise NumericError("active image contains non-finite pixels")
    lo, hi = pixels.min(), pixels.max()
    if hi == lo:
        out = np.full(pixels.shape, 128.0)
    else:
        # divide first: 255/(hi-lo) overflows for subnormal ranges.
        # clip absorbs the last-ulp overshoot of the affine map
        out = np.clip((pixels - lo) / (hi - lo) * 255.0, 0.0, 255.0)
    return ActiveImage(out, normalized=True, source=source)


def to_uint8(img: ActiveImage | np.ndarray) -> np.ndarray:
    pixels = img.pixels if isinstance(img, ActiveImage) else img
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
