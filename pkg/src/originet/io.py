"""Reading and writing frame sequences and images.

A video is either a directory of 8-bit PNG/PGM frames (sorted by file
name) or a raw sequence file::

    b"FSEQ" | height, width, channels, tau (little-endian int32)
    | float64 pixels, frame-major, each frame stored channel-planar
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .active_imaging import FrameSequence
from .errors import FormatError

FRAME_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
RAW_SUFFIX = ".fseq"
RAW_MAGIC = b"FSEQ"
_RAW_HEADER = struct.Struct("<4s4i")


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit image as float64, (H, W) for gray and (H, W, 3) for colour."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if "A" in im.mode or im.mode in ("P", "CMYK") else "L")
        return np.asarray(im, dtype=float)


def write_image(path: str | Path, pixels: np.ndarray) -> Path:
    path = Path(path)
    arr = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".ppm", ".pnm") else "PNG"
    Image.fromarray(arr).save(path, format=fmt)
    return path


def frame_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def is_video(path: str | Path) -> bool:
    path = Path(path)
    if path.is_file():
        return path.suffix.lower() == RAW_SUFFIX
    return path.is_dir() and bool(frame_files(path))


def read_raw_sequence(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _RAW_HEADER.size:
        raise FormatError(f"{path}: file too short for a sequence header")
    magic, h, w, c, tau = _RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if min(h, w, c, tau) < 1:
        raise FormatError(f"{path}: invalid dimensions h={h} w={w} c={c} tau={tau}")
    expected = _RAW_HEADER.size + 8 * h * w * c * tau
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    pix = np.frombuffer(data, dtype="<f8", offset=_RAW_HEADER.size).reshape(tau, c, h, w)
    pix = pix.transpose(0, 2, 3, 1).astype(float)
    return pix[..., 0] if c == 1 else pix


def write_raw_sequence(path: str | Path, frames: np.ndarray) -> Path:
    frames = np.asarray(frames, dtype="<f8")
    if frames.ndim == 3:
        frames = frames[..., None]
    if frames.ndim != 4:
        raise FormatError(f"frames must be (tau, H, W[, C]), got {frames.shape}")
    tau, h, w, c = frames.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, h, w, c, tau))
        fh.write(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)).tobytes())
    return path


def load_video(path: str | Path, grayscale: bool = False, **meta) -> FrameSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"video not found: {path}")
    if path.is_file():
        frames = read_raw_sequence(path)
    else:
        files = frame_files(path)
        if not files:
            raise FormatError(f"{path}: no PNG/PGM frames found")
        imgs = [read_image(f) for f in files]
        if len({im.shape for im in imgs}) != 1:
            raise FormatError(f"{path}: frames differ in size")
        frames = np.stack(imgs)
    if frames.shape[0] < 2:
        raise FormatError(f"{path}: need at least 2 frames, found {frames.shape[0]}")
    seq = FrameSequence(frames, video_id=meta.pop("video_id", path.name), **meta)
    return seq.to_grayscale() if grayscale else seq


def write_video_frames(directory: str | Path, frames: np.ndarray, suffix: str = ".png") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(frames))))
    for i, frame in enumerate(frames, start=1):
        write_image(directory / f"frame_{i:0{width}d}{suffix}", frame)
    return directory
