"""Dataset manifests, augmentation, LOSO folds and synthetic micro-motion videos.

A manifest is a CSV file with the header ``subject_id,video_id,path,label``.
``path`` points at a frame directory or a ``.fseq`` file and is resolved
relative to the manifest's directory. ``label`` is either a class index or
a class name. Inputs are assumed to be face crops already.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ManifestError, ProtocolError

HEADER = ("subject_id", "video_id", "path", "label")
ROTATION_ANGLES = (-45, -30, -15, 0, 15, 30, 45)
AUGMENT_MODES = ("product", "equalize_all")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    video_id: str
    path: str
    label: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    label_names: list[str]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)
        self.validate()

    def validate(self) -> None:
        if not self.entries:
            raise ManifestError("manifest has no entries")
        seen = set()
        for i, e in enumerate(self.entries, start=1):
            if not 0 <= e.label < len(self.label_names):
                raise ManifestError(f"entry {i}: label {e.label} outside [0, {len(self.label_names)})")
            key = (e.subject_id, e.video_id)
            if key in seen:
                raise ManifestError(f"entry {i}: duplicate (subject_id, video_id) = {key}")
            seen.add(key)

    @property
    def subjects(self) -> list[str]:
        """Distinct subject ids in first-appearance order."""
        return list(dict.fromkeys(e.subject_id for e in self.entries))

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def with_entries(self, entries: list[ManifestEntry]) -> "DatasetManifest":
        return DatasetManifest(list(entries), list(self.label_names), self.root)


def _label_sort_key(name: str):
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", name) if tok]


def load_manifest(path: str | Path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    header = tuple(c.strip() for c in rows[0])
    if header != HEADER:
        raise ManifestError(f"{path}: row 1: expected header {','.join(HEADER)}, got {','.join(header)}")
    raw = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ManifestError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        subject, video, rel, label = (c.strip() for c in row)
        if not subject or not video or not rel or not label:
            raise ManifestError(f"{path}: row {lineno}: empty field")
        if check_paths:
            target = Path(rel) if Path(rel).is_absolute() else path.parent / rel
            if not target.exists():
                raise ManifestError(f"{path}: row {lineno}: referenced video {target} does not exist")
        raw.append((lineno, subject, video, rel, label))
    if not raw:
        raise ManifestError(f"{path}: manifest has no entries")

    labels = [r[4] for r in raw]
    if all(lab.isdigit() for lab in labels):
        names = [str(i) for i in range(max(int(lab) for lab in labels) + 1)]
        index = {n: i for i, n in enumerate(names)}
    else:
        names = sorted(set(labels), key=_label_sort_key)
        index = {n: i for i, n in enumerate(names)}
    entries = [ManifestEntry(s, v, p, index[lab]) for _, s, v, p, lab in raw]
    try:
        return DatasetManifest(entries, names, path.parent)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def write_manifest(manifest: DatasetManifest, path: str | Path, label_names: bool = True) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for e in manifest.entries:
            w.writerow([e.subject_id, e.video_id, e.path, manifest.label_names[e.label] if label_names else e.label])
    return path


# --------------------------------------------------------------- enhancement
def histogram_equalization(img: np.ndarray, levels: int = 256) -> np.ndarray:
    """Map each gray level ``v`` to ``round((levels-1) * cdf(v))``.

    The input is rounded and clipped to ``[0, levels-1]`` first. The raw
    CDF is used without subtracting its minimum, so a constant image maps
    to a constant (the top level) rather than dividing by zero.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"histogram equalization needs a single-channel 2-D image, got shape {img.shape}")
    q = np.clip(np.rint(img), 0, levels - 1).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=levels)
    cdf = np.cumsum(hist) / q.size
    lut = np.rint((levels - 1) * cdf)
    return lut[q]


def rotate(img: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate about the image centre with bilinear interpolation and zero fill.

    Positive angles turn the content counter-clockwise as displayed. Output
    shape equals input shape; angle 0 returns an exact copy.
    """
    if not -45 <= angle_degrees <= 45:
        raise ValueError(f"rotation angle must lie in [-45, 45], got {angle_degrees}")
    img = np.asarray(img, dtype=float)
    if angle_degrees == 0:
        return img.copy()
    # axes (1, 0) rotate in the H-W plane for both (H, W) and (H, W, C)
    return ndimage.rotate(img, angle_degrees, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (C, H, W), values in [0, 1]
    label: int
    subject_id: str
    video_id: str = ""
    angle: float = 0.0
    equalized: bool = False

    @property
    def tag(self) -> str:
        return f"rot{self.angle:+g}{'_eq' if self.equalized else ''}"


def _equalize_unit(image: np.ndarray) -> np.ndarray:
    return np.stack([histogram_equalization(ch * 255.0) / 255.0 for ch in image])


def augment(sample: Sample, mode: str = "product") -> list[Sample]:
    """Seven rotations (-45..45 step 15), each raw and equalised in ``product`` mode.

    ``equalize_all`` gives one equalised copy per angle instead of two
    copies. The angle-0 raw copy shares the input's pixels bit for bit.
    """
    if mode not in AUGMENT_MODES:
        raise ValueError(f"augment mode must be one of {AUGMENT_MODES}, got {mode!r}")
    out = []
    for angle in ROTATION_ANGLES:
        if angle == 0:
            rotated = sample.image
        else:
            rotated = np.clip(np.stack([rotate(ch, angle) for ch in sample.image]), 0.0, 1.0)
        if mode == "product":
            out.append(replace(sample, image=rotated, angle=float(angle), equalized=False))
        out.append(replace(sample, image=_equalize_unit(rotated), angle=float(angle), equalized=True))
    return out


# ------------------------------------------------------------------ protocol
@dataclass(frozen=True)
class Fold:
    test_subject: str
    train: list[ManifestEntry]
    test: list[ManifestEntry]


def loso_splits(manifest: DatasetManifest) -> list[Fold]:
    """One fold per subject, in first-appearance order."""
    subjects = manifest.subjects
    if len(subjects) < 2:
        raise ProtocolError(f"leave-one-subject-out needs >= 2 subjects, manifest has {len(subjects)}")
    folds = []
    for s in subjects:
        test = [e for e in manifest.entries if e.subject_id == s]
        train = [e for e in manifest.entries if e.subject_id != s]
        folds.append(Fold(s, train, test))
    return folds


def train_val_split(entries: list, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    n = len(entries)
    order = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(ratio * n + 0.5))
    return [entries[i] for i in order[:k]], [entries[i] for i in order[k:]]


def assert_no_leakage(test_subject: str, train_samples: list[Sample]) -> None:
    leaked = [s.video_id for s in train_samples if s.subject_id == test_subject]
    if leaked:
        raise ProtocolError(f"{len(leaked)} training samples belong to test subject {test_subject}: {leaked[:5]}")


def shuffle_labels(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Permute labels across entries; class counts are preserved."""
    labels = np.array([e.label for e in manifest.entries])
    perm = np.random.default_rng(seed).permutation(len(labels))
    return manifest.with_entries([replace(e, label=int(labels[j])) for e, j in zip(manifest.entries, perm)])


# ----------------------------------------------------------------- synthesis
def _class_centres(num_classes: int, size: int) -> list[tuple[float, float]]:
    radius = 0.27 * size
    c = (size - 1) / 2.0
    return [
        (c - radius * math.cos(2 * math.pi * k / num_classes + 0.3), c + radius * math.sin(2 * math.pi * k / num_classes + 0.3))
        for k in range(num_classes)
    ]


def _base_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=max(1.0, size / 24))
    noise = (noise - noise.min()) / (np.ptp(noise) + 1e-12)
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    face = np.exp(-(((yy - c) / (0.45 * size)) ** 2 + ((xx - c) / (0.38 * size)) ** 2))
    return np.rint(60.0 + 70.0 * noise + 60.0 * face)


def synth_video(
    rng: np.random.Generator, base: np.ndarray, centre: tuple[float, float], direction: float, frames: int
) -> np.ndarray:
    """One uint8-valued video: ``base`` plus a truncated Gaussian blob that drifts and brightens."""
    size = base.shape[0]
    sigma = max(1.0, size / 18)
    reach = int(math.ceil(3 * sigma))
    jitter = rng.uniform(-size / 40, size / 40, size=2)
    amp = rng.uniform(45.0, 75.0)
    drift = size / 20
    yy, xx = np.mgrid[0:size, 0:size]
    cy0, cx0 = centre[0] + jitter[0], centre[1] + jitter[1]
    iy, ix = int(round(cy0)), int(round(cx0))
    window = (np.abs(yy - iy) <= reach + drift) & (np.abs(xx - ix) <= reach + drift)
    out = np.empty((frames, size, size))
    for t in range(frames):
        phase = t / (frames - 1)
        cy = cy0 + drift * phase * math.sin(direction)
        cx = cx0 + drift * phase * math.cos(direction)
        blob = amp * phase * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        out[t] = np.clip(np.rint(base + np.where(window, blob, 0.0)), 0, 255)
    return out


def synth_dataset(
    out_dir: str | Path,
    num_subjects: int = 8,
    videos_per_subject: int = 6,
    num_classes: int = 4,
    frames: int = 8,
    size: int = 32,
    seed: int = 0,
    label_shuffle: bool = False,
) -> DatasetManifest:
    """Write a synthetic micro-motion dataset plus ``manifest.csv`` under ``out_dir``.

    Each subject gets a smooth static face-like texture. Each class moves a
    small blob in its own facial region, so the active images separate the
    classes while the static texture cancels out. Labels rotate with the
    subject index so every class appears across subjects.
    """
    from .io import write_video_frames

    if num_subjects < 1 or videos_per_subject < 1 or num_classes < 1:
        raise ValueError("num_subjects, videos_per_subject and num_classes must be >= 1")
    if frames < 2:
        raise ValueError(f"frames must be >= 2, got {frames}")
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    centres = _class_centres(num_classes, size)
    directions = [2 * math.pi * k / num_classes for k in range(num_classes)]
    names = [f"class{k}" for k in range(num_classes)]
    entries = []
    for s in range(num_subjects):
        subject = f"s{s + 1:02d}"
        base = _base_texture(rng, size)
        for v in range(videos_per_subject):
            label = (v + s) % num_classes
            video = synth_video(rng, base, centres[label], directions[label], frames)
            rel = Path("videos") / subject / f"v{v + 1:02d}"
            write_video_frames(out_dir / rel, video)
            entries.append(ManifestEntry(subject, f"v{v + 1:02d}", rel.as_posix(), label))
    manifest = DatasetManifest(entries, names, out_dir)
    if label_shuffle:
        manifest = shuffle_labels(manifest, seed)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
