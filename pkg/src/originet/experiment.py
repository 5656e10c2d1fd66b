"""End-to-end runs: config files, sample preparation, training and LOSO evaluation.

Config files are flat ``key = value`` text, one setting per line, ``#``
starts a comment. Unknown keys are rejected.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from .active_imaging import active_image, normalize_active
from .activations import ActivationKind
from .data import (
    DatasetManifest,
    ManifestEntry,
    Sample,
    assert_no_leakage,
    augment,
    loso_splits,
    train_val_split,
)
from .errors import ConfigError
from .io import load_video
from .model import Hyper, ModelConfig, TrainResult, build, train

log = logging.getLogger(__name__)

AGGREGATION_NOTE = "micro-averaged: correctly classified test images / all test images, pooled over folds"


@dataclass(frozen=True)
class RunConfig:
    # model
    input_size: int = 128
    input_channels: int = 1
    kernel_small: int = 3
    kernel_large: int = 5
    block_depths: tuple[int, ...] = (16, 32, 64, 96)
    fc_width: int = 128
    augmented: bool = True
    activation: str = "rrelu"
    num_classes: int = 0  # 0: take from the manifest
    # optimisation
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    target_train_acc: float = 0.0  # 0: never stop early
    # data
    ft1_mode: str = "zero"
    abs_diff: bool = False
    grayscale: bool = True
    augment: bool = True
    augment_mode: str = "product"
    train_ratio: float = 0.8

    def model_config(self, num_classes: int | None = None) -> ModelConfig:
        z = self.num_classes or num_classes
        if not z:
            raise ConfigError("num_classes is unset and no manifest supplied it")
        return ModelConfig(
            input_size=self.input_size,
            input_channels=self.input_channels,
            kernel_pair=(self.kernel_small, self.kernel_large),
            block_depths=self.block_depths,
            fc_width=self.fc_width,
            augmented=self.augmented,
            activation=ActivationKind.parse(self.activation),
            num_classes=z,
        )

    def hyper(self) -> Hyper:
        return Hyper(
            lr=self.lr,
            momentum=self.momentum,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            target_train_acc=self.target_train_acc or None,
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["block_depths"] = list(self.block_depths)
        return d


def _coerce(name: str, typ, text: str):
    text = text.strip()
    try:
        if typ is bool or typ == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
        if "tuple" in str(typ):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        return text
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {text!r} as {getattr(typ, '__name__', typ)}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key == "kernel_pair":
            ks = _coerce(key, "tuple", value)
            if len(ks) != 2:
                raise ConfigError(f"line {lineno}: kernel_pair needs two sizes")
            values["kernel_small"], values["kernel_large"] = ks
            continue
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, types[key], value)
    cfg = replace(base or RunConfig(), **values)
    if cfg.ft1_mode not in ("zero", "first_frame"):
        raise ConfigError(f"ft1_mode must be 'zero' or 'first_frame', got {cfg.ft1_mode!r}")
    if cfg.augment_mode not in ("product", "equalize_all"):
        raise ConfigError(f"augment_mode must be 'product' or 'equalize_all', got {cfg.augment_mode!r}")
    return cfg


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    cfg = RunConfig() if path is None else parse_config(Path(path).read_text())
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ samples
def _fit(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img
    return ndimage.zoom(img, (size / img.shape[0], size / img.shape[1]), order=1, grid_mode=True, mode="nearest")


def entry_sample(manifest: DatasetManifest, entry: ManifestEntry, cfg: RunConfig) -> Sample:
    """Active image of one manifest entry, resized to the model input, scaled to [0, 1]."""
    seq = load_video(manifest.resolve(entry), grayscale=cfg.grayscale, subject_id=entry.subject_id, label=entry.label, video_id=entry.video_id)
    img = normalize_active(active_image(seq, cfg.ft1_mode, cfg.abs_diff)).pixels
    chans = [img] if img.ndim == 2 else [img[..., c] for c in range(img.shape[-1])]
    if len(chans) != cfg.input_channels:
        raise ConfigError(f"entry {entry.video_id} gives {len(chans)} channels, config expects input_channels={cfg.input_channels}")
    image = np.clip(np.stack([_fit(ch, cfg.input_size) for ch in chans]) / 255.0, 0.0, 1.0)
    return Sample(image, entry.label, entry.subject_id, entry.video_id)


def stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


def expand(samples: list[Sample], cfg: RunConfig) -> list[Sample]:
    if not cfg.augment:
        return list(samples)
    return [a for s in samples for a in augment(s, cfg.augment_mode)]


# ----------------------------------------------------------------- training
@dataclass
class FitResult:
    result: TrainResult
    n_train: int
    n_val: int
    val_from_train: bool


def fit(train_samples: list[Sample], cfg: RunConfig, num_classes: int, seed: int | None = None, log_fn=None) -> FitResult:
    """Video-level 80:20 split, augment the training part, train a fresh model."""
    seed = cfg.seed if seed is None else seed
    tr, va = train_val_split(train_samples, cfg.train_ratio, seed)
    val_from_train = not va
    if val_from_train:
        va = tr
    tr_aug = expand(tr, cfg)
    model = build(cfg.model_config(num_classes), seed)
    x, y = stack(tr_aug)
    vx, vy = stack(va)
    res = train(model, x, y, vx, vy, replace(cfg.hyper(), seed=seed), log_fn=log_fn)
    return FitResult(res, len(tr_aug), len(va), val_from_train)


# ---------------------------------------------------------------- reporting
@dataclass
class RunReport:
    folds: list[dict[str, Any]]
    mean_accuracy: float
    confusion: list[list[int]]
    label_names: list[str]
    config: dict[str, Any]
    aggregation: str = AGGREGATION_NOTE
    timings: dict[str, float] = field(default_factory=dict)

    def check(self) -> None:
        cm = np.array(self.confusion)
        total = int(cm.sum())
        expected_rows = np.zeros(len(self.label_names), dtype=int)
        for f in self.folds:
            for lab, n in f["class_counts"].items():
                expected_rows[int(lab)] += n
        if not np.array_equal(cm.sum(axis=1), expected_rows):
            raise AssertionError("confusion matrix row sums differ from per-class test counts")
        if total and abs(np.trace(cm) / total - self.mean_accuracy) > 1e-12:
            raise AssertionError("confusion matrix trace/total differs from reported accuracy")

    def to_dict(self, timings: bool = True) -> dict[str, Any]:
        d = {
            "mean_accuracy": self.mean_accuracy,
            "aggregation": self.aggregation,
            "macro_fold_accuracy": float(np.mean([f["accuracy"] for f in self.folds])) if self.folds else 0.0,
            "folds": self.folds,
            "confusion_matrix": self.confusion,
            "label_names": self.label_names,
            "config": self.config,
        }
        if timings:
            d["timings"] = self.timings
        return d

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"


def _run_fold(args) -> dict[str, Any]:
    fold_index, fold, manifest, cfg, samples = args
    t0 = time.perf_counter()
    train_samples = [samples[(e.subject_id, e.video_id)] for e in fold.train]
    test_samples = [samples[(e.subject_id, e.video_id)] for e in fold.test]
    assert_no_leakage(fold.test_subject, expand(train_samples, cfg))
    records: list[dict[str, Any]] = []
    fitted = fit(train_samples, cfg, manifest.num_classes, log_fn=records.append)
    model = fitted.result.model
    tx, ty = stack(test_samples)
    pred = model.predict(tx)
    z = manifest.num_classes
    cm = np.zeros((z, z), dtype=int)
    for t, p in zip(ty, pred):
        cm[t, p] += 1
    counts: dict[str, int] = {}
    for t in ty:
        counts[str(int(t))] = counts.get(str(int(t)), 0) + 1
    return {
        "fold": fold_index,
        "test_subject": fold.test_subject,
        "n_test": int(len(ty)),
        "correct": int((pred == ty).sum()),
        "accuracy": float((pred == ty).mean()),
        "n_train_samples": fitted.n_train,
        "n_val": fitted.n_val,
        "val_from_train": fitted.val_from_train,
        "best_epoch": fitted.result.best_epoch,
        "epochs_run": len(fitted.result.log),
        "class_counts": dict(sorted(counts.items())),
        "predictions": [int(p) for p in pred],
        "_confusion": cm.tolist(),
        "_log": records,
        "_seconds": time.perf_counter() - t0,
    }


def eval_loso(manifest: DatasetManifest, cfg: RunConfig, jobs: int = 1, log_path: str | Path | None = None) -> RunReport:
    """Leave-one-subject-out sweep; one prediction per un-augmented test active image."""
    t0 = time.perf_counter()
    folds = loso_splits(manifest)
    samples = {(e.subject_id, e.video_id): entry_sample(manifest, e, cfg) for e in manifest.entries}
    t_prep = time.perf_counter() - t0
    tasks = [(i, f, manifest, cfg, samples) for i, f in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]

    z = manifest.num_classes
    cm = np.zeros((z, z), dtype=int)
    fold_rows, timings = [], {"prepare_s": round(t_prep, 3)}
    log_lines = []
    for r in results:
        cm += np.array(r.pop("_confusion"))
        for rec in r.pop("_log"):
            log_lines.append(json.dumps({"fold": r["fold"], "test_subject": r["test_subject"], **rec}, sort_keys=True))
        timings[f"fold_{r['fold']}_s"] = round(r.pop("_seconds"), 3)
        fold_rows.append(r)
        log.info("fold %d (%s): %d/%d correct", r["fold"], r["test_subject"], r["correct"], r["n_test"])
    timings["total_s"] = round(time.perf_counter() - t0, 3)
    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + "\n")
    total = int(cm.sum())
    report = RunReport(
        folds=fold_rows,
        mean_accuracy=float(np.trace(cm) / total) if total else 0.0,
        confusion=cm.tolist(),
        label_names=list(manifest.label_names),
        config=cfg.to_dict(),
        timings=timings,
    )
    report.check()
    return report


def strip_timing(obj):
    """Drop wall-clock fields so two reports or logs can be compared byte for byte."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in ("timings", "wall_ms")}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
