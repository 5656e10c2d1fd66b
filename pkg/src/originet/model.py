"""OrigiNet: hybrid feature blocks, augmented learning block, softmax head.

Each hybrid block runs two stride-2 convolutions (small and large kernel)
on the same input, activates each branch, sums them elementwise and
batch-normalises the sum::

    block(x) = BN(act(conv_s(x)) + act(conv_l(x)))

After the last block the features are flattened and fed to two parallel
fully connected layers whose outputs are concatenated, then a classifier
layer maps to ``num_classes`` logits and softmax gives probabilities. With
``augmented=False`` a single fully connected layer replaces the pair.
"""
from __future__ import annotations

import copy
import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .activations import ActivationKind, act_backward, act_forward
from .errors import ConfigError, DimensionError, FormatError, NumericError, StateError


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 128
    input_channels: int = 1
    kernel_pair: tuple[int, int] = (3, 5)
    block_depths: tuple[int, ...] = (16, 32, 64, 96)
    fc_width: int = 128
    augmented: bool = True
    activation: ActivationKind = field(default_factory=lambda: ActivationKind("rrelu"))
    num_classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kernel_pair", tuple(int(k) for k in self.kernel_pair))
        object.__setattr__(self, "block_depths", tuple(int(d) for d in self.block_depths))
        if not isinstance(self.activation, ActivationKind):
            object.__setattr__(self, "activation", ActivationKind.parse(str(self.activation)))
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"invalid {name}: {why}")

        if self.input_channels < 1:
            bad("input_channels", f"must be >= 1, got {self.input_channels}")
        if len(self.kernel_pair) != 2:
            bad("kernel_pair", f"need exactly two kernel sizes, got {self.kernel_pair}")
        small, large = self.kernel_pair
        if small < 1 or small % 2 == 0 or large % 2 == 0:
            bad("kernel_pair", f"kernel sizes must be positive and odd, got {self.kernel_pair}")
        if not small < large:
            bad("kernel_pair", f"small kernel must be smaller than large, got {self.kernel_pair}")
        if not self.block_depths or min(self.block_depths) < 1:
            bad("block_depths", f"need at least one positive depth, got {self.block_depths}")
        if any(b <= a for a, b in zip(self.block_depths, self.block_depths[1:])):
            bad("block_depths", f"must be strictly increasing, got {self.block_depths}")
        div = 2 ** len(self.block_depths)
        if self.input_size < div or self.input_size % div:
            bad("input_size", f"{self.input_size} is not divisible by 2^{len(self.block_depths)} = {div}")
        if self.fc_width < 1:
            bad("fc_width", f"must be >= 1, got {self.fc_width}")
        if self.num_classes < 1:
            bad("num_classes", f"must be >= 1, got {self.num_classes}")

    @property
    def final_size(self) -> int:
        return self.input_size >> len(self.block_depths)

    @property
    def feature_length(self) -> int:
        return self.block_depths[-1] * self.final_size**2

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kernel_pair"] = list(self.kernel_pair)
        d["block_depths"] = list(self.block_depths)
        d["activation"] = str(self.activation)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


TINY_CONFIG = ModelConfig(input_size=16, block_depths=(4, 8), fc_width=8, num_classes=3)


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class OrigiNet:
    """Parameters, batch-norm running statistics and the forward/backward pair."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], running: dict[int, T.RunningStats | None] | None = None):
        self.config = config
        self.params = params
        self.running = running if running is not None else {k: None for k in range(len(config.block_depths))}
        self._version = 0

    # ----------------------------------------------------------------- shapes
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return expected_param_shapes(self.config)

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name, shape in self.param_shapes().items():
            if params[name].shape != shape:
                raise DimensionError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = params
        self._version += 1

    def copy(self) -> "OrigiNet":
        m = OrigiNet(self.config, {k: v.copy() for k, v in self.params.items()}, copy.deepcopy(self.running))
        return m

    # ---------------------------------------------------------------- forward
    def forward(self, x: np.ndarray, mode: str = "eval") -> tuple[np.ndarray, dict | None]:
        """Class probabilities ``[N, Z]`` plus the cache for :meth:`backward`.

        Train mode uses batch statistics and updates the running stats; eval
        mode uses the running stats and returns no cache.
        """
        cfg = self.config
        x = np.asarray(x, dtype=float)
        want = (cfg.input_channels, cfg.input_size, cfg.input_size)
        if x.ndim != 4 or x.shape[1:] != want:
            raise DimensionError(f"input batch must be (N, {want[0]}, {want[1]}, {want[2]}), got {x.shape}")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        p = self.params
        act = cfg.activation
        ks, kl = cfg.kernel_pair
        blocks = []
        h = x
        for k in range(len(cfg.block_depths)):
            pre = f"block{k + 1}"
            zs, cols_s = T.conv2d_forward_cols(h, p[f"{pre}.conv_s.kernel"], p[f"{pre}.conv_s.bias"], 2, (ks - 1) // 2)
            zl, cols_l = T.conv2d_forward_cols(h, p[f"{pre}.conv_l.kernel"], p[f"{pre}.conv_l.bias"], 2, (kl - 1) // 2)
            summed = act_forward(act, zs) + act_forward(act, zl)
            y, stats, bn_cache = T.batchnorm_forward(summed, p[f"{pre}.bn.gamma"], p[f"{pre}.bn.beta"], mode, self.running[k])
            if mode == "train":
                self.running[k] = stats
            blocks.append((h, zs, zl, bn_cache, cols_s, cols_l) if mode == "train" else None)
            h = y
        feat = h.reshape(h.shape[0], -1)
        if cfg.augmented:
            fa = T.linear_forward(feat, p["fc_a.weight"], p["fc_a.bias"])
            fb = T.linear_forward(feat, p["fc_b.weight"], p["fc_b.bias"])
            joint = np.concatenate([fa, fb], axis=1)
        else:
            joint = T.linear_forward(feat, p["fc_a.weight"], p["fc_a.bias"])
        logits = T.linear_forward(joint, p["classifier.weight"], p["classifier.bias"])
        probs = T.softmax(logits)
        if mode == "eval":
            return probs, None
        cache = {
            "version": self._version,
            "blocks": blocks,
            "feat_shape": h.shape,
            "feat": feat,
            "joint": joint,
            "probs": probs,
        }
        return probs, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self.forward(x, "eval")
        return probs.argmax(axis=1)

    # --------------------------------------------------------------- backward
    def backward(self, cache: dict | None, labels=None, logits_grad: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Gradients of mean cross-entropy (or of an injected logits gradient)."""
        if cache is None:
            raise StateError("backward needs the cache of a train-mode forward")
        if cache["version"] != self._version:
            raise StateError("cache is stale: parameters changed since the forward pass")
        cfg = self.config
        p = self.params
        if logits_grad is None:
            if labels is None:
                raise ValueError("backward needs labels or logits_grad")
            _, logits_grad = T.cross_entropy_loss(cache["probs"], labels)
        grads: dict[str, np.ndarray] = {}

        g = T.linear_backward(cache["joint"], p["classifier.weight"], logits_grad)
        grads["classifier.weight"], grads["classifier.bias"] = g["weight"], g["bias"]
        djoint = g.input
        feat = cache["feat"]
        if cfg.augmented:
            w = cfg.fc_width
            ga = T.linear_backward(feat, p["fc_a.weight"], djoint[:, :w])
            gb = T.linear_backward(feat, p["fc_b.weight"], djoint[:, w:])
            grads["fc_a.weight"], grads["fc_a.bias"] = ga["weight"], ga["bias"]
            grads["fc_b.weight"], grads["fc_b.bias"] = gb["weight"], gb["bias"]
            dfeat = ga.input + gb.input
        else:
            ga = T.linear_backward(feat, p["fc_a.weight"], djoint)
            grads["fc_a.weight"], grads["fc_a.bias"] = ga["weight"], ga["bias"]
            dfeat = ga.input

        ks, kl = cfg.kernel_pair
        dh = dfeat.reshape(cache["feat_shape"])
        for k in reversed(range(len(cfg.block_depths))):
            pre = f"block{k + 1}"
            h, zs, zl, bn_cache, cols_s, cols_l = cache["blocks"][k]
            gbn = T.batchnorm_backward(bn_cache, dh)
            grads[f"{pre}.bn.gamma"], grads[f"{pre}.bn.beta"] = gbn["gamma"], gbn["beta"]
            dsum = gbn.input
            first = k == 0
            gs = T.conv2d_backward(h, p[f"{pre}.conv_s.kernel"], act_backward(cfg.activation, zs, dsum), 2, (ks - 1) // 2, cols_s, not first)
            gl = T.conv2d_backward(h, p[f"{pre}.conv_l.kernel"], act_backward(cfg.activation, zl, dsum), 2, (kl - 1) // 2, cols_l, not first)
            grads[f"{pre}.conv_s.kernel"], grads[f"{pre}.conv_s.bias"] = gs["kernel"], gs["bias"]
            grads[f"{pre}.conv_l.kernel"], grads[f"{pre}.conv_l.bias"] = gl["kernel"], gl["bias"]
            if not first:
                dh = gs.input + gl.input
        return {name: grads[name] for name in p}

    def loss(self, x: np.ndarray, labels) -> float:
        """Train-mode mean cross-entropy without touching the running stats."""
        saved = dict(self.running)
        probs, _ = self.forward(x, "train")
        self.running = saved
        return T.cross_entropy_loss(probs, labels)[0]

    # ------------------------------------------------------------ description
    def layer_table(self) -> list[tuple[str, str, tuple[int, ...], int]]:
        """``(name, kind, output shape, parameter count)`` per layer."""
        cfg = self.config
        ks, kl = cfg.kernel_pair
        rows = []
        size, depth = cfg.input_size, cfg.input_channels
        for k, d in enumerate(cfg.block_depths, start=1):
            size //= 2
            for tag, kk in (("s", ks), ("l", kl)):
                n = self.params[f"block{k}.conv_{tag}.kernel"].size + d
                rows.append((f"block{k}.conv_{tag}", f"conv {kk}x{kk}/2 {depth}->{d} + {cfg.activation}", (d, size, size), n))
            rows.append((f"block{k}.bn", "sum + batchnorm", (d, size, size), 2 * d))
            depth = d
        fl = cfg.feature_length
        heads = ("fc_a", "fc_b") if cfg.augmented else ("fc_a",)
        for name in heads:
            rows.append((name, f"linear {fl}->{cfg.fc_width}", (cfg.fc_width,), fl * cfg.fc_width + cfg.fc_width))
        joint = cfg.fc_width * len(heads)
        rows.append(("classifier", f"linear {joint}->{cfg.num_classes} + softmax", (cfg.num_classes,), joint * cfg.num_classes + cfg.num_classes))
        return rows


def expected_param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    ks, kl = cfg.kernel_pair
    c = cfg.input_channels
    for k, d in enumerate(cfg.block_depths, start=1):
        shapes[f"block{k}.conv_s.kernel"] = (d, c, ks, ks)
        shapes[f"block{k}.conv_s.bias"] = (d,)
        shapes[f"block{k}.conv_l.kernel"] = (d, c, kl, kl)
        shapes[f"block{k}.conv_l.bias"] = (d,)
        shapes[f"block{k}.bn.gamma"] = (d,)
        shapes[f"block{k}.bn.beta"] = (d,)
        c = d
    fl = cfg.feature_length
    shapes["fc_a.weight"] = (cfg.fc_width, fl)
    shapes["fc_a.bias"] = (cfg.fc_width,)
    joint = cfg.fc_width
    if cfg.augmented:
        shapes["fc_b.weight"] = (cfg.fc_width, fl)
        shapes["fc_b.bias"] = (cfg.fc_width,)
        joint *= 2
    shapes["classifier.weight"] = (cfg.num_classes, joint)
    shapes["classifier.bias"] = (cfg.num_classes,)
    return shapes


def build(config: ModelConfig | None = None, seed: int = 0) -> OrigiNet:
    """He-normal weights (fan-in), zero biases, unit gamma, zero beta."""
    config = config or ModelConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in expected_param_shapes(config).items():
        if name.endswith((".kernel", ".weight")):
            params[name] = _he(rng, shape, int(np.prod(shape[1:])))
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return OrigiNet(config, params)


def param_count(model_or_config: OrigiNet | ModelConfig) -> int:
    if isinstance(model_or_config, OrigiNet):
        return model_or_config.param_count()
    return sum(int(np.prod(s)) for s in expected_param_shapes(model_or_config).values())


# ------------------------------------------------------------------ training
@dataclass(frozen=True)
class Hyper:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    target_train_acc: float | None = None  # stop once an epoch reaches it


@dataclass
class TrainResult:
    model: OrigiNet
    log: list[dict[str, Any]]
    best_epoch: int


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return np.array_split(perm, max(1, -(-n // batch_size)))


def evaluate(model: OrigiNet, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """Eval-mode ``(accuracy, mean loss)``."""
    correct, total_loss = 0, 0.0
    for start in range(0, len(x), batch_size):
        probs, _ = model.forward(x[start : start + batch_size], "eval")
        yb = y[start : start + batch_size]
        loss, _ = T.cross_entropy_loss(probs, yb)
        total_loss += loss * len(yb)
        correct += int((probs.argmax(axis=1) == yb).sum())
    return correct / len(x), total_loss / len(x)


def train(model: OrigiNet, train_x, train_y, val_x, val_y, hyper: Hyper = Hyper(), log_fn=None) -> TrainResult:
    """Seeded mini-batch SGD; returns the parameters of the best validation epoch.

    Epochs are ranked by validation accuracy, ties broken by lower
    validation loss and then by the earlier epoch. ``model`` itself ends
    in the last-epoch state.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_x = np.asarray(val_x, dtype=float)
    val_y = np.asarray(val_y, dtype=np.int64)
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise DimensionError("sample and label counts differ")
    if hyper.epochs < 1 or hyper.batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")

    rng = np.random.default_rng(hyper.seed)
    velocity: dict[str, np.ndarray] = {}
    log: list[dict[str, Any]] = []
    best_key, best_model, best_epoch = None, model.copy(), 0
    for epoch in range(1, hyper.epochs + 1):
        t0 = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for idx in _batches(len(train_x), hyper.batch_size, rng):
            xb, yb = train_x[idx], train_y[idx]
            probs, cache = model.forward(xb, "train")
            loss, dlogits = T.cross_entropy_loss(probs, yb)
            if not np.isfinite(loss):
                raise NumericError(f"training diverged: non-finite loss at epoch {epoch}")
            grads = model.backward(cache, logits_grad=dlogits)
            new_params, velocity = T.sgd_step(model.params, grads, hyper.lr, hyper.momentum, velocity)
            model.set_params(new_params)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
        for p in model.params.values():
            if not np.all(np.isfinite(p)):
                raise NumericError(f"training diverged: non-finite parameters at epoch {epoch}")
        val_acc, val_loss = evaluate(model, val_x, val_y)
        rec = {
            "epoch": epoch,
            "train_loss": loss_sum / len(train_x),
            "train_acc": correct / len(train_x),
            "val_acc": val_acc,
            "val_loss": val_loss,
            "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_model, best_epoch = key, model.copy(), epoch
        if hyper.target_train_acc is not None and rec["train_acc"] >= hyper.target_train_acc:
            break
    return TrainResult(best_model, log, best_epoch)


# ------------------------------------------------------------- serialization
WEIGHTS_MAGIC = b"ORIGINET"
WEIGHTS_VERSION = 1


def _pack_tensors(tensors: list[tuple[str, np.ndarray]]) -> bytes:
    out = bytearray(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(out)


def _unpack_tensors(buf: memoryview, pos: int, where: str) -> tuple[dict[str, np.ndarray], int]:
    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{where}: truncated weight file")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(bytes(take(8 * size)), dtype="<f8").reshape(shape).astype(float)
    return tensors, pos


def serialize(model: OrigiNet) -> bytes:
    """Header, config JSON, parameters, then batch-norm running statistics, then CRC32."""
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    body = bytearray(WEIGHTS_MAGIC + struct.pack("<II", WEIGHTS_VERSION, len(cfg)) + cfg)
    body += _pack_tensors(list(model.params.items()))
    buffers = []
    for k, stats in sorted(model.running.items()):
        if stats is not None:
            buffers.append((f"block{k + 1}.bn.running_mean", stats.mean))
            buffers.append((f"block{k + 1}.bn.running_var", stats.var))
    body += _pack_tensors(buffers)
    return bytes(body) + struct.pack("<I", zlib.crc32(body))


def param_section(data: bytes) -> bytes:
    """The byte range of ``data`` holding header, config and parameters."""
    buf = memoryview(data)
    (cfg_len,) = struct.unpack_from("<I", buf, len(WEIGHTS_MAGIC) + 4)
    start = len(WEIGHTS_MAGIC) + 8 + cfg_len
    _, end = _unpack_tensors(buf, start, "<bytes>")
    return bytes(data[:end])


def deserialize(data: bytes, where: str = "<bytes>", expected: ModelConfig | None = None) -> OrigiNet:
    if len(data) < len(WEIGHTS_MAGIC) + 12:
        raise FormatError(f"{where}: file too short to be a weight file")
    if data[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise FormatError(f"{where}: not an OrigiNet weight file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{where}: checksum mismatch (corrupt or truncated file)")
    buf = memoryview(body)
    version, cfg_len = struct.unpack_from("<II", buf, len(WEIGHTS_MAGIC))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{where}: unsupported format version {version}")
    pos = len(WEIGHTS_MAGIC) + 8
    try:
        cfg = ModelConfig.from_dict(json.loads(bytes(buf[pos : pos + cfg_len]).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise FormatError(f"{where}: unreadable config block: {exc}") from exc
    if expected is not None and cfg != expected:
        raise ConfigError(f"{where}: stored config {cfg.to_dict()} does not match expected {expected.to_dict()}")
    params, pos = _unpack_tensors(buf, pos + cfg_len, where)
    buffers, pos = _unpack_tensors(buf, pos, where)
    if pos != len(buf):
        raise FormatError(f"{where}: {len(buf) - pos} trailing bytes")
    shapes = expected_param_shapes(cfg)
    if list(params) != list(shapes):
        raise FormatError(f"{where}: parameter names do not match the stored config")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise FormatError(f"{where}: {name} has shape {params[name].shape}, config implies {shape}")
    running: dict[int, T.RunningStats | None] = {k: None for k in range(len(cfg.block_depths))}
    for k in running:
        mean = buffers.get(f"block{k + 1}.bn.running_mean")
        var = buffers.get(f"block{k + 1}.bn.running_var")
        if mean is not None and var is not None:
            running[k] = T.RunningStats(mean, var)
    return OrigiNet(cfg, params, running)


def save_weights(model: OrigiNet, path: str | Path) -> Path:
    if not str(path):
        raise OSError("empty weight file path")
    path = Path(path)
    path.write_bytes(serialize(model))
    return path


def load_weights(path: str | Path, expected: ModelConfig | None = None) -> OrigiNet:
    if not str(path):
        raise OSError("empty weight file path")
    path = Path(path)
    return deserialize(path.read_bytes(), str(path), expected)
