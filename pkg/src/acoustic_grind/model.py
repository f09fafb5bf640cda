"""PSD regression network: temporal mask + two conv blocks + two dense layers.

Maps a (bins x frames) stacked PSD window to the normal grinding force. Labels
are z-scored with training-split statistics; :meth:`PSDRegNet.predict`
returns newtons.
"""
from __future__ import annotations

import ast
import copy
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, PsdWindow, StreamingEncoder
from .nn.layers import (AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Dropout, Flatten, Layer, Linear,
                        ReLU, Sequential, ShapeError, mse_loss)
from .nn.optim import AdamState, PlateauScheduler, adam_step


class FingerprintError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class TemporalMask(Layer):
    """Learnable diagonal weighting of the time columns, initialised 0 -> 1."""

    kind = "temporal_mask"

    def __init__(self, frames: int, dtype=np.float64):
        super().__init__()
        self.params["mask"] = np.linspace(0.0, 1.0, frames).astype(dtype)

    def forward(self, x, training):
        self.x = x
        return apply_temporal_mask(x, self.params["mask"])

    def backward(self, dout):
        axes = tuple(range(dout.ndim - 1))
        self.grads["mask"] = np.sum(dout * self.x, axis=axes)
        return dout * self.params["mask"]


def apply_temporal_mask(X: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Right-multiply by diag(mask): column j scaled by mask[j]."""
    if X.shape[-1] != mask.shape[0]:
        raise ShapeError(f"mask length {mask.shape[0]} != {X.shape[-1]} columns")
    return X * mask


FINGERPRINT_KEYS = ("bins", "frames", "band_low", "band_high", "control_rate", "sample_rate",
                    "window_seconds")


class PSDRegNet(Sequential):
    def __init__(self, bins: int = 35, frames: int = 40, dropout: float = 0.3, seed: int = 0,
                 fingerprint: dict | None = None, dtype=np.float64):
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        super().__init__([
            TemporalMask(frames, dtype),
            Conv2d(1, 16, 5, padding=1, rng=rng, dtype=dtype),
            BatchNorm2d(16, dtype=dtype),
            ReLU(),
            Conv2d(16, 32, 5, padding=1, rng=rng, dtype=dtype),
            BatchNorm2d(32, dtype=dtype),
            ReLU(),
            AdaptiveAvgPool2d((4, 4)),
            Flatten(),
            Linear(512, 64, rng=rng, dtype=dtype),
            Dropout(dropout, rng=drop_rng),
            ReLU(),
            Linear(64, 1, rng=rng, dtype=dtype),
        ])
        self.bins, self.frames = bins, frames
        self.dtype = dtype
        self.label_mean = 0.0
        self.label_std = 1.0
        self.fingerprint = dict(fingerprint) if fingerprint else {"bins": bins, "frames": frames}
        self.latencies: list[float] = []

    @property
    def mask(self) -> np.ndarray:
        return self.layers[0].params["mask"]

    def _batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim == 2:
            X = X[None]
        if X.ndim == 3:
            X = X[:, None]
        if X.shape[1:] != (1, self.bins, self.frames):
            raise ShapeError(f"expected (B, 1, {self.bins}, {self.frames}) input, got {X.shape}")
        return X

    def forward(self, X: np.ndarray, training: bool = False) -> np.ndarray:
        return super().forward(self._batch(X), training)

    def normalized(self, X: np.ndarray) -> np.ndarray:
        """Eval-mode output in z-score units, one value per window."""
        return self.forward(X, training=False)[:, 0]

    def predict(self, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
        X = self._batch(X)
        out = [self.normalized(X[i:i + batch_size]) for i in range(0, len(X), batch_size)]
        return self.denormalize(np.concatenate(out) if out else np.zeros(0))

    def normalize(self, y):
        return (np.asarray(y, dtype=float) - self.label_mean) / self.label_std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.label_std + self.label_mean

    def check_encoder(self, config: EncoderConfig) -> None:
        """Hard failure when the encoder does not produce what the model was trained on."""
        theirs = config.fingerprint()
        diffs = [f"{k}: model={self.fingerprint.get(k)!r} encoder={theirs[k]!r}"
                 for k in FINGERPRINT_KEYS
                 if k in self.fingerprint and not _same(self.fingerprint[k], theirs[k])]
        if diffs:
            raise FingerprintError("encoder/model mismatch; " + "; ".join(diffs))

    def __call__(self, encoder: StreamingEncoder) -> float:
        return estimate_force(self, encoder.current_input())


def _same(a, b) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(float(a) - float(b)) <= 1e-9 * max(1.0, abs(float(a)))
    return a == b


def estimate_force(model: PSDRegNet, window: PsdWindow) -> float:
    """Force in newtons for one window; records the call latency."""
    t0 = time.perf_counter()
    z = model.normalized(window.X)[0]
    force = float(z * model.label_std + model.label_mean)
    model.latencies.append(time.perf_counter() - t0)
    return force


# --- training --------------------------------------------------------------------

@dataclass
class TrainSettings:
    epochs: int = 18  # 5x less data than the hardware set; more passes recover the step count
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 1e-4
    val_fraction: float = 0.2
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    min_lr: float = 1e-6
    dropout: float = 0.3
    dtype: str = "float32"  # training only; gradient checks run in float64


@dataclass
class TrainingDataset:
    X: np.ndarray  # (m, bins, frames)
    y: np.ndarray  # (m,) newtons
    times: np.ndarray  # (m,) window end times
    recording: np.ndarray  # (m,) recording index
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.X) == len(self.y) == len(self.times) == len(self.recording)):
            raise ValueError("dataset arrays differ in length")
        for r in np.unique(self.recording):
            t = self.times[self.recording == r]
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"timestamps not strictly increasing in recording {r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def chronological_split(dataset: TrainingDataset, val_fraction: float, guard: int):
    """Per recording: first part trains, the trailing block validates.

    ``guard`` windows between the two are dropped so no validation window shares
    a frame with a training window.
    """
    train, val = [], []
    for r in np.unique(dataset.recording):
        idx = np.flatnonzero(dataset.recording == r)
        n_val = int(round(len(idx) * val_fraction))
        cut = len(idx) - n_val
        train.extend(idx[:max(cut - guard, 0)])
        val.extend(idx[cut:])
    return np.array(train, dtype=int), np.array(val, dtype=int)


def _evaluate(model: PSDRegNet, X, z, batch_size=256) -> float:
    pred = np.concatenate([model.normalized(X[i:i + batch_size]) for i in range(0, len(X), batch_size)])
    return float(np.mean((pred - z) ** 2))


def _snapshot(model: PSDRegNet):
    return copy.deepcopy([(l.params, getattr(l, "running_mean", None), getattr(l, "running_var", None))
                          for l in model.layers])


def _restore(model: PSDRegNet, snap) -> None:
    for layer, (params, rm, rv) in zip(model.layers, snap):
        for k, v in params.items():
            layer.params[k][...] = v
        if rm is not None:
            layer.running_mean[...] = rm
            layer.running_var[...] = rv


def train(dataset: TrainingDataset, settings: TrainSettings | None = None, seed: int = 0,
          encoder_config: EncoderConfig | None = None, log=None):
    """Adam + MSE on z-scored labels; returns the best-validation model and its history."""
    settings = settings or TrainSettings()
    dtype = np.dtype(settings.dtype)
    _, bins, frames = dataset.X.shape
    fp = encoder_config.fingerprint() if encoder_config else None
    model = PSDRegNet(bins, frames, dropout=settings.dropout, seed=seed, fingerprint=fp, dtype=dtype)
    train_idx, val_idx = chronological_split(dataset, settings.val_fraction, guard=frames)
    if len(train_idx) == 0 or len(val_idx) < 2:
        raise ValueError("training split empty or validation split smaller than 2")

    y_train = dataset.y[train_idx]
    model.label_mean = float(np.mean(y_train))
    model.label_std = float(np.std(y_train))
    if model.label_std <= 0:
        raise ValueError("training labels are constant")
    X_train = dataset.X[train_idx].astype(dtype)
    X_val = dataset.X[val_idx].astype(dtype)
    z_train = model.normalize(y_train).astype(dtype)
    z_val = model.normalize(dataset.y[val_idx]).astype(dtype)

    opt = AdamState(lr=settings.lr, weight_decay=settings.weight_decay)
    sched = PlateauScheduler(settings.scheduler_factor, settings.scheduler_patience, settings.min_lr)
    named = list(model.named_parameters())
    params = {name: layer.params[p] for name, layer, p in named}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    history = [EpochRecord(0, _evaluate(model, X_train, z_train), _evaluate(model, X_val, z_val), opt.lr)]
    best_val, best = history[0].val_loss, _snapshot(model)
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(X_train))
        losses, weights = [], []
        for start in range(0, len(order), settings.batch_size):
            batch = order[start:start + settings.batch_size]
            if len(batch) < 2:  # batch norm needs two samples
                continue
            pred = model.forward(X_train[batch], training=True)[:, 0]
            loss, dpred = mse_loss(pred, z_train[batch])
            model.backward(dpred[:, None])
            grads = {name: layer.grads[p] for name, layer, p in named}
            adam_step(params, grads, opt)
            losses.append(loss)
            weights.append(len(batch))
        train_loss = float(np.average(losses, weights=weights))
        val_loss = _evaluate(model, X_val, z_val)
        history.append(EpochRecord(epoch, train_loss, val_loss, opt.lr))
        if log:
            log(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f} lr {opt.lr:.2e}")
        if val_loss < best_val:
            best_val, best = val_loss, _snapshot(model)
        sched.step(opt, val_loss)
    _restore(model, best)
    _as_float64(model)
    return model, history


def _as_float64(model: PSDRegNet) -> None:
    """Reduced precision is for training only; inference and checkpoints use float64."""
    for layer in model.layers:
        for k, v in layer.params.items():
            layer.params[k] = v.astype(np.float64)
        if isinstance(layer, BatchNorm2d):
            layer.running_mean = layer.running_mean.astype(np.float64)
            layer.running_var = layer.running_var.astype(np.float64)
    model.dtype = np.float64


def write_history_csv(history: list[EpochRecord], path) -> None:
    lines = ["epoch,train_loss,val_loss,lr"]
    lines += [f"{h.epoch},{h.train_loss:.10g},{h.val_loss:.10g},{h.lr:.10g}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n")


# --- checkpoint ------------------------------------------------------------------
# Layout (little-endian): magic "PSDRNETC", u32 version, u32 fingerprint length,
# fingerprint as UTF-8 "key=value" lines, f64 label mean, f64 label std,
# u32 dropout*1e6, u32 tensor count, then per tensor: u16 name length, name,
# u8 ndim, u32 dims, f64 payload; finally u32 CRC32 of everything before it.

MAGIC = b"PSDRNETC"
VERSION = 1


def _tensors(model: PSDRegNet):
    for name, layer, p in model.named_parameters():
        yield name, layer.params[p]
    for i, layer in enumerate(model.layers):
        if isinstance(layer, BatchNorm2d):
            yield f"{i}.batchnorm2d.running_mean", layer.running_mean
            yield f"{i}.batchnorm2d.running_var", layer.running_var


def save_checkpoint(model: PSDRegNet, path) -> None:
    fp = "\n".join(f"{k}={model.fingerprint[k]!r}" for k in sorted(model.fingerprint)).encode()
    dropout = next(l.p for l in model.layers if isinstance(l, Dropout))
    tensors = list(_tensors(model))
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(fp)) + fp
    out += struct.pack("<ddII", model.label_mean, model.label_std, int(round(dropout * 1e6)),
                       len(tensors))
    for name, arr in tensors:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path, encoder_config: EncoderConfig | None = None) -> PSDRegNet:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted file)")
    pos = len(MAGIC)
    version, fp_len = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    fingerprint = {}
    for line in body[pos:pos + fp_len].decode().splitlines():
        k, v = line.split("=", 1)
        fingerprint[k] = ast.literal_eval(v)
    pos += fp_len
    mean, std, dropout, count = struct.unpack_from("<ddII", body, pos)
    pos += 24
    model = PSDRegNet(int(fingerprint["bins"]), int(fingerprint["frames"]), dropout=dropout / 1e6,
                      fingerprint=fingerprint)
    model.label_mean, model.label_std = mean, std
    targets = dict(_tensors(model))
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).reshape(shape)
        pos += size
        if name not in targets or targets[name].shape != arr.shape:
            raise CheckpointError(f"{path}: unexpected tensor {name} {shape}")
        targets[name][...] = arr
    if encoder_config is not None:
        model.check_encoder(encoder_config)
    return model
