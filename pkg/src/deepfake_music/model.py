"""Compact residual CNN with hand-written backward pass, Adam, and the training loop.

Layout::

    stem   conv 3->16, 3x3, stride 2, pad 1            + ReLU
    block1 conv 16->32 3x3 s2 -> ReLU -> conv 32->32 3x3 s1, plus 1x1 s2 projection, ReLU
    block2 same pattern 32->64
    global average pool -> affine 64->2

No batch norm, so every gradient can be checked against finite differences.
Class ids: 0 = deepfake, 1 = human. Internally activations are NHWC.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import LABELS, DatasetSplit, ManifestEntry, label_index
from .errors import MalformedHeader, ShapeMismatch

log = logging.getLogger(__name__)

ModelParams = dict[str, np.ndarray]

# name -> shape; weight layout (out, in, kh, kw)
PARAM_SHAPES: dict[str, tuple[int, ...]] = {
    "stem.w": (16, 3, 3, 3), "stem.b": (16,),
    "block1.conv1.w": (32, 16, 3, 3), "block1.conv1.b": (32,),
    "block1.conv2.w": (32, 32, 3, 3), "block1.conv2.b": (32,),
    "block1.proj.w": (32, 16, 1, 1), "block1.proj.b": (32,),
    "block2.conv1.w": (64, 32, 3, 3), "block2.conv1.b": (64,),
    "block2.conv2.w": (64, 64, 3, 3), "block2.conv2.b": (64,),
    "block2.proj.w": (64, 32, 1, 1), "block2.proj.b": (64,),
    "head.w": (2, 64), "head.b": (2,),
}
PARAM_COUNT = sum(int(np.prod(s)) for s in PARAM_SHAPES.values())  # 72,546
MIN_SIDE = 16


def init_model(seed: int, dtype=np.float64) -> ModelParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return params


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return {k: v.astype(dtype) for k, v in params.items()}


# --- layers -----------------------------------------------------------------

def _conv_forward(x, w, b, stride, pad):
    n, h, wd, c = x.shape
    f, _, k, _ = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    # (n, ho, wo, c, k, k) -> (n*ho*wo, k*k*c)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    w2 = w.transpose(0, 2, 3, 1).reshape(f, k * k * c)
    out = (cols @ w2.T + b).reshape(n, ho, wo, f)
    return out, (cols, x.shape, stride, pad, k)


def _conv_backward(dout, w, cache, need_dx=True):
    cols, padded_shape, stride, pad, k = cache
    n, ho, wo, f = dout.shape
    c = w.shape[1]
    d2 = dout.reshape(-1, f)
    w2 = w.transpose(0, 2, 3, 1).reshape(f, -1)
    dw = (d2.T @ cols).reshape(f, k, k, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w2).reshape(n, ho, wo, k, k, c)
    dx = np.zeros(padded_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i: i + (ho - 1) * stride + 1: stride, j: j + (wo - 1) * stride + 1: stride] += dcols[:, :, :, i, j]
    if pad:
        dx = dx[:, pad:-pad, pad:-pad]
    return dx, dw, db


def _block_forward(params, prefix, x, caches):
    a, c1 = _conv_forward(x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"], 2, 1)
    h = np.maximum(a, 0)
    y, c2 = _conv_forward(h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"], 1, 1)
    s, cp = _conv_forward(x, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"], 2, 0)
    z = y + s
    caches[prefix] = (c1, a, c2, cp, z)
    return np.maximum(z, 0)


def _block_backward(params, prefix, dout, caches, grads, need_dx=True):
    c1, a, c2, cp, z = caches[prefix]
    dz = dout * (z > 0)
    dh, grads[f"{prefix}.conv2.w"], grads[f"{prefix}.conv2.b"] = _conv_backward(dz, params[f"{prefix}.conv2.w"], c2)
    da = dh * (a > 0)
    dx1, grads[f"{prefix}.conv1.w"], grads[f"{prefix}.conv1.b"] = _conv_backward(
        da, params[f"{prefix}.conv1.w"], c1, need_dx)
    dxp, grads[f"{prefix}.proj.w"], grads[f"{prefix}.proj.b"] = _conv_backward(
        dz, params[f"{prefix}.proj.w"], cp, need_dx)
    return dx1 + dxp if need_dx else None


def _check_batch(batch: np.ndarray) -> None:
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeMismatch(f"expected a (B, 3, H, W) batch, got {batch.shape}")
    if batch.shape[2] < MIN_SIDE or batch.shape[3] < MIN_SIDE:
        raise ShapeMismatch(f"images must be at least {MIN_SIDE}x{MIN_SIDE}, got {batch.shape[2:]}")


def _forward(params: ModelParams, batch: np.ndarray):
    batch = np.asarray(batch)
    _check_batch(batch)
    dtype = params["head.w"].dtype
    x = np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=dtype)
    caches: dict = {}
    a0, caches["stem"] = _conv_forward(x, params["stem.w"], params["stem.b"], 2, 1)
    h0 = np.maximum(a0, 0)
    h1 = _block_forward(params, "block1", h0, caches)
    h2 = _block_forward(params, "block2", h1, caches)
    pooled = h2.mean(axis=(1, 2))
    logits = pooled @ params["head.w"].T + params["head.b"]
    caches["tail"] = (a0, h2.shape, pooled)
    return logits, caches


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits of shape (B, 2) for a (B, 3, H, W) batch."""
    return _forward(params, batch)[0]


def _labels_array(labels) -> np.ndarray:
    return np.asarray([label_index(l) if isinstance(l, str) else int(l) for l in labels], dtype=np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    y = _labels_array(labels)
    if logits.ndim != 2 or logits.shape[0] != len(y):
        raise ShapeMismatch(f"logits {logits.shape} vs {len(y)} labels")
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def loss_and_grad(params: ModelParams, batch: np.ndarray, labels) -> tuple[float, ModelParams]:
    logits, caches = _forward(params, batch)
    y = _labels_array(labels)
    if len(y) != logits.shape[0]:
        raise ShapeMismatch(f"{logits.shape[0]} images vs {len(y)} labels")
    logp = _log_softmax(logits)
    b = len(y)
    loss = float(-logp[np.arange(b), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads: ModelParams = {}
    a0, h2_shape, pooled = caches["tail"]
    grads["head.w"] = dlogits.T @ pooled
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.w"]
    _, hh, ww, _ = h2_shape
    dh2 = np.broadcast_to(dpooled[:, None, None, :] / (hh * ww), h2_shape)
    dh1 = _block_backward(params, "block2", dh2, caches, grads)
    dh0 = _block_backward(params, "block1", dh1, caches, grads)
    da0 = dh0 * (a0 > 0)
    _, grads["stem.w"], grads["stem.b"] = _conv_backward(da0, params["stem.w"], caches["stem"], need_dx=False)
    return loss, {name: grads[name] for name in PARAM_SHAPES}


def backward(params: ModelParams, batch: np.ndarray, labels) -> ModelParams:
    """Exact gradient of the mean cross-entropy with respect to every parameter."""
    return loss_and_grad(params, batch, labels)[1]


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, **hyper) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **hyper)


def adam_step(state: AdamState, params: ModelParams, grads: ModelParams) -> tuple[ModelParams, AdamState]:
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m, v = {}, {}, {}
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        step = state.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + state.eps)
        new_params[name] = (p - step).astype(p.dtype, copy=False)
    return new_params, replace(state, m=m, v=v, t=t)


# --- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    shuffle: bool = True
    dtype: str = "float32"
    eval_batch: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    epoch: int
    best_val_accuracy: float
    history: list[EpochRecord] = field(default_factory=list)
    last_params: ModelParams | None = None

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(checkpoint_bytes(self))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return parse_checkpoint(Path(path).read_bytes())


FeatureProvider = Callable[[ManifestEntry], np.ndarray]


def _stack(entries: Sequence[ManifestEntry], features: FeatureProvider) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([features(e) for e in entries])
    return images, np.array([label_index(e.label) for e in entries], dtype=np.int64)


def evaluate(params: ModelParams, entries: Sequence[ManifestEntry], features: FeatureProvider,
             batch_size: int = 64) -> tuple[float, float, np.ndarray]:
    """Mean loss, accuracy and predicted class ids over ``entries``."""
    total_loss = 0.0
    preds = []
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        images, y = _stack(chunk, features)
        logits = forward(params, images).astype(np.float64)
        total_loss += cross_entropy(logits, y) * len(chunk)
        preds.append(predicted_class(logits))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    truth = np.array([label_index(e.label) for e in entries], dtype=np.int64)
    accuracy = float((preds == truth).mean()) if len(entries) else 0.0
    return total_loss / max(len(entries), 1), accuracy, preds


def train(cfg: TrainConfig, split: DatasetSplit, features: FeatureProvider,
          start: Checkpoint | None = None) -> Checkpoint:
    """Minibatch Adam on ``split.train``; keeps the parameters with the best validation accuracy.

    With ``start`` given, training continues from its final parameters and optimizer state.
    """
    dtype = np.dtype(cfg.dtype)
    if start is None:
        params = init_model(cfg.seed, dtype)
        adam = AdamState.zeros_like(params, lr=cfg.lr)
    else:
        params = cast_params(start.last_params if start.last_params is not None else start.params, dtype)
        adam = replace(start.adam, m=cast_params(start.adam.m, dtype), v=cast_params(start.adam.v, dtype),
                       lr=cfg.lr)
    train_entries = list(split.train)
    val_entries = list(split.val)
    if not train_entries:
        raise ValueError("training split is empty")

    best_params, best_acc, best_epoch = params, -1.0, 0
    history = []
    for epoch in range(cfg.epochs):
        order = (np.random.default_rng([cfg.seed, epoch]).permutation(len(train_entries))
                 if cfg.shuffle else np.arange(len(train_entries)))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            images, y = _stack([train_entries[i] for i in order[b:b + cfg.batch_size]], features)
            loss, grads = loss_and_grad(params, images, y)
            params, adam = adam_step(adam, params, grads)
            losses.append(loss * len(y))
        train_loss = float(sum(losses) / len(train_entries))
        if val_entries:
            val_loss, val_acc, _ = evaluate(params, val_entries, features, cfg.eval_batch)
        else:
            val_loss, val_acc = float("nan"), 0.0
        history.append(EpochRecord(epoch, train_loss, val_loss, val_acc))
        log.info("epoch %d  train_loss %.4f  val_loss %.4f  val_acc %.3f", epoch, train_loss, val_loss, val_acc)
        if val_acc >= best_acc:
            best_params, best_acc, best_epoch = params, val_acc, epoch
    return Checkpoint(params=best_params, adam=adam, epoch=best_epoch, best_val_accuracy=best_acc,
                      history=history, last_params=params)


def predicted_class(logits: np.ndarray) -> np.ndarray:
    """argmax with ties going to class 0 (deepfake)."""
    logits = np.atleast_2d(logits)
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


@dataclass(frozen=True)
class Prediction:
    label: str
    probabilities: np.ndarray  # indexed by class id


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.atleast_2d(np.asarray(logits, dtype=np.float64))))


def predict_logits(logits: np.ndarray) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64).reshape(1, 2)
    return Prediction(LABELS[int(predicted_class(logits)[0])], softmax(logits)[0])


def predict(params: ModelParams, image) -> Prediction:
    pixels = getattr(image, "pixels", image)
    return predict_logits(forward(params, np.asarray(pixels)[None]))


# --- checkpoint file ------------------------------------------------------------

MAGIC = b"MGCK"
FORMAT_VERSION = 1
_HISTORY_HEADER = "epoch,train_loss,val_loss,val_accuracy"


def _pack_array(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", len(encoded)) + encoded)
    buf.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = []
    arrays += [(f"params/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.last_params is not None:
        arrays += [(f"last/{k}", v) for k, v in ckpt.last_params.items()]
    arrays += [(f"adam.m/{k}", v) for k, v in ckpt.adam.m.items()]
    arrays += [(f"adam.v/{k}", v) for k, v in ckpt.adam.v.items()]
    bits = np.dtype(ckpt.params["head.w"].dtype).itemsize * 8
    scalars = {
        "adam.t": ckpt.adam.t, "adam.lr": ckpt.adam.lr, "adam.beta1": ckpt.adam.beta1,
        "adam.beta2": ckpt.adam.beta2, "adam.eps": ckpt.adam.eps,
        "epoch": ckpt.epoch, "best_val_accuracy": ckpt.best_val_accuracy, "precision_bits": bits,
    }
    arrays += [(f"scalar/{k}", np.asarray(float(v))) for k, v in scalars.items()]

    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(arrays)))
    for name, arr in arrays:
        _pack_array(buf, name, arr)
    lines = [_HISTORY_HEADER] + [f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_accuracy!r}"
                                 for r in ckpt.history]
    text = ("\n".join(lines) + "\n").encode("utf-8")
    buf.write(struct.pack("<I", len(text)) + text)
    return buf.getvalue()


def parse_checkpoint(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise MalformedHeader("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise MalformedHeader(f"unsupported checkpoint version {version}")
    pos = 12
    arrays = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4: pos + 4 + name_len].decode("utf-8")
            pos += 4 + name_len
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
        (text_len,) = struct.unpack_from("<I", data, pos)
        text = data[pos + 4: pos + 4 + text_len].decode("utf-8")
    except (struct.error, ValueError) as exc:
        raise MalformedHeader(f"truncated checkpoint: {exc}") from exc

    scalar = lambda k: float(arrays[f"scalar/{k}"])  # noqa: E731
    dtype = np.float32 if scalar("precision_bits") == 32 else np.float64
    group = lambda prefix: {k.split("/", 1)[1]: v.astype(dtype)  # noqa: E731
                            for k, v in arrays.items() if k.startswith(prefix + "/")}
    adam = AdamState(m=group("adam.m"), v=group("adam.v"), t=int(scalar("adam.t")), lr=scalar("adam.lr"),
                     beta1=scalar("adam.beta1"), beta2=scalar("adam.beta2"), eps=scalar("adam.eps"))
    history = []
    for line in text.strip().splitlines()[1:]:
        e, tl, vl, va = line.split(",")
        history.append(EpochRecord(int(e), float(tl), float(vl), float(va)))
    last = group("last") or None
    return Checkpoint(params=group("params"), adam=adam, epoch=int(scalar("epoch")),
                      best_val_accuracy=scalar("best_val_accuracy"), history=history, last_params=last)
