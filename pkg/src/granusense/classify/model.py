"""Small convolutional classifier with hand-written backpropagation.

Layout is NHWC throughout. Architecture::

    conv3x3(3->8) relu maxpool2 conv3x3(8->16) relu maxpool2
    dense(->128) relu dense(128->9)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .labels import CLASS_NAMES

MAGIC = b"GSNW"
FORMAT_VERSION = 1
HIDDEN = 128


class ModelConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N*H*W, C*9) patches of a zero-padded 3x3 window."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # N, H, W, C, 3, 3
    return win.reshape(n * h * w, c * 9)


def _col2im(cols: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    cols = cols.reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += cols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :]


def conv_forward(x, weight, bias):
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return out.reshape(n, h, w, -1), cols


def conv_backward(dout, cols, x_shape, weight):
    out_ch = weight.shape[0]
    d2 = dout.reshape(-1, out_ch)
    dw = (d2.T @ cols).reshape(weight.shape)
    db = d2.sum(axis=0)
    dx = _col2im(d2 @ weight.reshape(out_ch, -1), x_shape)
    return dx, dw, db


def pool_forward(x):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def pool_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    grad = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(grad, arg[..., None], dout[..., None], axis=-1)
    grad = grad.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return grad.reshape(x_shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    probs = softmax(logits.astype(np.float64))
    n = len(labels)
    loss = -np.log(np.clip(probs[np.arange(n), labels], 1e-300, None)).mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)


PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b")


@dataclass
class ModelParams:
    """Weights and the metadata needed to run them."""

    params: dict
    input_shape: tuple = (64, 64, 3)
    input_mean: tuple = (0.5, 0.5, 0.5)
    input_scale: tuple = (0.25, 0.25, 0.25)
    seed: int = 0
    epochs: int = 0
    classes: tuple = CLASS_NAMES
    extra: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, seed: int = 0, input_shape=(64, 64, 3), conv=(8, 16),
                   hidden: int = HIDDEN, n_classes: int = 9, dtype=np.float64) -> "ModelParams":
        h, w, c = input_shape
        if h % 4 or w % 4:
            raise ModelConfigError(f"input size {h}x{w} must be divisible by 4")
        rng = np.random.default_rng(seed)

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

        c1, c2 = conv
        flat = (h // 4) * (w // 4) * c2
        params = {
            "conv1.w": he((c1, c, 3, 3), c * 9),
            "conv1.b": np.zeros(c1, dtype),
            "conv2.w": he((c2, c1, 3, 3), c1 * 9),
            "conv2.b": np.zeros(c2, dtype),
            "fc1.w": he((flat, hidden), flat),
            "fc1.b": np.zeros(hidden, dtype),
            "fc2.w": (rng.standard_normal((hidden, n_classes)) * np.sqrt(1.0 / hidden)).astype(dtype),
            "fc2.b": np.zeros(n_classes, dtype),
        }
        return cls(params, tuple(input_shape), seed=seed)

    @property
    def n_classes(self) -> int:
        return self.params["fc2.w"].shape[1]

    @property
    def hidden(self) -> int:
        return self.params["fc1.w"].shape[1]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.params.items()},
                           self.input_shape, self.input_mean, self.input_scale,
                           self.seed, self.epochs, self.classes, dict(self.extra))

    def check_input(self, x: np.ndarray):
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            h, w, c = self.input_shape
            raise ModelConfigError(
                f"model expects {h}x{w} images with {c} channels, got "
                f"{x.shape[1]}x{x.shape[2]} with {x.shape[3] if x.ndim > 3 else 1}")

    # -- forward / backward -------------------------------------------------

    def forward(self, images: np.ndarray, keep: bool = False):
        """Logits for a batch of images in [0, 1]; optionally keep the cache."""
        self.check_input(images)
        p = self.params
        dtype = p["conv1.w"].dtype
        mean = np.asarray(self.input_mean, dtype=dtype)
        scale = np.asarray(self.input_scale, dtype=dtype)
        x0 = ((images - mean) / scale).astype(dtype)
        a1, cols1 = conv_forward(x0, p["conv1.w"], p["conv1.b"])
        r1 = np.maximum(a1, 0)
        m1, arg1 = pool_forward(r1)
        a2, cols2 = conv_forward(m1, p["conv2.w"], p["conv2.b"])
        r2 = np.maximum(a2, 0)
        m2, arg2 = pool_forward(r2)
        flat = m2.reshape(len(m2), -1)
        a3 = flat @ p["fc1.w"] + p["fc1.b"]
        r3 = np.maximum(a3, 0)
        logits = r3 @ p["fc2.w"] + p["fc2.b"]
        if not keep:
            return logits
        cache = dict(x0=x0, cols1=cols1, a1=a1, arg1=arg1, m1=m1, cols2=cols2, a2=a2,
                     arg2=arg2, m2=m2, flat=flat, a3=a3, r3=r3)
        return logits, cache

    def backward(self, dlogits: np.ndarray, cache: dict) -> dict:
        p = self.params
        g = {}
        g["fc2.w"] = cache["r3"].T @ dlogits
        g["fc2.b"] = dlogits.sum(axis=0)
        dr3 = dlogits @ p["fc2.w"].T
        da3 = dr3 * (cache["a3"] > 0)
        g["fc1.w"] = cache["flat"].T @ da3
        g["fc1.b"] = da3.sum(axis=0)
        dm2 = (da3 @ p["fc1.w"].T).reshape(cache["m2"].shape)
        dr2 = pool_backward(dm2, cache["arg2"], cache["a2"].shape)
        da2 = dr2 * (cache["a2"] > 0)
        dm1, g["conv2.w"], g["conv2.b"] = conv_backward(da2, cache["cols2"], cache["m1"].shape,
                                                        p["conv2.w"])
        dr1 = pool_backward(dm1, cache["arg1"], cache["a1"].shape)
        da1 = dr1 * (cache["a1"] > 0)
        _, g["conv1.w"], g["conv1.b"] = conv_backward(da1, cache["cols1"], cache["x0"].shape,
                                                      p["conv1.w"])
        return g

    def loss_and_grads(self, images, labels):
        logits, cache = self.forward(images, keep=True)
        loss, dlogits = cross_entropy(logits, labels)
        return loss, self.backward(dlogits, cache), logits

    def predict_proba(self, images: np.ndarray, batch: int = 256) -> np.ndarray:
        out = [softmax(self.forward(images[i:i + batch]).astype(np.float64))
               for i in range(0, len(images), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    # -- persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {
            "input_shape": list(self.input_shape),
            "input_mean": list(self.input_mean),
            "input_scale": list(self.input_scale),
            "seed": self.seed,
            "epochs": self.epochs,
            "classes": list(self.classes),
            "extra": self.extra,
        }
        meta_bytes = json.dumps(meta, sort_keys=True).encode()
        out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta_bytes)), meta_bytes,
               struct.pack("<I", len(PARAM_NAMES))]
        for name in PARAM_NAMES:
            arr = self.params[name]
            nb = name.encode()
            out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in PARAM_NAMES:
            out.append(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return b"".join(out)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelParams":
        if data[:4] != MAGIC:
            raise ModelFormatError("not a granusense weights file (bad magic)")
        try:
            version, meta_len = struct.unpack_from("<HI", data, 4)
            if version != FORMAT_VERSION:
                raise ModelFormatError(f"unsupported weights format version {version}")
            off = 10
            meta = json.loads(data[off:off + meta_len])
            off += meta_len
            (count,) = struct.unpack_from("<I", data, off)
            off += 4
            table = []
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", data, off)
                off += 2
                name = data[off:off + nlen].decode()
                off += nlen
                (ndim,) = struct.unpack_from("<B", data, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", data, off)
                off += 4 * ndim
                table.append((name, shape))
            params = {}
            for name, shape in table:
                size = int(np.prod(shape))
                arr = np.frombuffer(data, dtype="<f8", count=size, offset=off)
                off += 8 * size
                params[name] = arr.reshape(shape).astype(np.float64)
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"truncated or corrupt weights file: {exc}") from None
        if off != len(data):
            raise ModelFormatError(f"{len(data) - off} trailing bytes after payload")
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise ModelFormatError(f"weights file lacks tensors {sorted(missing)}")
        return cls(params, tuple(meta["input_shape"]), tuple(meta["input_mean"]),
                   tuple(meta["input_scale"]),
                   meta["seed"], meta["epochs"], tuple(meta["classes"]), meta.get("extra", {}))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_bytes(Path(path).read_bytes())
