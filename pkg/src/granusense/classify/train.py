"""Mini-batch SGD training, evaluation and single-image prediction."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..tactile import TactileImage
from .dataset import DatasetManifest, augment
from .labels import CLASS_NAMES, ClassLabel
from .model import ModelConfigError, ModelParams, softmax

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    decay_every: int = 3
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    augment: bool = True
    crop: bool = False  # scale jitter erases the size cue between shapes
    rotate: bool = True
    noise_sigma: float = 0.02  # per-image sigma drawn from [0, noise_sigma]
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    def rate(self, epoch: int) -> float:
        """Step schedule: multiply by ``lr_decay`` every ``decay_every`` epochs."""
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    learning_rate: float
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: ModelParams
    history: list = field(default_factory=list)

    def log_csv(self) -> str:
        rows = ["epoch,learning_rate,train_loss,train_accuracy,val_loss,val_accuracy"]
        for h in self.history:
            rows.append(f"{h.epoch},{h.learning_rate!r},{h.train_loss!r},{h.train_accuracy!r},"
                        f"{h.val_loss!r},{h.val_accuracy!r}")
        return "\n".join(rows) + "\n"


def _augment_batch(images, rng, cfg: TrainConfig):
    return np.stack([
        augment(img, rng,
                min_crop_area=0.85 if cfg.crop else 1.0,
                max_rotation=180.0 if cfg.rotate else 0.0,
                noise_sigma=rng.uniform(0.0, cfg.noise_sigma))
        for img in images
    ])


def _score(model: ModelParams, images, labels):
    if len(images) == 0:
        return float("nan"), float("nan")
    probs = model.predict_proba(images)
    loss = -np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)).mean()
    acc = float((probs.argmax(axis=1) == labels).mean())
    return float(loss), acc


def fit(train_x, train_y, cfg: TrainConfig, val_x=None, val_y=None,
        model: ModelParams | None = None) -> TrainResult:
    """Train on in-memory arrays. Deterministic for a fixed seed."""
    dtype = np.dtype(cfg.dtype)
    if model is None:
        model = ModelParams.initialize(seed=cfg.seed, input_shape=train_x.shape[1:], dtype=dtype)
        # standardise each colour channel with training-set statistics
        flat = np.asarray(train_x, dtype=np.float64).reshape(-1, train_x.shape[-1])
        model.input_mean = tuple(float(v) for v in flat.mean(axis=0))
        model.input_scale = tuple(float(max(v, 1e-3)) for v in flat.std(axis=0))
    else:
        model = model.astype(dtype)
    rng = np.random.default_rng([cfg.seed, 1])
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    n = len(train_x)
    for epoch in range(cfg.epochs):
        lr = cfg.rate(epoch)
        order = rng.permutation(n)
        losses, correct = [], 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = train_x[idx]
            if cfg.augment:
                xb = _augment_batch(xb, rng, cfg)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, logits = model.loss_and_grads(xb, train_y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // cfg.batch_size}; "
                    f"learning rate {lr:g} is too high, try lowering it (e.g. halve it)")
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == train_y[idx]).sum())
            if cfg.clip_norm:
                norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                                     for g in grads.values()))
                if norm > cfg.clip_norm:
                    grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            for k, g in grads.items():
                if cfg.weight_decay and k.endswith(".w"):
                    g = g + cfg.weight_decay * model.params[k]
                velocity[k] *= cfg.momentum
                velocity[k] -= lr * g
                model.params[k] += velocity[k]
        train_loss = float(np.sum(losses) / n)
        val_loss, val_acc = (_score(model, val_x, val_y) if val_x is not None
                             else (float("nan"), float("nan")))
        entry = EpochLog(epoch + 1, lr, train_loss, correct / n, val_loss, val_acc)
        history.append(entry)
        log.info("epoch %d lr %.4g loss %.4f acc %.3f val_loss %.4f val_acc %.3f",
                 entry.epoch, lr, train_loss, entry.train_accuracy, val_loss, val_acc)
    model.epochs = cfg.epochs
    model.seed = cfg.seed
    model.extra = {"train_config": cfg.to_dict()}
    return TrainResult(model.astype(np.float64), history)


def train(manifest: DatasetManifest, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    train_x, train_y = manifest.load_split("Train")
    val_x, val_y = manifest.load_split("Val")
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("manifest needs nonempty Train and Val splits")
    return fit(train_x, train_y, cfg, val_x, val_y)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: tuple = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def same_shape_confusion(self) -> float:
        """Share of off-diagonal mass between Clean/Sand variants of one shape."""
        off = self.counts.sum() - np.trace(self.counts)
        if off == 0:
            return float("nan")
        paired = 0
        for i, a in enumerate(self.classes):
            for j, b in enumerate(self.classes):
                if i == j:
                    continue
                la, lb = ClassLabel(a), ClassLabel(b)
                if la.shape is not None and la.shape == lb.shape:
                    paired += self.counts[i, j]
        return float(paired / off)

    def to_csv(self) -> str:
        rows = ["true\\predicted," + ",".join(self.classes)]
        for name, row in zip(self.classes, self.counts):
            rows.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln]
        classes = tuple(lines[0].split(",")[1:])
        counts = np.array([[int(v) for v in ln.split(",")[1:]] for ln in lines[1:]])
        return cls(counts, classes)


def evaluate(model: ModelParams, manifest: DatasetManifest, split: str = "Test") -> ConfusionMatrix:
    images, labels = manifest.load_split(split)
    if len(images) == 0:
        raise ValueError(f"split {split!r} is empty")
    return confusion(model, images, labels)


def confusion(model: ModelParams, images, labels) -> ConfusionMatrix:
    model.check_input(images)
    pred = model.predict_proba(images).argmax(axis=1)
    k = model.n_classes
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, pred), 1)
    return ConfusionMatrix(counts, tuple(model.classes))


def predict(model: ModelParams, img) -> tuple:
    """(label name, confidence) for one image."""
    pixels = img.pixels if isinstance(img, TactileImage) else np.asarray(img)
    if pixels.shape != tuple(model.input_shape):
        h, w, c = model.input_shape
        raise ModelConfigError(
            f"image is {pixels.shape[1]}x{pixels.shape[0]}, model expects {w}x{h} with {c} channels")
    probs = model.predict_proba(pixels[None])[0]
    k = int(np.argmax(probs))
    return model.classes[k], float(probs[k])


def _pattern(model, images):
    """Loss plus the ReLU signs and pool choices that fix the piecewise-linear region."""
    logits, cache = model.forward(images, keep=True)
    return logits, [cache["a1"] > 0, cache["arg1"], cache["a2"] > 0, cache["arg2"],
                    cache["a3"] > 0]


def _same_region(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(model: ModelParams, images, labels, step: float = 1e-3,
                   samples_per_param: int | None = None, seed: int = 0,
                   skipped: dict | None = None) -> dict:
    """Relative error between analytic and central-difference gradients per tensor.

    The error for a tensor is ||g_a - g_n|| / max(||g_a|| + ||g_n||, tiny)
    over the checked entries; ``samples_per_param`` limits the entries
    checked per tensor (all by default). The network is piecewise linear,
    so an entry whose +/- ``step`` perturbation flips a ReLU or changes a
    pooling choice straddles a kink where no derivative exists; such entries
    are skipped (and replaced by further samples when sampling). Skip counts
    are written into ``skipped`` when a dict is passed.
    """
    model = model.astype(np.float64)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    _, grads, _ = model.loss_and_grads(images, labels)
    _, base = _pattern(model, images)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        order = np.arange(flat.size) if samples_per_param is None else rng.permutation(flat.size)
        want = flat.size if samples_per_param is None else min(samples_per_param, flat.size)
        used, numeric, n_skip = [], [], 0
        for i in order:
            if len(used) == want:
                break
            orig = flat[i]
            flat[i] = orig + step
            lp_logits, pat_p = _pattern(model, images)
            flat[i] = orig - step
            lm_logits, pat_m = _pattern(model, images)
            flat[i] = orig
            if not (_same_region(pat_p, base) and _same_region(pat_m, base)):
                n_skip += 1
                continue
            lp = _mean_nll(lp_logits, labels)
            lm = _mean_nll(lm_logits, labels)
            used.append(i)
            numeric.append((lp - lm) / (2 * step))
        if skipped is not None:
            skipped[name] = n_skip
        if not used:
            errors[name] = float("nan")
            continue
        analytic = grads[name].reshape(-1)[np.array(used)]
        numeric = np.array(numeric)
        denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-300)
        errors[name] = float(np.linalg.norm(analytic - numeric) / denom)
    return errors


def _mean_nll(logits, labels):
    probs = softmax(logits)
    return float(-np.log(probs[np.arange(len(labels)), labels]).mean())


def save_history(path, result: TrainResult):
    Path(path).write_text(result.log_csv())
