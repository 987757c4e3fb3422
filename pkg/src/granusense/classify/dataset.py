"""Synthetic nine-class tactile corpus and training-time augmentation."""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..imageio import load_image, save_image
from ..simcore import ClearingAction, builtin_medium
from ..tactile import Grid, LightingModel, ShapeSpec, TactileImage, render
from .labels import CLASS_NAMES, ClassLabel

MIN_PER_CLASS = 30
SPLITS = ("Train", "Val", "Test")
MANIFEST_NAME = "manifest.jsonl"


@dataclass
class DatasetConfig:
    per_class: int = 300
    diameter_mm: float = 10.0
    press_depth_mm: tuple = (0.4, 1.2)
    margin_mm: float = 1.0
    sensor_noise: float = 0.01  # per-image sigma drawn from [0, sensor_noise]
    zero_contact_clutter: bool = False
    split_ratio: tuple = (1200, 200, 100)
    width: int = 64
    height: int = 64
    resolution_mm: float = 0.25

    def to_dict(self) -> dict:
        d = asdict(self)
        d["press_depth_mm"] = list(self.press_depth_mm)
        d["split_ratio"] = list(self.split_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for key in ("press_depth_mm", "split_ratio"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height, self.resolution_mm)

    def hash(self, seed: int) -> str:
        blob = json.dumps({"config": self.to_dict(), "seed": seed}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ManifestEntry:
    image: str
    label: str
    pose: dict
    press_depth: float
    seed: int
    split: str
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)

    @property
    def config_hash(self) -> str | None:
        return self.entries[0].config_hash if self.entries else None

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        out = {}
        for e in self.entries:
            out.setdefault(e.label, {s: 0 for s in SPLITS})[e.split] += 1
        return out

    def write(self, path=None):
        path = Path(path) if path else self.root / MANIFEST_NAME
        path.write_text("".join(e.to_json() + "\n" for e in self.entries))
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entries.append(ManifestEntry(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad manifest record: {exc}") from None
        return cls(path.parent, entries)

    def load_split(self, name: str):
        """(images float32 N x H x W x 3, label indices) for one split."""
        rows = self.split(name)
        if not rows:
            return np.zeros((0, 0, 0, 3), np.float32), np.zeros(0, np.int64)
        images = np.stack([load_image(self.root / e.image).pixels for e in rows]).astype(np.float32)
        labels = np.array([CLASS_NAMES.index(e.label) for e in rows], dtype=np.int64)
        return images, labels


def split_sizes(per_class: int, ratio=(1200, 200, 100)) -> tuple:
    total = sum(ratio)
    n_train = int(round(per_class * ratio[0] / total))
    n_val = int(round(per_class * ratio[1] / total))
    return n_train, n_val, per_class - n_train - n_val


def image_seed(seed: int, class_index: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, class_index, index]).generate_state(1)[0])


def sample_scene(label: ClassLabel, rng: np.random.Generator, cfg: DatasetConfig):
    """Random pose and press depth with the whole footprint inside the frame."""
    if label is ClassLabel.ZERO_CONTACT:
        return None
    hx, hy = cfg.grid.half_extent
    radius = cfg.diameter_mm / 2
    reach_x = max(hx - radius - cfg.margin_mm, 0.0)
    reach_y = max(hy - radius - cfg.margin_mm, 0.0)
    lo, hi = cfg.press_depth_mm
    return ShapeSpec(
        kind=label.shape,
        diameter=cfg.diameter_mm,
        x=float(rng.uniform(-reach_x, reach_x)),
        y=float(rng.uniform(-reach_y, reach_y)),
        rotation=float(rng.uniform(0.0, 360.0)),
        press_depth=float(rng.uniform(lo, hi)),
    )


def render_sample(label: ClassLabel, seed: int, cfg: DatasetConfig,
                  lighting: LightingModel | None = None):
    """Render one labelled image; returns (TactileImage, ShapeSpec or None)."""
    rng = np.random.default_rng(seed)
    shape = sample_scene(label, rng, cfg)
    medium = None
    if label.sandy:
        medium = builtin_medium("sand")
    elif label is ClassLabel.ZERO_CONTACT and cfg.zero_contact_clutter and rng.random() < 0.5:
        medium = builtin_medium("rice")
    img = render(shape, medium, ClearingAction.NONE, lighting, seed=seed, grid=cfg.grid)
    pixels = img.pixels
    if cfg.sensor_noise > 0:
        # noise level varies per frame so it cannot act as a class cue
        sigma = rng.uniform(0.0, cfg.sensor_noise)
        pixels = np.clip(pixels + rng.normal(0.0, sigma, pixels.shape), 0.0, 1.0)
    return TactileImage(pixels), shape


def _render_job(args):
    label_value, seed, cfg_dict, light_dict, path = args
    lighting = None if light_dict is None else LightingModel(
        np.array(light_dict["directions"]), np.array(light_dict["intensities"]),
        np.array(light_dict["ambient"]))
    img, _ = render_sample(ClassLabel(label_value), seed, DatasetConfig.from_dict(cfg_dict),
                           lighting)
    save_image(path, img)
    return path


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("GRANUSENSE_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"GRANUSENSE_THREADS must be an integer, got {raw!r}") from None


def generate_dataset(out_dir, per_class: int | None = None, config: DatasetConfig | None = None,
                     seed: int = 0, workers: int = 1,
                     lighting: LightingModel | None = None) -> DatasetManifest:
    """Render and write the corpus plus its manifest under ``out_dir``."""
    cfg = DatasetConfig() if config is None else config
    if per_class is not None:
        cfg = DatasetConfig.from_dict({**cfg.to_dict(), "per_class": per_class})
    if cfg.per_class < MIN_PER_CLASS:
        raise ValueError(f"per_class must be >= {MIN_PER_CLASS}, got {cfg.per_class}")
    root = Path(out_dir)
    chash = cfg.hash(seed)
    n_train, n_val, _ = split_sizes(cfg.per_class, cfg.split_ratio)

    light_dict = None if lighting is None else lighting.to_dict()
    entries, jobs = [], []
    for ci, label in enumerate(ClassLabel):
        folder = root / "images" / label.value
        try:
            folder.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {folder}: {exc}") from exc
        order = np.random.default_rng([seed, ci, 7]).permutation(cfg.per_class)
        split_of = np.empty(cfg.per_class, dtype=object)
        split_of[order[:n_train]] = "Train"
        split_of[order[n_train:n_train + n_val]] = "Val"
        split_of[order[n_train + n_val:]] = "Test"
        for i in range(cfg.per_class):
            s = image_seed(seed, ci, i)
            rel = f"images/{label.value}/{i:05d}.png"
            shape = sample_scene(label, np.random.default_rng(s), cfg)
            pose = ({"x": shape.x, "y": shape.y, "rotation": shape.rotation}
                    if shape else {"x": 0.0, "y": 0.0, "rotation": 0.0})
            entries.append(ManifestEntry(rel, label.value, pose,
                                         shape.press_depth if shape else 0.0,
                                         s, str(split_of[i]), chash))
            jobs.append((label.value, s, cfg.to_dict(), light_dict, str(root / rel)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_render_job, jobs, chunksize=32))
    else:
        for job in jobs:
            try:
                _render_job(job)
            except OSError as exc:
                raise OSError(f"cannot write {job[-1]}: {exc}") from exc

    manifest = DatasetManifest(root, entries)
    try:
        manifest.write()
    except OSError as exc:
        raise OSError(f"cannot write {root / MANIFEST_NAME}: {exc}") from exc
    return manifest


def augment(img, rng: np.random.Generator, min_crop_area: float = 0.85,
            max_rotation: float = 180.0, noise_sigma: float = 0.02):
    """Random crop-and-resize, rotation and per-channel Gaussian noise.

    Accepts a TactileImage or an H x W x C array and returns the same kind.
    The crop keeps at least ``min_crop_area`` of the image and is resized
    back; rotation is uniform in [-max_rotation, max_rotation).
    """
    pixels = img.pixels if isinstance(img, TactileImage) else np.asarray(img)
    h, w = pixels.shape[:2]
    area = rng.uniform(min_crop_area, 1.0) if min_crop_area < 1.0 else 1.0
    scale = math.sqrt(area)
    shift_y = rng.uniform(-1, 1) * (1 - scale) * h / 2
    shift_x = rng.uniform(-1, 1) * (1 - scale) * w / 2
    angle = rng.uniform(-max_rotation, max_rotation) if max_rotation > 0 else 0.0

    out = pixels
    if scale != 1.0 or angle != 0.0:
        theta = math.radians(angle)
        c, s = math.cos(theta), math.sin(theta)
        matrix = scale * np.array([[c, -s], [s, c]])
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        offset = centre + np.array([shift_y, shift_x]) - matrix @ centre
        out = np.stack([
            ndimage.affine_transform(pixels[..., ch], matrix, offset=offset, order=1,
                                     mode="nearest")
            for ch in range(pixels.shape[2])
        ], axis=-1)
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, out.shape)
    out = np.clip(out, 0.0, 1.0).astype(pixels.dtype, copy=False)
    return TactileImage(out) if isinstance(img, TactileImage) else out
