"""PNG persistence for tactile images, heightmaps and normal maps."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tactile import HeightMap, NormalMap, TactileImage

HEIGHT_MM_PER_UNIT = 1e-4  # 16-bit range covers 0 .. 6.5535 mm


class ImageDecodeError(ValueError):
    pass


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img: TactileImage):
    Image.fromarray(to_uint8(img.pixels)).save(path, format="PNG")


def load_image(path) -> TactileImage:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from None
    return TactileImage(arr)


def save_heightmap(path, hm: HeightMap):
    """16-bit grayscale PNG plus a ``.json`` sidecar with the unit scale."""
    path = Path(path)
    units = np.round(np.clip(hm.depths, 0.0, None) / HEIGHT_MM_PER_UNIT)
    if units.max(initial=0) > 65535:
        raise ValueError("heightmap exceeds the 16-bit range at 1e-4 mm per unit")
    Image.fromarray(units.astype(np.uint16)).save(path, format="PNG")
    meta = {"mm_per_unit": HEIGHT_MM_PER_UNIT, "resolution_mm_per_pixel": hm.resolution,
            "width": hm.width, "height": hm.height}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_heightmap(path) -> HeightMap:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with Image.open(path) as im:
        units = np.asarray(im, dtype=np.float64)
    return HeightMap(units * meta["mm_per_unit"], meta["resolution_mm_per_pixel"])


def save_normalmap(path, nm: NormalMap):
    """Three-channel PNG with components mapped affinely from [-1, 1] to [0, 255]."""
    rgb = np.round((np.clip(nm.normals, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    Image.fromarray(rgb).save(path, format="PNG")


def load_normalmap(path) -> NormalMap:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    n = rgb / 127.5 - 1.0
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n)
