"""Forward model of the sensing surface.

Shapes are pressed into a simulated gel to give an indentation heightmap
(mm, positive toward the camera), granular grains are injected, surface
normals are taken by finite differences, and a Lambertian membrane is shaded
under three coloured directional lights.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .simcore import ClearingAction, InteractionMode, MediumSpec, occlusion_fraction

GEL_THICKNESS_MM = 1.5
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
SUPERSAMPLE = 4


class ShapeKind(str, enum.Enum):
    TRIANGLE = "Triangle"
    SQUARE = "Square"
    HEXAGON = "Hexagon"
    CIRCLE = "Circle"


# vertex count and angle of the first vertex (degrees) at zero rotation
_POLYGONS = {
    ShapeKind.TRIANGLE: (3, 90.0),
    ShapeKind.SQUARE: (4, 45.0),
    ShapeKind.HEXAGON: (6, 0.0),
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: ShapeKind
    diameter: float
    x: float = 0.0
    y: float = 0.0
    rotation: float = 0.0
    press_depth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ShapeKind(self.kind))
        if self.diameter <= 0:
            raise ValueError(f"diameter must be > 0, got {self.diameter}")
        if not 0 <= self.press_depth <= GEL_THICKNESS_MM:
            raise ValueError(
                f"press_depth must lie in [0, {GEL_THICKNESS_MM}] mm, got {self.press_depth}")

    @property
    def radius(self) -> float:
        return self.diameter / 2

    def vertices(self) -> np.ndarray:
        n, start = _POLYGONS[self.kind]
        ang = np.deg2rad(start + self.rotation + 360.0 * np.arange(n) / n)
        return np.stack([self.x + self.radius * np.cos(ang),
                         self.y + self.radius * np.sin(ang)], axis=1)

    def area(self) -> float:
        if self.kind is ShapeKind.CIRCLE:
            return math.pi * self.radius ** 2
        n, _ = _POLYGONS[self.kind]
        return 0.5 * n * self.radius ** 2 * math.sin(2 * math.pi / n)

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        if self.kind is ShapeKind.CIRCLE:
            return (px - self.x) ** 2 + (py - self.y) ** 2 <= self.radius ** 2
        verts = self.vertices()
        inside = np.ones(np.broadcast(px, py).shape, dtype=bool)
        for a, b in zip(verts, np.roll(verts, -1, axis=0)):
            # counter-clockwise vertices: interior lies left of every edge
            cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
            inside &= cross >= 0
        return inside


@dataclass(frozen=True)
class Grid:
    width: int = 64
    height: int = 64
    resolution: float = 0.25  # mm per pixel

    def coords(self, supersample: int = 1):
        """Pixel-centre coordinates in mm, origin at the grid centre."""
        step = self.resolution / supersample
        xs = (np.arange(self.width * supersample) + 0.5) * step - self.width * self.resolution / 2
        ys = (np.arange(self.height * supersample) + 0.5) * step - self.height * self.resolution / 2
        return np.meshgrid(xs, ys)

    @property
    def half_extent(self):
        return self.width * self.resolution / 2, self.height * self.resolution / 2


@dataclass
class HeightMap:
    depths: np.ndarray
    resolution: float

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height, self.resolution)


@dataclass
class NormalMap:
    normals: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=float)
        if n.ndim != 3 or n.shape[-1] != 3:
            raise ValueError(f"normals must have shape (H, W, 3), got {n.shape}")
        if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > 1e-6):
            raise ValueError("normals must be unit length")
        if np.any(n[..., 2] <= 0):
            raise ValueError("normals must point toward the camera (nz > 0)")
        self.normals = n
        if self.valid is None:
            self.valid = np.ones(n.shape[:2], dtype=bool)

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]


@dataclass
class TactileImage:
    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LightingModel:
    directions: np.ndarray  # rows: unit light direction for R, G, B
    intensities: np.ndarray
    ambient: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        if d.shape != (3, 3) or np.any(norms == 0):
            raise ValueError("lighting needs three nonzero 3-vectors")
        object.__setattr__(self, "directions", d / norms)
        object.__setattr__(self, "intensities", np.asarray(self.intensities, dtype=float))
        object.__setattr__(self, "ambient", np.broadcast_to(
            np.asarray(self.ambient, dtype=float), (3,)).copy())
        if np.any(self.intensities <= 0):
            raise ValueError("channel intensities must be > 0")

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.directions))

    def check(self, max_condition: float = 100.0):
        if self.condition_number >= max_condition:
            raise ValueError(
                f"light directions are nearly dependent (condition number "
                f"{self.condition_number:.3g} >= {max_condition})")

    @classmethod
    def default(cls, elevation_deg: float = 45.0, intensity: float = 0.8,
                ambient: float = 0.1) -> "LightingModel":
        el = math.radians(elevation_deg)
        dirs = []
        for az_deg in (0.0, 120.0, 240.0):
            az = math.radians(az_deg)
            dirs.append([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        return cls(np.array(dirs), np.full(3, intensity), np.full(3, ambient))

    def to_dict(self) -> dict:
        return {
            "channels": ["R", "G", "B"],
            "directions": self.directions.tolist(),
            "intensities": self.intensities.tolist(),
            "ambient": self.ambient.tolist(),
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LightingModel":
        doc = json.loads(Path(path).read_text())
        return cls(np.array(doc["directions"]), np.array(doc["intensities"]),
                   np.array(doc["ambient"]))


def footprint_coverage(shape: ShapeSpec, grid: Grid, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Fraction of each pixel covered by the shape, by supersampling."""
    px, py = grid.coords(supersample)
    inside = shape.contains(px, py).astype(float)
    return inside.reshape(grid.height, supersample, grid.width, supersample).mean(axis=(1, 3))


def press_shape(shape: ShapeSpec, grid: Grid = Grid(),
                gel_thickness: float = GEL_THICKNESS_MM) -> HeightMap:
    """Indentation left by pressing ``shape`` into the gel.

    The anti-aliased footprint is blurred with a Gaussian whose full width at
    half maximum equals the gel thickness, then scaled by the press depth.
    """
    hx, hy = grid.half_extent
    if abs(shape.x) + shape.radius > hx or abs(shape.y) + shape.radius > hy:
        raise ValueError(
            f"{shape.kind.value} of diameter {shape.diameter} mm at ({shape.x}, {shape.y}) "
            f"does not fit the {2 * hx} x {2 * hy} mm grid")
    if shape.press_depth == 0:
        return HeightMap(np.zeros((grid.height, grid.width)), grid.resolution)
    cover = footprint_coverage(shape, grid)
    sigma_px = gel_thickness * FWHM_TO_SIGMA / grid.resolution
    blurred = ndimage.gaussian_filter(cover, sigma_px, mode="constant", truncate=5.0)
    return HeightMap(shape.press_depth * np.clip(blurred, 0.0, 1.0), grid.resolution)


def contact_footprint(hm: HeightMap) -> np.ndarray:
    """Pixels pressed to at least half the peak indentation."""
    peak = hm.depths.max()
    if peak <= 0:
        return np.zeros(hm.depths.shape, dtype=bool)
    return hm.depths >= 0.5 * peak


def _place_caps(shape, centers_mm, radius_mm, grid: Grid):
    """Max-composited spherical caps of the given radius."""
    px, py = grid.coords()
    bumps = np.zeros(shape)
    for cx, cy in centers_mm:
        rho2 = (px - cx) ** 2 + (py - cy) ** 2
        cap = np.sqrt(np.clip(radius_mm ** 2 - rho2, 0.0, None))
        np.maximum(bumps, cap, out=bumps)
    return bumps


def _ellipse(px, py, cx, cy, a, b, theta):
    c, s = math.cos(theta), math.sin(theta)
    u = (px - cx) * c + (py - cy) * s
    v = -(px - cx) * s + (py - cy) * c
    return (u / a) ** 2 + (v / b) ** 2


def grain_layout(hm: HeightMap, medium: MediumSpec, action, seed: int):
    """Grain geometry for ``add_grains``.

    Returns ``(additive, overwrite, cover)``: an additive bump field, an
    overwrite height field, and the boolean mask where the overwrite applies.
    """
    action = ClearingAction(action)
    grid = hm.grid
    zeros = np.zeros(hm.depths.shape)
    cover = np.zeros(hm.depths.shape, dtype=bool)
    mode = medium.interaction_mode
    if mode is InteractionMode.SLIPS:
        return zeros, zeros.copy(), cover

    rng = np.random.default_rng([seed, 1])
    footprint = contact_footprint(hm)
    px, py = grid.coords()
    res = grid.resolution
    d_mm = medium.grain_diameter * 1000.0

    if mode is InteractionMode.STICKS:
        if not footprint.any():
            return zeros, zeros.copy(), cover
        half_band = d_mm  # band two grain diameters wide, centred on the boundary
        dist_out = ndimage.distance_transform_edt(~footprint) * res
        dist_in = ndimage.distance_transform_edt(footprint) * res
        band = np.where(footprint, dist_in <= half_band, dist_out <= half_band)
        idx = np.flatnonzero(band)
        count = rng.poisson(medium.grain_density * idx.size * res * res)
        picks = rng.choice(idx, size=count, replace=True)
        jitter = rng.uniform(-0.5, 0.5, size=(count, 2)) * res
        centers = np.stack([px.ravel()[picks], py.ravel()[picks]], axis=1) + jitter
        return _place_caps(hm.depths.shape, centers, d_mm / 2, grid), zeros.copy(), cover

    # Blocks: elongated grains lie over the footprint and keep the object off the gel
    a = medium.grain_major * 1000.0 / 2
    b = d_mm / 2
    overwrite = np.zeros(hm.depths.shape)
    if footprint.any():
        target = occlusion_fraction(medium, action, seed) * footprint.sum()
        peak = hm.depths.max()
        idx = np.flatnonzero(footprint)
        for _ in range(400):
            if (cover & footprint).sum() >= target:
                break
            k = rng.choice(idx)
            cx, cy = px.ravel()[k], py.ravel()[k]
            q = _ellipse(px, py, cx, cy, a, b, rng.uniform(0, math.pi))
            inside = q < 1
            np.maximum(overwrite, np.where(inside, peak * np.sqrt(np.clip(1 - q, 0, None)), 0),
                       out=overwrite)
            cover |= inside
    else:
        hx, hy = grid.half_extent
        n_loose = int(rng.integers(1, 3))
        placed = []
        for _ in range(200):
            if len(placed) == n_loose:
                break
            cx = rng.uniform(-hx + a, hx - a)
            cy = rng.uniform(-hy + a, hy - a)
            if any(math.hypot(cx - ox, cy - oy) < 2 * a + 2 * res for ox, oy in placed):
                continue
            placed.append((cx, cy))
            q = _ellipse(px, py, cx, cy, a, b, rng.uniform(0, math.pi))
            inside = q < 1
            np.maximum(overwrite, np.where(inside, 0.5 * b * np.sqrt(np.clip(1 - q, 0, None)), 0),
                       out=overwrite)
            cover |= inside
    return zeros, overwrite, cover


def add_grains(hm: HeightMap, medium: MediumSpec, action=ClearingAction.NONE,
               seed: int = 0) -> HeightMap:
    """Inject grains lodged between the object and the gel.

    Sticks media add spherical-cap bumps along the footprint boundary band
    (never lowering any depth). Blocks media overwrite part of the footprint
    with elongated grain imprints. Slips media leave the map untouched.
    """
    if medium.interaction_mode is InteractionMode.SLIPS:
        return HeightMap(hm.depths.copy(), hm.resolution)
    additive, overwrite, cover = grain_layout(hm, medium, action, seed)
    depths = np.where(cover, overwrite, hm.depths + additive)
    return HeightMap(depths, hm.resolution)


def normals_from_heightmap(hm: HeightMap) -> NormalMap:
    """Unit normals from central differences (one-sided at the borders)."""
    if hm.width < 3 or hm.height < 3:
        raise ValueError("heightmap must be at least 3x3")
    gy, gx = np.gradient(hm.depths, hm.resolution)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n)


def lambert_response(nm: NormalMap, lighting: LightingModel) -> np.ndarray:
    """Unclamped per-channel cosine n . l_c."""
    return nm.normals @ lighting.directions.T


def shade(nm: NormalMap, lighting: LightingModel) -> TactileImage:
    lighting.check()
    cos = np.clip(lambert_response(nm, lighting), 0.0, None)
    img = lighting.ambient + lighting.intensities * cos
    return TactileImage(np.clip(img, 0.0, 1.0))


def is_clamp_free(nm: NormalMap, lighting: LightingModel) -> bool:
    """True when shading never hits the cosine or [0, 1] clamps."""
    cos = lambert_response(nm, lighting)
    img = lighting.ambient + lighting.intensities * cos
    return bool(np.all(cos > 0) and np.all(img < 1) and np.all(img > 0))


def background(lighting: LightingModel, grid: Grid = Grid()) -> TactileImage:
    """Image of the undeformed gel."""
    flat = HeightMap(np.zeros((grid.height, grid.width)), grid.resolution)
    return shade(normals_from_heightmap(flat), lighting)


def render_heightmap(shape: ShapeSpec | None, medium: MediumSpec | None = None,
                     action=ClearingAction.NONE, seed: int = 0,
                     grid: Grid = Grid()) -> HeightMap:
    if shape is None:
        hm = HeightMap(np.zeros((grid.height, grid.width)), grid.resolution)
    else:
        hm = press_shape(shape, grid)
    if medium is not None:
        hm = add_grains(hm, medium, action, seed)
    return hm


def render(shape: ShapeSpec | None, medium: MediumSpec | None = None,
           action=ClearingAction.NONE, lighting: LightingModel | None = None,
           seed: int = 0, grid: Grid = Grid()) -> TactileImage:
    """Press, add grains (when a medium is given), take normals, shade.

    ``shape=None`` renders the zero-contact gel (plus loose grains if a
    Blocks medium is given).
    """
    lighting = LightingModel.default() if lighting is None else lighting
    hm = render_heightmap(shape, medium, action, seed, grid)
    return shade(normals_from_heightmap(hm), lighting)
