"""Inverse sensing: normals from a tactile image, heights from normals, contact masks."""
from __future__ import annotations

import numpy as np
from scipy import fft, ndimage

from .tactile import HeightMap, LightingModel, NormalMap, TactileImage


class LightingConfigError(ValueError):
    pass


def estimate_ambient(background: TactileImage, lighting: LightingModel) -> np.ndarray:
    """Per-channel ambient level from the zero-contact image.

    The background is a flat gel with normal (0, 0, 1), so its per-channel
    median minus the known flat-gel Lambert term is the ambient level.
    """
    med = np.median(background.pixels.reshape(-1, 3), axis=0)
    flat_cos = np.clip(lighting.directions[:, 2], 0.0, None)
    return med - lighting.intensities * flat_cos


def normals_from_image(img: TactileImage, lighting: LightingModel,
                       background: TactileImage, eps: float = 1e-6) -> NormalMap:
    """Per-pixel Lambertian photometric stereo with colour-multiplexed lights.

    Solves L (rho n) = (I - ambient) / intensity for each pixel. Pixels whose
    response never rises above ambient, pixels with any saturated channel,
    and pixels whose solution points away from the camera get the flat
    normal and are marked invalid in ``NormalMap.valid``.
    """
    if img.pixels.shape != background.pixels.shape:
        raise ValueError(
            f"image {img.pixels.shape} and background {background.pixels.shape} differ in shape")
    L = lighting.directions
    if abs(np.linalg.det(L)) < 1e-9 or not np.isfinite(np.linalg.cond(L)):
        raise LightingConfigError("lighting direction matrix is singular")
    ambient = estimate_ambient(background, lighting)
    pix = img.pixels
    shading = (pix - ambient) / lighting.intensities
    scaled = np.linalg.solve(L, shading.reshape(-1, 3).T).T.reshape(pix.shape)
    norm = np.linalg.norm(scaled, axis=-1, keepdims=True)

    degenerate = np.all(pix <= ambient + eps, axis=-1)
    saturated = np.any(pix >= 1.0 - eps, axis=-1)
    bad = degenerate | saturated | (norm[..., 0] <= eps) | (scaled[..., 2] <= 0)

    normals = np.where(norm > 0, scaled / np.where(norm > 0, norm, 1.0), 0.0)
    normals[bad] = (0.0, 0.0, 1.0)
    return NormalMap(normals, ~bad)


def _neumann_eigenvalues(h: int, w: int) -> np.ndarray:
    ky = 2.0 - 2.0 * np.cos(np.pi * np.arange(h) / h)
    kx = 2.0 - 2.0 * np.cos(np.pi * np.arange(w) / w)
    return ky[:, None] + kx[None, :]


def poisson_from_gradients(p: np.ndarray, q: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Least-squares surface whose forward differences best match (p, q).

    ``p`` and ``q`` are the x (column) and y (row) slopes sampled at pixel
    centres. Forward differences are matched against the trapezoidal mean
    of neighbouring slopes; the normal equations are the Neumann Poisson
    problem, solved exactly with a type-II DCT (the even extension). The
    result has zero mean.
    """
    hgt, wid = p.shape
    px = 0.5 * (p[:, 1:] + p[:, :-1]) * spacing
    qy = 0.5 * (q[1:, :] + q[:-1, :]) * spacing
    # right-hand side is -D^T g, i.e. the discrete divergence
    div = np.zeros((hgt, wid))
    div[:, :-1] += px
    div[:, 1:] -= px
    div[:-1, :] += qy
    div[1:, :] -= qy
    coeff = fft.dctn(div, type=2, norm="ortho")
    lam = _neumann_eigenvalues(hgt, wid)
    lam[0, 0] = 1.0
    coeff = -coeff / lam
    coeff[0, 0] = 0.0
    return fft.idctn(coeff, type=2, norm="ortho")


def boundary_median(depths: np.ndarray) -> float:
    edge = np.concatenate([depths[0, :], depths[-1, :], depths[1:-1, 0], depths[1:-1, -1]])
    return float(np.median(edge))


def integrate_normals(nm: NormalMap, resolution: float = 0.25) -> HeightMap:
    """Heightmap (mm) from a normal field, gauge-fixed to a zero boundary median."""
    n = nm.normals
    if np.any(n[..., 2] <= 0):
        raise ValueError("normals must point toward the camera (nz > 0)")
    p = -n[..., 0] / n[..., 2]
    q = -n[..., 1] / n[..., 2]
    h = poisson_from_gradients(p, q, resolution)
    return HeightMap(h - boundary_median(h), resolution)


def _responding(diff: np.ndarray, threshold: float) -> np.ndarray:
    raw = diff > threshold
    votes = ndimage.uniform_filter(raw.astype(float), size=3, mode="constant") * 9
    return votes > 4.5


def _inner_half(rim: np.ndarray) -> np.ndarray:
    """Enclosed interior of ``rim`` plus the rim pixels nearer to it than to the outside."""
    filled = ndimage.binary_fill_holes(rim)
    enclosed = filled & ~rim
    if not enclosed.any():
        return filled
    to_outside = ndimage.distance_transform_edt(filled)
    to_inside = ndimage.distance_transform_edt(~enclosed)
    return enclosed | (rim & (to_inside <= to_outside))


def contact_mask(img: TactileImage, background: TactileImage, threshold: float) -> np.ndarray:
    """Boolean contact region from difference imaging.

    A pixel responds when its channel-max absolute difference from the
    background exceeds ``threshold``; one 3x3 majority pass removes speckle.
    A flat-bottomed indenter shades like the background inside its rim, so
    regions enclosed by responding pixels are filled. The rim straddles the
    contact edge, so the result is clipped to the inner half of the rim seen
    at the image's own half-maximum response; that clip does not depend on
    ``threshold``, which keeps the mask monotone in it.
    """
    if img.pixels.shape != background.pixels.shape:
        raise ValueError("image and background must have the same shape")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    diff = np.abs(img.pixels - background.pixels).max(axis=-1)
    filled = ndimage.binary_fill_holes(_responding(diff, threshold))
    peak = diff.max()
    if peak <= 0:
        return filled
    return filled & _inner_half(_responding(diff, 0.5 * peak))


def largest_component(mask: np.ndarray) -> int:
    """Pixel count of the largest 8-connected component."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
    if count == 0:
        return 0
    return int(np.bincount(labels.ravel())[1:].max())
