"""Shadow-aware shading of DEM crops and its adjoint w.r.t. the coefficients.

One output sample per DEM pixel (orthorectified space).  Radiance is the
cosine-polynomial value itself; shadowed pixels are exactly 0.  The shadow
mask is treated as a constant by the backward pass.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import brdf as _brdf
from .errors import AlignmentError, EmptyDomainError, InvalidInputError
from .photogeom import ViewLightGeometry, view_light_field


def _bilinear(z, rows, cols):
    h, w = z.shape
    i0 = np.clip(np.floor(rows).astype(np.int64), 0, h - 2)
    j0 = np.clip(np.floor(cols).astype(np.int64), 0, w - 2)
    fr = rows - i0
    fc = cols - j0
    top = z[i0, j0] * (1 - fc) + z[i0, j0 + 1] * fc
    bottom = z[i0 + 1, j0] * (1 - fc) + z[i0 + 1, j0 + 1] * fc
    return top * (1 - fr) + bottom * fr


def shadow_mask(dem, sun_dir) -> np.ndarray:
    """Cast shadows by marching each pixel's ray toward the sun.

    Samples are spaced gsd/2 along the 3-D ray.  A pixel is shadowed when a
    sample falls strictly below the bilinear heightfield before the ray
    leaves the crop or climbs above its highest point.
    """
    sun = np.asarray(sun_dir, dtype=np.float64).reshape(3)
    shape = dem.shape
    if sun[2] <= 0:
        return np.ones(shape, dtype=bool)
    z = np.where(dem.valid, dem.elevations, 0.0)
    h, w = shape
    zmax = z.max()
    step = dem.gsd / 2.0
    d_col = sun[0] * step / dem.gsd
    d_row = sun[1] * step / dem.gsd
    d_z = sun[2] * step

    rows0, cols0 = np.indices(shape, dtype=np.float64)
    rows0, cols0, z0 = rows0.ravel(), cols0.ravel(), z.ravel()
    shadow = np.zeros(rows0.size, dtype=bool)
    active = np.arange(rows0.size)
    k = 0
    while active.size:
        k += 1
        r = rows0[active] + k * d_row
        c = cols0[active] + k * d_col
        zr = z0[active] + k * d_z
        inside = (r >= 0) & (r <= h - 1) & (c >= 0) & (c <= w - 1) & (zr <= zmax)
        active, r, c, zr = active[inside], r[inside], c[inside], zr[inside]
        if not active.size:
            break
        hit = zr < _bilinear(z, r, c)
        shadow[active[hit]] = True
        active = active[~hit]
    return shadow.reshape(shape)


@dataclass(frozen=True, eq=False)
class RenderedImage:
    radiance: np.ndarray
    shadow: np.ndarray
    geometry: ViewLightGeometry

    def display(self) -> np.ndarray:
        """Radiance clamped at 0 for viewing/export."""
        return np.maximum(self.radiance, 0.0)

    @property
    def shape(self):
        return self.radiance.shape


def shade(geometry: ViewLightGeometry, shadow, coeffs: "_brdf.CoefficientMap", clamp: bool = False) -> np.ndarray:
    coeffs.check_aligned(geometry.shape)
    value = _brdf.evaluate(coeffs.model, coeffs.values, geometry)
    if clamp:
        value = np.maximum(value, 0.0)
    return np.where(shadow, 0.0, value)


def render(dem, coeffs, camera, sun_dir, clamp: bool = False, geometry=None, shadow=None) -> RenderedImage:
    """Render ``dem`` with per-pixel ``coeffs`` under a camera and a directional sun.

    ``geometry`` and ``shadow`` may be passed in when already computed for
    this (dem, camera, sun) triple.
    """
    if tuple(coeffs.shape) != tuple(dem.shape):
        raise AlignmentError(f"coefficient map {coeffs.shape} not aligned with DEM {dem.shape}")
    if geometry is None:
        geometry = view_light_field(dem, camera, sun_dir)
    if shadow is None:
        shadow = shadow_mask(dem, sun_dir)
    return RenderedImage(shade(geometry, shadow, coeffs, clamp), np.asarray(shadow, dtype=bool), geometry)


def render_many(jobs, workers: int = 1):
    """Render independent (dem, coeffs, camera, sun_dir) jobs, optionally in threads."""
    if workers <= 1:
        return [render(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: render(*job), jobs))


def backward(image_grad, geometry: ViewLightGeometry, model, shadow=None) -> np.ndarray:
    """Adjoint of the shading map: (n_params, H, W) coefficient gradients."""
    g = np.asarray(image_grad, dtype=np.float64)
    if g.shape != geometry.shape:
        raise AlignmentError(f"image gradient {g.shape} not aligned with geometry {geometry.shape}")
    if shadow is not None:
        g = np.where(shadow, 0.0, g)
    return _brdf.grad_coeffs(model, geometry) * g


@dataclass(frozen=True, eq=False)
class LossReport:
    mse: float
    residual: np.ndarray
    n_pixels: int
    mask: np.ndarray

    def image_grad(self) -> np.ndarray:
        """d(mse)/d(rendered radiance)."""
        return 2.0 * self.residual / self.n_pixels


def photometric_loss(rendered, target, valid=None, mask_shadows: bool = True) -> LossReport:
    """Mean squared error over valid (and, by default, unshadowed) pixels."""
    radiance = rendered.radiance if isinstance(rendered, RenderedImage) else np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if radiance.shape != target.shape:
        raise InvalidInputError(f"rendered {radiance.shape} and target {target.shape} differ in shape")
    mask = np.ones(target.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool).copy()
    if mask_shadows and isinstance(rendered, RenderedImage):
        mask &= ~rendered.shadow
    n = int(mask.sum())
    if n == 0:
        raise EmptyDomainError("no pixels left to compare")
    residual = np.where(mask, radiance - target, 0.0)
    return LossReport(float(np.sum(residual**2) / n), residual, n, mask)
