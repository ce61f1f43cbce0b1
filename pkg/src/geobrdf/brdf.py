"""Cosine-polynomial BRDF family and per-pixel coefficient maps.

Every model is linear in its coefficients, so evaluation is a dot product
between the coefficient vector and a model-specific basis built from the
angles; the coefficient gradient is that basis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, InvalidInputError, ModelArityError


class BrdfModel(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"

    @property
    def n_params(self) -> int:
        return _N_PARAMS[self]

    @property
    def formula(self) -> str:
        return _FORMULAS[self]


_N_PARAMS = {
    BrdfModel.M1: 2,
    BrdfModel.M2: 3,
    BrdfModel.M3: 4,
    BrdfModel.M4: 4,
    BrdfModel.M5: 4,
    BrdfModel.M6: 4,
}

_FORMULAS = {
    BrdfModel.M1: "a cos(ti) + b cos(tp)",
    BrdfModel.M2: "a cos(ti) + b cos(tp) + c",
    BrdfModel.M3: "a cos(ti) + b cos(tp) + c cos(ti) cos(tp) + d",
    BrdfModel.M4: "a cos(ti) + b cos(tp) + c cos^2(ti) + d",
    BrdfModel.M5: "a cos(ti) + b cos(tp) + c cos^2(tp) + d",
    BrdfModel.M6: "a cos(th) + b cos(td) + c cos(ph) + d cos(pd)",
}

COEFF_NAMES = ("a", "b", "c", "d")


@dataclass(frozen=True)
class PixelAngles:
    """Angles of a single configuration (radians); handy outside a full raster."""

    theta_i: float = 0.0
    theta_p: float = 0.0
    theta_o: float = 0.0
    theta_h: float = 0.0
    phi_h: float = 0.0
    theta_d: float = 0.0
    phi_d: float = 0.0


def basis(model, angles) -> np.ndarray:
    """Basis functions stacked on a leading axis of length ``n_params``."""
    model = BrdfModel(model)
    if model is BrdfModel.M6:
        ch, cd = np.cos(angles.theta_h), np.cos(angles.theta_d)
        return np.stack([ch, cd, np.cos(angles.phi_h), np.cos(angles.phi_d)])
    ci = np.cos(angles.theta_i)
    cp = np.cos(angles.theta_p)
    one = np.ones_like(ci)
    if model is BrdfModel.M1:
        cols = [ci, cp]
    elif model is BrdfModel.M2:
        cols = [ci, cp, one]
    elif model is BrdfModel.M3:
        cols = [ci, cp, ci * cp, one]
    elif model is BrdfModel.M4:
        cols = [ci, cp, ci * ci, one]
    else:
        cols = [ci, cp, cp * cp, one]
    return np.stack(cols)


def _coeff_array(model, coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim == 0 or c.shape[0] != model.n_params:
        raise ModelArityError(f"{model.value} takes {model.n_params} coefficients, got shape {c.shape}")
    return c


def evaluate(model, coeffs, angles) -> np.ndarray:
    """Reflectance for coefficients of shape (n_params, ...) under ``angles``."""
    model = BrdfModel(model)
    c = _coeff_array(model, coeffs)
    return np.sum(c * basis(model, angles), axis=0)


def grad_coeffs(model, angles) -> np.ndarray:
    """d(reflectance)/d(coefficients); independent of the coefficient values."""
    return basis(model, angles)


def nested_of(model):
    """Largest strict sub-model reached by zeroing trailing coefficients."""
    model = BrdfModel(model)
    if model is BrdfModel.M2:
        return BrdfModel.M1
    if model in (BrdfModel.M3, BrdfModel.M4, BrdfModel.M5):
        return BrdfModel.M2
    return None


def embed_coeffs(sub, coeffs, model):
    """Express a sub-model's coefficients in the parameter vector of ``model``.

    M1 -> M2 appends c = 0; M2 -> M3/M4/M5 maps (a, b, c) to (a, b, 0, c).
    """
    sub, model = BrdfModel(sub), BrdfModel(model)
    c = _coeff_array(sub, coeffs)
    if sub is model:
        return c.copy()
    if nested_of(model) is sub:
        out = np.zeros((model.n_params,) + c.shape[1:])
        if model is BrdfModel.M2:
            out[:2] = c
        else:
            out[:2] = c[:2]
            out[3] = c[2]
        return out
    parent = nested_of(model)
    if parent is not None:
        return embed_coeffs(parent, embed_coeffs(sub, c, parent), model)
    raise InvalidInputError(f"{sub.value} is not nested in {model.value}")


@dataclass(frozen=True, eq=False)
class CoefficientMap:
    """Per-pixel coefficient rasters, shape (n_params, H, W)."""

    model: BrdfModel
    values: np.ndarray

    def __post_init__(self):
        model = BrdfModel(self.model)
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 3 or v.shape[0] != model.n_params:
            raise ModelArityError(f"{model.value} needs {model.n_params} coefficient rasters, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("coefficients must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape[1:]

    @classmethod
    def uniform(cls, model, coeffs, shape) -> "CoefficientMap":
        model = BrdfModel(model)
        c = _coeff_array(model, coeffs)
        return cls(model, np.broadcast_to(c[:, None, None], (model.n_params,) + tuple(shape)))

    def crop(self, spec) -> "CoefficientMap":
        r0, c0, r1, c1 = spec.window()
        return CoefficientMap(self.model, self.values[:, r0:r1, c0:c1])

    def check_aligned(self, shape) -> None:
        if tuple(self.shape) != tuple(shape):
            raise AlignmentError(f"coefficient map {self.shape} not aligned with raster {tuple(shape)}")

    def channel(self, name: str) -> np.ndarray:
        return self.values[COEFF_NAMES.index(name)]

    def negative_fraction(self) -> float:
        return float(np.mean(self.values < 0))
