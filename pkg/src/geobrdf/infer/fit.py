"""Per-pixel inverse rendering: exact least squares and gradient descent.

All models are linear in their coefficients, so the photometric objective
restricted to one pixel is an ordinary least-squares problem whose design
matrix rows are the basis vectors of the views that see the pixel lit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import brdf as _brdf
from ..brdf import BrdfModel, CoefficientMap
from ..errors import DivergenceError, InvalidInputError, UnderObservedError
from ..photogeom import view_light_field
from ..render import backward, shadow_mask, shade

COND_FALLBACK = 1e8
# first-order methods reach 1e-3 within a few hundred steps below this design condition number
WELL_CONDITIONED = 30.0


@dataclass(frozen=True, eq=False)
class PixelObservations:
    """Observations of one pixel: basis rows (m, P), targets (m,), shadow flags (m,)."""

    basis: np.ndarray
    targets: np.ndarray
    shadow: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.float64).reshape(-1))
        shadow = np.zeros(b.shape[0], bool) if self.shadow is None else np.asarray(self.shadow, bool).reshape(-1)
        object.__setattr__(self, "shadow", shadow)
        if not (b.shape[0] == self.targets.size == shadow.size):
            raise InvalidInputError("basis, targets and shadow flags must have one entry per observation")

    def usable(self):
        keep = ~self.shadow
        return self.basis[keep], self.targets[keep]


@dataclass(frozen=True)
class LsFit:
    coeffs: np.ndarray
    rmse: float
    cond: float
    method: str


def _rank_and_cond(s, shape):
    """Rank (numpy's default tolerance) and 2-norm condition number from singular values."""
    top = s[..., 0]
    tol = top * max(shape) * np.finfo(np.float64).eps
    rank = np.sum(s > tol[..., None], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(s[..., -1] > 0, top / s[..., -1], np.inf)
    return rank, cond


def fit_pixel_ls(obs: PixelObservations, model) -> LsFit:
    """Least-squares coefficients for one pixel.

    Normal equations when the design is well conditioned, QR otherwise.
    """
    model = BrdfModel(model)
    A, y = obs.usable()
    p = model.n_params
    if A.shape[1] != p:
        raise InvalidInputError(f"basis rows have {A.shape[1]} entries, {model.value} needs {p}")
    if A.shape[0] < p:
        raise UnderObservedError(min(A.shape[0], p), p)
    s = np.linalg.svd(A, compute_uv=False)
    rank, cond = _rank_and_cond(s, A.shape)
    if rank < p:
        raise UnderObservedError(rank, p, cond)
    if cond > COND_FALLBACK:
        q, r = np.linalg.qr(A)
        x = np.linalg.solve(r, q.T @ y)
        method = "qr"
    else:
        x = np.linalg.solve(A.T @ A, A.T @ y)
        method = "normal"
    rmse = float(np.sqrt(np.mean((A @ x - y) ** 2)))
    return LsFit(x, rmse, float(cond), method)


@dataclass(eq=False)
class SceneObservations:
    """Stacked per-view quantities for a whole raster.

    basis: (V, P, H, W); targets, shadow, valid: (V, H, W).
    """

    model: BrdfModel
    basis: np.ndarray
    targets: np.ndarray
    shadow: np.ndarray
    valid: np.ndarray
    geometries: list = field(default_factory=list)

    @property
    def shape(self):
        return self.targets.shape[1:]

    @property
    def usable(self):
        return self.valid & ~self.shadow

    def pixel(self, row, col) -> PixelObservations:
        return PixelObservations(self.basis[:, :, row, col], self.targets[:, row, col],
                                 ~self.usable[:, row, col])


def build_observations(dem, views, model) -> SceneObservations:
    """Assemble observations from (camera, sun_dir, target) triples or synth views."""
    model = BrdfModel(model)
    bases, targets, shadows, geoms = [], [], [], []
    for view in views:
        camera, sun, target = (view.camera, view.sun_dir, view.target) if hasattr(view, "camera") else view
        geometry = view_light_field(dem, camera, sun)
        shadows.append(shadow_mask(dem, sun))
        bases.append(_brdf.basis(model, geometry))
        targets.append(np.asarray(target, dtype=np.float64))
        geoms.append(geometry)
    if not bases:
        raise InvalidInputError("at least one view is required")
    valid = np.broadcast_to(dem.valid, (len(bases),) + dem.shape)
    return SceneObservations(model, np.stack(bases), np.stack(targets), np.stack(shadows), valid, geoms)


@dataclass(eq=False)
class MapFit:
    coeffs: CoefficientMap
    observed: np.ndarray  # pixels with a full-rank design
    cond: np.ndarray
    rmse: np.ndarray
    rank: np.ndarray

    @property
    def coverage(self) -> float:
        return float(self.observed.mean())

    def well_conditioned(self, limit=WELL_CONDITIONED):
        return self.observed & (self.cond < limit)


def fit_map_ls(obs: SceneObservations) -> MapFit:
    """Vectorized per-pixel least squares over a whole raster.

    Under-observed pixels get zero coefficients and ``observed = False``
    rather than raising.
    """
    p = obs.model.n_params
    v, _, h, w = obs.basis.shape
    use = obs.usable.reshape(v, -1).T  # (N, V)
    A = obs.basis.reshape(v, p, -1).transpose(2, 0, 1) * use[..., None]  # (N, V, P)
    y = obs.targets.reshape(v, -1).T * use

    n_pix = A.shape[0]
    coeffs = np.zeros((n_pix, p))
    if v < p:
        rank = np.full(n_pix, min(v, p))
        cond = np.full(n_pix, np.inf)
    else:
        s = np.linalg.svd(A, compute_uv=False)
        rank, cond = _rank_and_cond(s, (v, p))
    observed = rank == p
    normal = observed & (cond <= COND_FALLBACK)
    if normal.any():
        An, yn = A[normal], y[normal]
        AtA = np.einsum("nvp,nvq->npq", An, An)
        Aty = np.einsum("nvp,nv->np", An, yn)
        coeffs[normal] = np.linalg.solve(AtA, Aty[..., None])[..., 0]
    for i in np.nonzero(observed & ~normal)[0]:
        q, r = np.linalg.qr(A[i])
        coeffs[i] = np.linalg.solve(r, q.T @ y[i])

    resid = (np.einsum("nvp,np->nv", A, coeffs) - y) * use
    counts = np.maximum(use.sum(axis=1), 1)
    rmse = np.sqrt(np.sum(resid**2, axis=1) / counts)
    return MapFit(
        CoefficientMap(obs.model, coeffs.T.reshape(p, h, w)),
        observed.reshape(h, w),
        cond.reshape(h, w),
        rmse.reshape(h, w),
        rank.reshape(h, w),
    )


def fit_mse(obs: SceneObservations, coeffs) -> float:
    """Photometric MSE of ``coeffs`` over all usable observations."""
    values = coeffs.values if isinstance(coeffs, CoefficientMap) else np.asarray(coeffs)
    pred = np.einsum("vphw,phw->vhw", obs.basis, values)
    use = obs.usable
    return float(np.sum(((pred - obs.targets) * use) ** 2) / max(use.sum(), 1))


@dataclass
class GdConfig:
    steps: int = 500
    learning_rate: float = 0.05
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.9  # short memory: gradients shrink by orders of magnitude on these quadratics
    eps: float = 1e-12
    lr_decay: float = 0.99  # multiplicative, applied every step
    min_lr: float = 1e-6
    init: str = "zeros"  # zeros | random | given
    init_scale: float = 0.5
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class GdResult:
    coeffs: CoefficientMap
    trajectory: list


def loss_and_grad(obs: SceneObservations, values):
    """Multi-view MSE and its gradient through the renderer's adjoint."""
    n = int(obs.usable.sum())
    if n == 0:
        raise InvalidInputError("no usable observations")
    cmap = CoefficientMap(obs.model, values)
    loss = 0.0
    grad = np.zeros_like(values)
    for k, geometry in enumerate(obs.geometries):
        radiance = shade(geometry, obs.shadow[k], cmap)
        resid = np.where(obs.usable[k], radiance - obs.targets[k], 0.0)
        loss += float(np.sum(resid**2))
        grad += backward(2.0 * resid / n, geometry, obs.model, obs.shadow[k])
    return loss / n, grad


def lipschitz_constant(obs: SceneObservations) -> float:
    """Largest Hessian eigenvalue of the multi-view MSE (block diagonal per pixel)."""
    use = obs.usable
    n = int(use.sum())
    A = obs.basis * use[:, None]
    H = np.einsum("vphw,vqhw->hwpq", A, A)
    return 2.0 / n * float(np.max(np.linalg.eigvalsh(H)[..., -1]))


def fit_map_gd(obs: SceneObservations, config: GdConfig | None = None, init=None) -> GdResult:
    """Minimize the multi-view MSE with Adam or fixed-step gradient descent."""
    config = config or GdConfig()
    p = obs.model.n_params
    shape = (p,) + tuple(obs.shape)
    if init is not None:
        x = np.array(init.values if isinstance(init, CoefficientMap) else init, dtype=np.float64)
    elif config.init == "random":
        x = np.random.default_rng(config.seed).normal(0.0, config.init_scale, shape)
    else:
        x = np.zeros(shape)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr = config.learning_rate
    trajectory = []
    rising = 0
    for step in range(1, config.steps + 1):
        loss, g = loss_and_grad(obs, x)
        if trajectory and loss > trajectory[-1]:
            rising += 1
            if rising >= config.patience:
                trajectory.append(loss)
                raise DivergenceError(f"loss rose for {rising} consecutive steps", trajectory)
        else:
            rising = 0
        trajectory.append(loss)
        if config.optimizer == "adam":
            m = config.beta1 * m + (1 - config.beta1) * g
            v = config.beta2 * v + (1 - config.beta2) * g * g
            m_hat = m / (1 - config.beta1**step)
            v_hat = v / (1 - config.beta2**step)
            x = x - lr * m_hat / (np.sqrt(v_hat) + config.eps)
            lr = max(lr * config.lr_decay, config.min_lr)
        else:
            x = x - lr * g
    trajectory.append(loss_and_grad(obs, x)[0])
    return GdResult(CoefficientMap(obs.model, x), trajectory)
