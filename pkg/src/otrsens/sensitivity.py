"""Sensitivity model for complier membership on the A=Z event.

The unidentified probability of being a complier given (A, Z, X, Y) is
modeled as w(a,z,x,y) = I(a=z) * expit(G_z(x,y)) where the score G_z is a
user-chosen linear form with per-arm parameters. gamma(a,z,x) is its mean
over the outcome law given (A=z, Z=z, X=x), computed by Monte Carlo, and
`solve_alpha0` calibrates the intercept so the implied complier fraction
matches an identified target.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

log = logging.getLogger(__name__)

FORMS = ("Y_ONLY", "LINEAR_XY", "PCA1")


@dataclass(frozen=True)
class ArmAlpha:
    """Sensitivity coefficients for one instrument arm."""

    a0: float
    aY: float
    aX: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "aX", np.asarray(self.aX, dtype=float).ravel())


@dataclass(frozen=True)
class SensitivityParams:
    """Per-arm score parameters plus the functional form of G.

    For form PCA1 the (x,y) vector is first projected on `loading` (a unit
    vector fitted by `fit_pca1`) and aY acts as the coefficient of that
    single projected score; aX must be empty.
    """

    form: str
    minus: ArmAlpha
    plus: ArmAlpha
    loading: np.ndarray | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if self.form == "Y_ONLY":
            if self.minus.aX.size or self.plus.aX.size:
                raise ValueError("Y_ONLY form takes no covariate coefficients")
        if self.loading is not None:
            object.__setattr__(
                self, "loading", np.asarray(self.loading, dtype=float).ravel()
            )

    def arm(self, z: int) -> ArmAlpha:
        if z == 1:
            return self.plus
        if z == -1:
            return self.minus
        raise ValueError(f"instrument must be -1 or +1, got {z}")

    # -- JSON config form: {"form": ..., "alpha": {"minus": {...}, "plus": {...}}}

    def to_config(self) -> dict:
        def arm_dict(a: ArmAlpha) -> dict:
            d = {"a0": a.a0, "aY": a.aY}
            if a.aX.size:
                d["aX"] = list(map(float, a.aX))
            return d

        cfg = {
            "form": self.form,
            "alpha": {"minus": arm_dict(self.minus), "plus": arm_dict(self.plus)},
        }
        if self.loading is not None:
            cfg["loading"] = list(map(float, self.loading))
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "SensitivityParams":
        def parse_arm(d: dict) -> ArmAlpha:
            return ArmAlpha(
                a0=float(d["a0"]),
                aY=float(d["aY"]),
                aX=np.asarray(d.get("aX", []), dtype=float),
            )

        loading = cfg.get("loading")
        return SensitivityParams(
            form=cfg["form"],
            minus=parse_arm(cfg["alpha"]["minus"]),
            plus=parse_arm(cfg["alpha"]["plus"]),
            loading=None if loading is None else np.asarray(loading, dtype=float),
        )


def sensitivity_score(params: SensitivityParams, z, x, y):
    """Score G_z(x, y).

    Vectorized: x may be a single vector or an (n, d) matrix, y a scalar, an
    (n,) vector, or an (n, m) matrix of per-row outcome draws.
    """
    arm = params.arm(z)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if params.form == "Y_ONLY":
        return arm.a0 + arm.aY * y
    if params.form == "LINEAR_XY":
        xmat = np.atleast_2d(x)
        if xmat.shape[-1] != arm.aX.shape[0]:
            raise ValueError("covariate dimension does not match alphaX")
        xterm = xmat @ arm.aX
        if x.ndim == 1:
            xterm = xterm[0]
        elif y.ndim == 2:
            xterm = xterm[:, None]
        return arm.a0 + xterm + arm.aY * y
    # PCA1: project (x, y) on the fitted loading
    if params.loading is None:
        raise ValueError("PCA1 form requires fitted loadings (see fit_pca1)")
    load = params.loading
    xmat = np.atleast_2d(x)
    if xmat.shape[-1] != load.shape[0] - 1:
        raise ValueError("covariate dimension does not match PCA loading")
    proj = xmat @ load[:-1]
    if x.ndim == 1:
        proj = proj[0]
    elif y.ndim == 2:
        proj = proj[:, None]
    return arm.a0 + arm.aY * (proj + load[-1] * y)


def complier_weight(params: SensitivityParams, a, z, x, y):
    """w(a,z,x,y) = I(a=z) * expit(G_z(x,y)), in [0,1].

    z is a scalar arm selector; a and y may be arrays (broadcast together).
    """
    z = int(z)
    a = np.asarray(a)
    w = expit(sensitivity_score(params, z, x, y))
    out = np.where(a == z, w, 0.0)
    return float(out) if out.ndim == 0 else out


def gamma_mc(params: SensitivityParams, a, z, x, outcome_sampler, n_mc=5000, rng=None):
    """Monte-Carlo gamma(a,z,x) = E[w | A=a, Z=z, X=x] over the outcome law.

    `outcome_sampler(rng, n)` must return n draws of Y given (A=z, Z=z, X=x).
    Only defined on the A=Z event.
    """
    if a != z:
        raise ValueError("gamma is only defined on the A=Z event")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    y = np.asarray(outcome_sampler(rng, n_mc), dtype=float)
    if y.shape != (n_mc,) or not np.all(np.isfinite(y)):
        raise ValueError("outcome sampler returned invalid draws")
    return float(np.mean(expit(sensitivity_score(params, z, x, y))))


def solve_alpha0(p_s4, p_comply_z, outcome_dist, alphaY_z, tol=1e-12):
    """Intercept alpha0_z such that E[expit(a0 + aY*Y) | A=Z=z] = p_s4/p_comply_z.

    `outcome_dist` is either a two-point law given as (values, probs) with two
    support points (closed-form quadratic branch), or a callable
    `sampler(rng, n)` / array of draws for the continuous branch, solved by
    monotone bisection in a0.
    """
    if not (0.0 < p_s4 <= p_comply_z <= 1.0):
        raise ValueError("need 0 < p_s4 <= p_comply_z <= 1")
    target = p_s4 / p_comply_z
    if target >= 1.0:
        raise ValueError("target complier fraction must be < 1 for a finite a0")

    if isinstance(outcome_dist, tuple) and len(outcome_dist) == 2 \
            and not callable(outcome_dist[0]):
        values = np.asarray(outcome_dist[0], dtype=float)
        probs = np.asarray(outcome_dist[1], dtype=float)
        if values.shape != (2,) or probs.shape != (2,):
            raise ValueError("discrete branch expects a two-point law")
        if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative and sum to 1")
        return _solve_alpha0_two_point(target, values, probs, alphaY_z, tol)

    # continuous branch: draws of Y given A=Z=z
    if callable(outcome_dist):
        rng = np.random.default_rng(0)
        draws = np.asarray(outcome_dist(rng, 200_000), dtype=float)
    else:
        draws = np.asarray(outcome_dist, dtype=float).ravel()
    shifted = alphaY_z * draws

    def mean_weight(a0):
        return float(np.mean(expit(a0 + shifted)))

    lo, hi = -40.0, 40.0
    if not (mean_weight(lo) < target < mean_weight(hi)):
        raise ValueError(
            f"target {target:.6g} outside achievable range "
            f"({mean_weight(lo):.3g}, {mean_weight(hi):.3g})"
        )
    a0 = brentq(lambda t: mean_weight(t) - target, lo, hi, xtol=tol)
    residual = abs(mean_weight(a0) - target)
    if residual > 1e-8:
        raise ValueError(f"bisection failed to converge, residual {residual:.3g}")
    return float(a0)


def _solve_alpha0_two_point(target, values, probs, alphaY, tol):
    """Closed-form branch: quadratic in t = exp(-a0).

    With u_k = exp(-aY*y_k), the calibration equation
       sum_k p_k / (1 + t*u_k) = T
    rearranges to  T*u0*u1*t^2 + (T*(u0+u1) - p0*u1 - p1*u0)*t + (T-1) = 0.
    """
    if alphaY * (values[1] - values[0]) == 0.0:
        # slope zero (or degenerate support): expit(a0) = target directly
        return float(logit(target))
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        try:
            u = np.exp(-alphaY * values)
        except RuntimeWarning as exc:
            raise ValueError(f"overflow in two-point solve: {exc}") from exc
    a = target * u[0] * u[1]
    b = target * (u[0] + u[1]) - probs[0] * u[1] - probs[1] * u[0]
    c = target - 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise ValueError("no real root: target complier fraction unattainable")
    roots = [(-b + np.sqrt(disc)) / (2 * a), (-b - np.sqrt(disc)) / (2 * a)]

    def residual(a0):
        return abs(float(probs @ expit(a0 + alphaY * values)) - target)

    valid = [
        float(-np.log(t)) for t in roots if t > 0 and residual(-np.log(t)) < 1e-8
    ]
    if not valid:
        raise ValueError("no admissible root: target unattainable at this slope")
    if len(valid) > 1:
        log.warning("both quadratic roots admissible; taking larger alpha0")
    return max(valid)


def fit_pca1(dataset):
    """First principal component of the column-standardized (X, Y) matrix.

    Returns a unit-norm loading over (x_1..x_d, y) with the Y entry >= 0 so
    the sign convention is stable across runs.
    """
    mat = np.column_stack([dataset.x, dataset.y])
    n, d = mat.shape
    if n < d + 1:
        raise ValueError("too few rows to fit a principal component")
    sd = mat.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise ValueError("zero-variance column; cannot standardize for PCA")
    std = (mat - mat.mean(axis=0)) / sd
    corr = (std.T @ std) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(corr)
    loading = eigvecs[:, -1]
    if loading[-1] < 0:
        loading = -loading
    return loading / np.linalg.norm(loading)
