"""Nuisance models: instrument propensity, compliance, outcome densities,
and the derived quantities Q, gamma, delta, theta, kappa.

Misspecification is expressed through covariate masks: a mask is the list of
covariate indices RETAINED by a model, so`[]` reduces the model to its
non-covariate terms (the misspecified-protocol convention). All fits are
hand-rolled maximum likelihood with fixed convergence rules so that runs are
reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .boost import BoostConfig, fit_boosted
from .sensitivity import SensitivityParams, sensitivity_score

PROB_CLIP = 1e-6
MAX_ITER = 100
SCORE_TOL = 1e-8
SEPARATION_NORM = 1e4


def _design(x, mask, with_z=None):
    """Design matrix: intercept, optional z column, masked covariates."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = [np.ones(x.shape[0])]
    if with_z is not None:
        cols.append(np.asarray(with_z, dtype=float))
    if len(mask):
        cols.append(x[:, mask])
    return np.column_stack(cols)


def _clip_probs(p, counter):
    clipped = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    counter[0] += int(np.sum(clipped != p))
    return clipped


class InstrumentModel:
    """Logistic regression for p(Z=1|X) on the masked covariates."""

    def __init__(self, coef, mask):
        self.coef = np.asarray(coef, dtype=float)
        self.mask = list(mask)
        self._clips = [0]

    @property
    def clip_events(self):
        return self._clips[0]

    def prob_z1(self, x):
        eta = _design(x, self.mask) @ self.coef
        return _clip_probs(expit(eta), self._clips)

    def f_z(self, z, x):
        """p(Z=z|x) for z in {-1,+1}; z may be a vector matched to rows."""
        p1 = self.prob_z1(x)
        z = np.asarray(z)
        out = np.where(z == 1, p1, 1.0 - p1)
        return float(out) if out.ndim == 0 else out


def fit_instrument(dataset, mask=(0, 1)):
    """IRLS logistic fit of Z on the masked covariates."""
    dataset.require_both_arms()
    mask = list(mask)
    X = _design(dataset.x, mask)
    t = (dataset.z == 1).astype(float)
    beta = np.zeros(X.shape[1])
    for _ in range(MAX_ITER):
        p = expit(X @ beta)
        score = X.T @ (t - p)
        if np.max(np.abs(score)) < SCORE_TOL:
            break
        w = p * (1.0 - p)
        H = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular information matrix in logistic fit: {exc}")
        beta = beta + step
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise ValueError("separation detected in logistic fit (|beta| > 1e4)")
    return InstrumentModel(beta, mask)


class ComplianceModel:
    """Multinomial logistic p(A|Z,X), reference category A=0.

    Two coefficient vectors (for A=-1 and A=+1) on the design (1, z, x_mask).
    """

    CATEGORIES = (-1, 0, 1)

    def __init__(self, coef_minus, coef_plus, mask):
        self.coef_minus = np.asarray(coef_minus, dtype=float)
        self.coef_plus = np.asarray(coef_plus, dtype=float)
        self.mask = list(mask)
        self._clips = [0]

    @property
    def clip_events(self):
        return self._clips[0]

    def probs(self, z, x):
        """(n,3) array of p(A=a|Z=z,X=x) for a in (-1, 0, +1)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        X = _design(x, self.mask, with_z=z)
        em = np.exp(X @ self.coef_minus)
        ep = np.exp(X @ self.coef_plus)
        denom = 1.0 + em + ep
        p = np.column_stack([em / denom, 1.0 / denom, ep / denom])
        p = _clip_probs(p, self._clips)
        return p / p.sum(axis=1, keepdims=True)

    def f_a(self, a, z, x):
        """p(A=a|Z=z, X=x); a, z vectors matched to rows of x."""
        p = self.probs(z, x)
        a = np.broadcast_to(np.asarray(a), (p.shape[0],))
        idx = a + 1  # -1,0,1 -> 0,1,2
        out = p[np.arange(p.shape[0]), idx]
        return out


def fit_compliance(dataset, mask=(0, 1)):
    """Newton maximum-likelihood multinomial logistic fit of A on (1, z, x)."""
    present = set(np.unique(dataset.a))
    missing = [c for c in ComplianceModel.CATEGORIES if c not in present]
    if missing:
        raise ValueError(f"compliance categories missing from data: {missing}")
    mask = list(mask)
    X = _design(dataset.x, mask, with_z=dataset.z)
    n, p = X.shape
    ym = (dataset.a == -1).astype(float)
    yp = (dataset.a == 1).astype(float)
    beta = np.zeros(2 * p)
    for _ in range(MAX_ITER):
        em = np.exp(X @ beta[:p])
        ep = np.exp(X @ beta[p:])
        denom = 1.0 + em + ep
        pm = em / denom
        pp = ep / denom
        score = np.concatenate([X.T @ (ym - pm), X.T @ (yp - pp)])
        if np.max(np.abs(score)) < SCORE_TOL:
            break
        wmm = pm * (1 - pm)
        wpp = pp * (1 - pp)
        wmp = -pm * pp
        H = np.zeros((2 * p, 2 * p))
        H[:p, :p] = X.T @ (X * wmm[:, None])
        H[p:, p:] = X.T @ (X * wpp[:, None])
        H[:p, p:] = X.T @ (X * wmp[:, None])
        H[p:, :p] = H[:p, p:].T
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular information matrix in multinomial fit: {exc}")
        beta = beta + step
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise ValueError("separation detected in multinomial fit (|beta| > 1e4)")
    return ComplianceModel(beta[:p], beta[p:], mask)


class OutcomeDensityModel:
    """Per-arm normal outcome model for Y | (A=z, Z=z, X): linear mean, constant sd."""

    def __init__(self, coef, sd, mask):
        self.coef = {int(z): np.asarray(c, dtype=float) for z, c in coef.items()}
        self.sd = {int(z): float(s) for z, s in sd.items()}
        self.mask = list(mask)
        for z, s in self.sd.items():
            if not s > 0:
                raise ValueError(f"residual sd must be positive (arm {z})")

    def mean(self, z, x):
        return _design(x, self.mask) @ self.coef[int(z)]

    def sampler(self, z, x):
        """Draws of Y | (A=z, Z=z, X=x) for a single covariate vector."""
        mu = float(self.mean(z, np.atleast_2d(x))[0])
        sd = self.sd[int(z)]
        return lambda rng, n: rng.normal(mu, sd, size=n)


def fit_outcome_density(dataset, mask=(0, 1)):
    """OLS mean and residual sd per arm, on the A=Z rows of that arm."""
    mask = list(mask)
    coef, sd = {}, {}
    for z in (-1, 1):
        sel = (dataset.a == z) & (dataset.z == z)
        n_sel = int(np.sum(sel))
        X = _design(dataset.x[sel], mask)
        if n_sel <= X.shape[1]:
            raise ValueError(f"too few A=Z rows in arm {z} for the outcome fit")
        y = dataset.y[sel]
        b, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ b
        s = float(np.sqrt(resid @ resid / (n_sel - X.shape[1])))
        if not s > 0:
            raise ValueError(f"residual sd must be positive (arm {z})")
        coef[z] = b
        sd[z] = s
    return OutcomeDensityModel(coef, sd, mask)


class KappaModel:
    """Cross-fitted flexible regression of the value pseudo-outcome on (z, x).

    Holds one boosted-ensemble per fold; a training row is predicted by the
    model of its own (held-out) fold, and new points by the fold average.
    """

    def __init__(self, fold_models, fold_of_row, train_pred):
        self.fold_models = fold_models
        self.fold_of_row = np.asarray(fold_of_row, dtype=int)
        self.train_pred = np.asarray(train_pred, dtype=float)

    @staticmethod
    def _features(z, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        return np.column_stack([z, x])

    def predict_new(self, z, x):
        F = self._features(z, x)
        preds = np.stack([m.predict(F) for m in self.fold_models])
        return preds.mean(axis=0)

    def predict_fold(self, k, z, x):
        return self.fold_models[k].predict(self._features(z, x))


def kappa_pseudo_outcome(dataset, ns, params: SensitivityParams):
    """Pseudo-outcome a(z+a)*y*w / (2*gamma*f(a|z,x)) per row (0 off A=Z)."""
    n = dataset.n
    r = np.zeros(n)
    for z in (-1, 1):
        sel = (dataset.a == z) & (dataset.z == z)
        if not np.any(sel):
            continue
        x = dataset.x[sel]
        y = dataset.y[sel]
        w = expit(sensitivity_score(params, z, x, y))
        _, gamma = ns.q_gamma(z, x, params)
        fa = ns.f_a(np.full(x.shape[0], z), np.full(x.shape[0], z), x)
        r[sel] = y * w / (gamma * fa)
    return r


def fit_kappa(dataset, ns, params, k_folds=5, config: BoostConfig = BoostConfig()):
    """K-fold cross-fitted regression of the pseudo-outcome on (z, x)."""
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    n = dataset.n
    folds = np.arange(n) % k_folds
    pseudo = kappa_pseudo_outcome(dataset, ns, params)
    if not np.all(np.isfinite(pseudo)):
        raise ValueError("pseudo-outcome contains non-finite values")
    F = KappaModel._features(dataset.z, dataset.x)
    models = []
    train_pred = np.zeros(n)
    for k in range(k_folds):
        out = folds != k
        if len(np.unique(dataset.z[folds == k])) < 2:
            raise ValueError(f"fold {k} contains a single instrument arm")
        m = fit_boosted(F[out], pseudo[out], config)
        models.append(m)
        train_pred[folds == k] = m.predict(F[folds == k])
    return KappaModel(models, folds, train_pred)


@dataclass
class NuisanceSet:
    """Bundle of fitted nuisances with shared Monte-Carlo outcome draws.

    `outcome` drives gamma (and Q unless a separate, possibly misspecified,
    `outcome_q` is supplied — the misspecified-Q protocol corrupts only the
    Q numerator model while gamma keeps the correct density). The standard-
    normal draw panel `mc_eps` is shared across rows, arms, and the Q/gamma
    pair, so delta = Q/gamma is internally consistent and variance-reduced.
    """

    instrument: InstrumentModel
    compliance: ComplianceModel
    outcome: OutcomeDensityModel
    outcome_q: OutcomeDensityModel | None = None
    kappa: KappaModel | None = None
    n_mc: int = 5000
    mc_seed: int = 0
    mc_eps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mc_eps is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.mc_seed))
            self.mc_eps = rng.standard_normal(self.n_mc)
        else:
            self.mc_eps = np.asarray(self.mc_eps, dtype=float)
            self.n_mc = self.mc_eps.shape[0]

    # -- plain model lookups ------------------------------------------------

    def f_z(self, z, x):
        return self.instrument.f_z(z, x)

    def f_a(self, a, z, x):
        return self.compliance.f_a(a, z, x)

    # -- Q / gamma / delta / theta with shared draws ------------------------

    def q_gamma(self, z, x, params):
        """Vectors (Q(z,z,x_i), gamma(z,z,x_i)) over rows of x.

        gamma always integrates against `outcome`; Q against `outcome_q`
        when present. Both reuse the same eps panel. An outcome model may
        expose exact_moments(params, z, x) -> (Q, gamma) to bypass Monte
        Carlo entirely (discrete laws admit closed forms).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        gamma = self._mc_mean_w(self.outcome, params, z, x, want_q=False)
        q_model = self.outcome_q if self.outcome_q is not None else self.outcome
        q = self._mc_mean_w(q_model, params, z, x, want_q=True)
        return q, gamma

    # rows per Monte-Carlo block; keeps the n x n_mc panels bounded in memory
    MC_BLOCK_ROWS = 2048

    def _mc_mean_w(self, model, params, z, x, want_q):
        exact = getattr(model, "exact_moments", None)
        if exact is not None:
            q, gamma = exact(params, z, x)
            return np.asarray(q if want_q else gamma, dtype=float)
        mu = model.mean(z, x)
        sd = model.sd[int(z)]
        out = np.empty(mu.shape[0])
        for lo in range(0, mu.shape[0], self.MC_BLOCK_ROWS):
            hi = lo + self.MC_BLOCK_ROWS
            y = mu[lo:hi, None] + sd * self.mc_eps[None, :]
            w = expit(sensitivity_score(params, z, x[lo:hi], y))
            out[lo:hi] = (y * w).mean(axis=1) if want_q else w.mean(axis=1)
        return out

    def delta(self, z, x, params):
        q, gamma = self.q_gamma(z, x, params)
        if np.any(gamma < 1e-12):
            raise ValueError("gamma underflow (< 1e-12); delta undefined")
        return q / gamma

    def theta(self, z, x, params):
        # a(a+z) = 2*I(a=z) collapses the defining sum to delta(z,z,x)
        return self.delta(z, x, params)


def estimate_Q(ns: NuisanceSet, params, a, z, x, rng=None):
    """Q(a,z,x) = E[Y w | A=a, Z=z, X=x]; 0 off the A=Z event.

    With `rng` supplied, fresh draws are used; otherwise the shared eps panel.
    """
    if a != z:
        return 0.0
    x = np.atleast_2d(np.asarray(x, dtype=float))
    model = ns.outcome_q if ns.outcome_q is not None else ns.outcome
    if rng is not None:
        mu = float(model.mean(z, x)[0])
        sd = model.sd[int(z)]
        y = rng.normal(mu, sd, size=ns.n_mc)
        w = expit(sensitivity_score(params, z, x[0], y))
        return float(np.mean(y * w))
    q, _ = ns.q_gamma(z, x, params)
    return float(q[0])


def estimate_gamma(ns: NuisanceSet, params, a, z, x):
    """gamma(a,z,x) from the shared draw panel (A=Z event only)."""
    if a != z:
        raise ValueError("gamma is only defined on the A=Z event")
    _, gamma = ns.q_gamma(z, np.atleast_2d(np.asarray(x, dtype=float)), params)
    return float(gamma[0])


def estimate_delta(ns: NuisanceSet, params, a, z, x):
    """delta(a,z,x) = Q/gamma, the complier outcome mean at (z,x)."""
    if a != z:
        raise ValueError("delta is only used on the A=Z event")
    return float(ns.delta(z, np.atleast_2d(np.asarray(x, dtype=float)), params)[0])


def compute_theta(ns: NuisanceSet, params, z, x):
    """theta(z,x) = sum_a a(a+z)/(2 gamma) Q = delta(z,z,x) identically."""
    return float(ns.theta(z, np.atleast_2d(np.asarray(x, dtype=float)), params)[0])
