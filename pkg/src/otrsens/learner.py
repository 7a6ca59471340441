"""Weighted-classification policy learner.

Minimizes the |W|-weighted hinge surrogate with a ridge penalty on the slope,

    (1/n) sum_i |W_i| max(0, 1 - s_i Z_i (b0 + b.x_i)) + (lam/2) ||b||^2,

where s_i = sign(W_i) and rows with W_i = 0 are dropped. The optimizer is
deterministic full-batch subgradient descent from zero with a c/sqrt(t) step
and Polyak averaging, tracking the best averaged iterate. The step constant
is 1/mean|W| so that rescaling all weights (with lam rescaled alike) replays
the identical iterate path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, LinearPolicy


@dataclass(frozen=True)
class LearnerConfig:
    lam: float = 0.01
    max_iter: int = 2000
    tolerance: float = 1e-6
    stall_window: int = 50
    lambda_grid: tuple = ()
    cv_folds: int = 5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def hinge_objective(theta, xmat, labels, absw, lam):
    """Objective at theta = (b0, b); labels = s*z in {-1,+1}."""
    b0, b = theta[0], theta[1:]
    margins = labels * (b0 + xmat @ b)
    hinge = np.maximum(0.0, 1.0 - margins)
    return float(np.mean(absw * hinge) + 0.5 * lam * (b @ b))


def _subgradient(theta, xmat, labels, absw, lam):
    b0, b = theta[0], theta[1:]
    margins = labels * (b0 + xmat @ b)
    active = margins < 1.0
    coeff = -(absw * labels * active) / labels.shape[0]
    g0 = float(np.sum(coeff))
    gb = xmat.T @ coeff + lam * b
    return np.concatenate([[g0], gb])


def learn_policy(dataset: Dataset, weights, cfg: LearnerConfig = LearnerConfig()):
    """Fit the linear regime by weighted hinge minimization.

    `weights` may be a WeightVector or a plain array aligned with rows.
    """
    w = np.asarray(getattr(weights, "values", weights), dtype=float)
    if w.shape[0] != dataset.n:
        raise ValueError("weight vector length must match the dataset")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    keep = w != 0.0
    if not np.any(keep):
        raise ValueError("all weights are zero; nothing to learn from")
    xmat = dataset.x[keep]
    labels = (np.sign(w[keep]) * dataset.z[keep]).astype(float)
    absw = np.abs(w[keep])

    # the lam term keeps the update contraction stable for huge penalties,
    # and the mean|W| term makes the path invariant to joint (W, lam) scaling
    step_c = 1.0 / (float(np.mean(absw)) + cfg.lam)
    d = xmat.shape[1]
    theta = np.zeros(d + 1)
    avg = theta.copy()
    best_theta = avg.copy()
    best_obj = hinge_objective(avg, xmat, labels, absw, cfg.lam)
    stall = 0
    for t in range(1, cfg.max_iter + 1):
        g = _subgradient(theta, xmat, labels, absw, cfg.lam)
        theta = theta - (step_c / np.sqrt(t)) * g
        avg = avg + (theta - avg) / t  # running Polyak average
        # the average is the convergence workhorse; the raw iterate often
        # lands earlier on separable problems — keep whichever is best
        improved = False
        for cand in (avg, theta):
            obj = hinge_objective(cand, xmat, labels, absw, cfg.lam)
            if not np.isfinite(obj):
                raise ValueError("non-finite objective; weights badly scaled")
            if obj < best_obj - cfg.tolerance:
                best_obj = obj
                best_theta = cand.copy()
                improved = True
        if improved:
            stall = 0
        else:
            stall += 1
            if stall >= cfg.stall_window:
                break
    return LinearPolicy(beta0=float(best_theta[0]), beta=best_theta[1:])


def weighted_agreement(policy: LinearPolicy, dataset: Dataset, w) -> float:
    """CV score: sum of |W_i| over held-out rows the policy classifies to
    the weight-preferred arm sign(W_i) * Z_i."""
    w = np.asarray(getattr(w, "values", w), dtype=float)
    keep = w != 0.0
    if not np.any(keep):
        return 0.0
    target = np.sign(w[keep]) * dataset.z[keep]
    agree = policy.decide(dataset.x[keep]) == target
    return float(np.sum(np.abs(w[keep]) * agree))


def select_lambda(dataset: Dataset, weights, cfg: LearnerConfig) -> float:
    """Pick lambda from cfg.lambda_grid by K-fold weighted agreement.

    Ties resolve to the smallest lambda.
    """
    grid = sorted(cfg.lambda_grid)
    if not grid:
        raise ValueError("lambda_grid is empty")
    if cfg.cv_folds < 2:
        raise ValueError("cv_folds must be >= 2")
    if len(grid) == 1:
        return float(grid[0])
    w = np.asarray(getattr(weights, "values", weights), dtype=float)
    folds = np.arange(dataset.n) % cfg.cv_folds
    scores = []
    for lam in grid:
        total = 0.0
        for k in range(cfg.cv_folds):
            tr = folds != k
            te = ~tr
            sub_cfg = LearnerConfig(
                lam=lam,
                max_iter=cfg.max_iter,
                tolerance=cfg.tolerance,
                stall_window=cfg.stall_window,
            )
            ds_tr = Dataset(
                x=dataset.x[tr], z=dataset.z[tr], a=dataset.a[tr], y=dataset.y[tr]
            )
            ds_te = Dataset(
                x=dataset.x[te], z=dataset.z[te], a=dataset.a[te], y=dataset.y[te]
            )
            pol = learn_policy(ds_tr, w[tr], sub_cfg)
            total += weighted_agreement(pol, ds_te, w[te])
        scores.append(total)
    best = int(np.argmax(scores))  # argmax returns the FIRST max: smallest lam
    return float(grid[best])


def policy_to_json(policy: LinearPolicy) -> str:
    return json.dumps(
        {"beta0": policy.beta0, "beta": list(map(float, policy.beta))}
    )


def policy_from_json(text: str) -> LinearPolicy:
    obj = json.loads(text)
    return LinearPolicy(beta0=float(obj["beta0"]), beta=np.asarray(obj["beta"]))
