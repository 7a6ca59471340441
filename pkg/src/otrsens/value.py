"""Complier value of a treatment regime: IPW, multiply robust, and psi.

Every estimator reduces to a per-row influence computation followed by a
deterministic pairwise mean, so results do not depend on row chunking.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import Dataset, EstimateWithSE, LinearPolicy
from .nuisance import NuisanceSet
from .sensitivity import SensitivityParams, sensitivity_score
from .weights import ipw_weights

RESULT_HEADER = "method,alpha_minus,alpha_plus,scenario,estimate,se,n,seed"


@dataclass(frozen=True)
class EIFContribution:
    """Per-row efficient-influence values, centered at the point estimate."""

    values: np.ndarray
    estimate: float
    method: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("influence contributions must be finite")

    @property
    def centering(self) -> float:
        """|mean| of the centered contributions; 0 up to float rounding."""
        return abs(float(np.mean(self.values)))


def result_csv_row(est: EstimateWithSE, params: SensitivityParams,
                   scenario: str, seed: int) -> str:
    """One CSV line under RESULT_HEADER; alphas are the per-arm Y slopes."""
    return "%s,%.17g,%.17g,%s,%.17g,%.17g,%d,%d" % (
        est.method, params.minus.aY, params.plus.aY, scenario,
        est.estimate, est.se, est.n, seed,
    )


def ipw_value(dataset: Dataset, policy: LinearPolicy, ns: NuisanceSet,
              params: SensitivityParams) -> EstimateWithSE:
    """Mean of W_ipw * I{pi(X)=Z}; SE is the sample SD over sqrt(n)."""
    w = ipw_weights(dataset, ns, params)
    agree = policy.decide(dataset.x) == dataset.z
    return EstimateWithSE.from_contributions(w.values * agree, "IPW")


def _fz_vector(true_fz, z, x, n):
    """Known instrument propensity as per-row densities f(z_i | x_i)."""
    if callable(true_fz):
        out = np.broadcast_to(np.asarray(true_fz(z, x), dtype=float), (n,))
        out = np.array(out, dtype=float)
    else:
        p = float(true_fz)
        if not 0.0 < p < 1.0:
            raise ValueError("true_fz must be in (0, 1) or a callable (z, x) -> density")
        out = np.where(z == 1, p, 1.0 - p)
    if np.any(out <= 0.0) or not np.all(np.isfinite(out)):
        raise ValueError("instrument propensities must be positive and finite")
    return out


def _core_rows(dataset, ns, params, fz):
    """Shared pieces of the influence displays.

    Returns (core, theta, blip) where core is the A=Z-only bracket
    [Yw - Q - delta(w - gamma)] / (gamma f(A|Z,X) f(Z|X)) per row (zero off
    the A=Z event), theta_i = delta(z_i, z_i, x_i), and blip is
    delta(1,1,x) - delta(-1,-1,x).
    """
    x, z, a, y = dataset.x, dataset.z, dataset.a, dataset.y
    q_p, g_p = ns.q_gamma(1, x, params)
    q_m, g_m = ns.q_gamma(-1, x, params)
    if np.any(g_p < 1e-12) or np.any(g_m < 1e-12):
        raise ValueError("gamma underflow (< 1e-12); influence terms undefined")
    plus = z == 1
    q_own = np.where(plus, q_p, q_m)
    g_own = np.where(plus, g_p, g_m)
    theta = q_own / g_own
    w_own = np.where(plus,
                     expit(sensitivity_score(params, 1, x, y)),
                     expit(sensitivity_score(params, -1, x, y)))
    diag = (a == z).astype(float)
    fa = ns.f_a(a, z, x)
    bracket = y * w_own - q_own - theta * (w_own - g_own)
    core = diag * bracket / (g_own * fa * fz)
    return core, theta, q_p / g_p - q_m / g_m


def _kappa_values(kappa, dataset, act, in_sample):
    """kappa-hat at the observed arm and at the policy arm, per row.

    in_sample=None auto-detects training rows by length; rows of an external
    dataset that happens to match the training size need an explicit False.
    """
    n = dataset.n
    if in_sample is None:
        in_sample = kappa.fold_of_row.shape[0] == n
    if not in_sample:
        return (kappa.predict_new(dataset.z, dataset.x),
                kappa.predict_new(act, dataset.x))
    if kappa.fold_of_row.shape[0] != n:
        raise ValueError("in-sample kappa evaluation requires the training rows")
    own = np.empty(n)
    at_act = np.empty(n)
    for k in range(len(kappa.fold_models)):
        m = kappa.fold_of_row == k
        if not np.any(m):
            continue
        own[m] = kappa.predict_fold(k, dataset.z[m], dataset.x[m])
        at_act[m] = kappa.predict_fold(k, act[m], dataset.x[m])
    return own, at_act


def _mr_rows(dataset, policy, ns, params, in_sample):
    if ns.kappa is None:
        raise ValueError("multiply robust value requires a cross-fitted kappa; run fit_kappa")
    x, z = dataset.x, dataset.z
    act = policy.decide(x)
    agree = (act == z).astype(float)
    fz = ns.f_z(z, x)
    core, theta, _ = _core_rows(dataset, ns, params, fz)
    kap_own, kap_act = _kappa_values(ns.kappa, dataset, act, in_sample)
    return agree * (core + (theta - kap_own) / fz) + kap_act


def mr_value(dataset: Dataset, policy: LinearPolicy, ns: NuisanceSet,
             params: SensitivityParams, in_sample=None) -> EstimateWithSE:
    """Multiply robust one-step value estimate (solves P_n xi = 0)."""
    return EstimateWithSE.from_contributions(
        _mr_rows(dataset, policy, ns, params, in_sample), "MR")


def mr_value_eif(dataset: Dataset, policy: LinearPolicy, ns: NuisanceSet,
                 params: SensitivityParams, in_sample=None) -> EIFContribution:
    """Centered per-row influence values behind mr_value."""
    vals = _mr_rows(dataset, policy, ns, params, in_sample)
    est = float(np.mean(vals))
    return EIFContribution(values=vals - est, estimate=est, method="MR")


def _mr_known_fz_rows(dataset, policy, ns, params, true_fz):
    x, z = dataset.x, dataset.z
    act = policy.decide(x)
    agree = (act == z).astype(float)
    fz = _fz_vector(true_fz, z, x, dataset.n)
    core, theta, _ = _core_rows(dataset, ns, params, fz)
    return agree * (core + theta / fz)


def mr_value_known_fz(dataset: Dataset, policy: LinearPolicy, ns: NuisanceSet,
                      params: SensitivityParams, true_fz) -> EstimateWithSE:
    """Simplified multiply robust value for a known instrument propensity.

    Drops the kappa term; true_fz is either the randomization probability
    P(Z=+1|X) as a float or a callable (z, x) -> per-row densities.
    """
    return EstimateWithSE.from_contributions(
        _mr_known_fz_rows(dataset, policy, ns, params, true_fz), "MR_KNOWN_FZ")


def mr_value_known_fz_eif(dataset: Dataset, policy: LinearPolicy, ns: NuisanceSet,
                          params: SensitivityParams, true_fz) -> EIFContribution:
    vals = _mr_known_fz_rows(dataset, policy, ns, params, true_fz)
    est = float(np.mean(vals))
    return EIFContribution(values=vals - est, estimate=est, method="MR_KNOWN_FZ")


def _psi_rows(dataset, ns, params):
    fz = ns.f_z(dataset.z, dataset.x)
    core, _, blip_x = _core_rows(dataset, ns, params, fz)
    return dataset.z * core + blip_x


def psi_mr(dataset: Dataset, ns: NuisanceSet,
           params: SensitivityParams) -> EstimateWithSE:
    """Multiply robust mean treatment contrast among compliers."""
    return EstimateWithSE.from_contributions(_psi_rows(dataset, ns, params), "MR")


def psi_mr_eif(dataset: Dataset, ns: NuisanceSet,
               params: SensitivityParams) -> EIFContribution:
    vals = _psi_rows(dataset, ns, params)
    est = float(np.mean(vals))
    return EIFContribution(values=vals - est, estimate=est, method="MR")
