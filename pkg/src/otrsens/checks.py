"""Built-in correctness checks: exact identities and sampler diagnostics.

Each check compares a package computation against an independent target —
an enumerated identity on the two-atom world, a quadrature value, a
closed-form solve, or a distributional test — and reports one row. The CLI
`oracle-check` command runs them all and fails the run if any row fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from .datagen import (
    GenerativeConfig,
    _rejection_batch,
    bridge_inverse_cdf,
    generate_trial,
    sample_bridge,
    tilted_arm_gamma,
)
from .discrete import build_discrete_oracle
from .harness import fit_masked_nuisances, y_only_params
from .learner import hinge_objective
from .model import LinearPolicy
from .sensitivity import gamma_mc, sensitivity_score, solve_alpha0
from .value import mr_value_eif, psi_mr_eif

CHECK_HEADER = "check,value,bound,passed"

# the four action patterns a threshold rule can realize on two atoms
_THRESHOLD_POLICIES = (
    LinearPolicy(1.0, (1.0, 0.0)),
    LinearPolicy(-1.0, (1.0, 0.0)),
    LinearPolicy(0.0, (1.0, 0.0)),
    LinearPolicy(0.0, (-1.0, 0.0)),
)


@dataclass(frozen=True)
class CheckRow:
    """One check outcome; `passed` encodes the row's own pass direction."""

    name: str
    value: float
    bound: float
    passed: bool


def check_theorem1() -> list:
    """Enumerated weighting identity on the discrete world, plus its runtime."""
    start = time.monotonic()
    oracle = build_discrete_oracle()
    diffs = [
        abs(oracle.theorem1_lhs(pol) - oracle.complier_value(pol))
        for pol in _THRESHOLD_POLICIES
    ]
    elapsed = time.monotonic() - start
    worst = float(max(diffs))
    return [
        CheckRow("theorem1_max_diff", worst, 1e-9, worst < 1e-9),
        CheckRow("theorem1_runtime_s", float(elapsed), 1.0, elapsed < 1.0),
    ]


def check_eif_centering(seed=11) -> list:
    """Influence contributions must average to zero exactly as constructed."""
    cfg = GenerativeConfig(n=400, seed=int(seed))
    dataset, _ = generate_trial(cfg, replicate=0)
    params = y_only_params(0.5, 0.5)
    ns = fit_masked_nuisances(dataset, {}, params=params, n_mc=2000, kappa=True)
    policy = LinearPolicy(0.2, (-1.0, -0.5))
    rows = []
    for name, eif in (
        ("mr_value_centering", mr_value_eif(dataset, policy, ns, params)),
        ("psi_mr_centering", psi_mr_eif(dataset, ns, params)),
    ):
        c = abs(float(eif.centering))
        rows.append(CheckRow(name, c, 1e-12, c <= 1e-12))
    return rows


def check_gamma_mc(n_mc=5000, seed=0) -> CheckRow:
    """MC complier-share vs Gauss-Hermite quadrature on the trial arm laws."""
    cfg = GenerativeConfig()
    params = y_only_params(0.5, 0.5)
    rng = np.random.default_rng((int(seed), 71))
    worst = 0.0
    for z in (-1, 1):
        b0, b1, b2, sd = cfg.arm_outcomes[z]
        for x in ((0.3, -0.2), (-0.6, 0.5)):
            mu = b0 + b1 * x[0] + b2 * x[1]

            def sampler(r, n, mu=mu, sd=sd):
                return mu + sd * r.standard_normal(n)

            mc = gamma_mc(params, z, z, np.array(x), sampler, n_mc=n_mc, rng=rng)
            exact = float(tilted_arm_gamma(params, z, np.array([x]), cfg)[0])
            worst = max(worst, abs(mc - exact))
    return CheckRow("gamma_mc_vs_quadrature", float(worst), 0.01, worst < 0.01)


def check_alpha0_solver() -> CheckRow:
    """Plug the solved intercept back into the tilt-mean equation."""
    values, probs = np.array([-1.0, 2.0]), np.array([0.4, 0.6])
    a0 = solve_alpha0(0.3, 0.6, (values, probs), 0.7)
    resid = abs(float(probs @ expit(a0 + 0.7 * values)) - 0.5)
    return CheckRow("alpha0_plugback_resid", resid, 1e-8, resid < 1e-8)


def _bridge_cdf(phi, xs, iters=50):
    """Invert the quantile function by bisection; xs must be sorted."""
    lo = np.zeros_like(xs)
    hi = np.ones_like(xs)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = bridge_inverse_cdf(phi, np.clip(mid, 1e-15, 1 - 1e-15)) < xs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def check_bridge_ks(n_draws=1_000_000, phi=0.5, seed=0) -> CheckRow:
    """Kolmogorov-Smirnov distance of bridge draws against the inverted CDF."""
    rng = np.random.default_rng((int(seed), 72))
    draws = np.sort(sample_bridge(phi, rng, size=int(n_draws)))
    cdf = _bridge_cdf(phi, draws)
    n = draws.shape[0]
    grid = np.arange(1, n + 1) / n
    ks = float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n))))
    return CheckRow("bridge_sampler_ks", ks, 0.002, ks < 0.002)


def check_rejection_gof(n_draws=20_000, n_bins=25, seed=0) -> CheckRow:
    """Chi-square fit of rejection draws against the quadrature-tilted law."""
    cfg = GenerativeConfig()
    params = y_only_params(0.5, 0.5)
    z, x = -1, (0.4, -0.1)
    b0, b1, b2, sd = cfg.arm_outcomes[z]
    mu = b0 + b1 * x[0] + b2 * x[1]
    ys = np.linspace(mu - 8 * sd, mu + 8 * sd, 4001)
    dens = np.exp(-0.5 * ((ys - mu) / sd) ** 2) * expit(
        sensitivity_score(params, z, np.array([x]), ys[None, :])[0]
    )
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5)])
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, n_bins + 1)[1:-1], cdf, ys)
    edges = np.concatenate([[-np.inf], edges, [np.inf]])
    rng = np.random.default_rng((int(seed), 73))
    xs = np.tile(np.asarray(x, dtype=float), (int(n_draws), 1))
    draws = _rejection_batch(params, z, xs, rng, cfg, mean_of_accepted=False)
    observed, _ = np.histogram(draws, bins=edges)
    expected = len(draws) / n_bins
    chisq = float(np.sum((observed - expected) ** 2 / expected))
    p = float(stats.chi2.sf(chisq, df=n_bins - 1))
    return CheckRow("rejection_gof_pvalue", p, 0.001, p > 0.001)


def check_hinge_convexity(n_trials=10_000, seed=0) -> CheckRow:
    """Midpoint-style convexity of the hinge objective on random triples."""
    rng = np.random.default_rng((int(seed), 74))
    n, d = 40, 2
    xmat = rng.uniform(-1, 1, size=(n, d))
    labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    absw = rng.uniform(0.1, 5.0, size=n)
    lam = 0.3
    violations = 0
    for _ in range(int(n_trials)):
        ta = rng.normal(size=d + 1)
        tb = rng.normal(size=d + 1)
        t = rng.uniform(0.05, 0.95)
        fa = hinge_objective(ta, xmat, labels, absw, lam)
        fb = hinge_objective(tb, xmat, labels, absw, lam)
        fm = hinge_objective(t * ta + (1 - t) * tb, xmat, labels, absw, lam)
        if fm > t * fa + (1 - t) * fb + 1e-10:
            violations += 1
    return CheckRow("hinge_convexity_violations", float(violations), 0.0,
                    violations == 0)


def run_oracle_checks(config=None) -> list:
    """Run every check with sizes from `config` (all keys optional)."""
    config = dict(config or {})
    allowed = {"n_mc", "bridge_draws", "rejection_draws", "hinge_trials", "seed"}
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise ValueError(
            f"unknown oracle-check config keys {unknown}; allowed: {sorted(allowed)}"
        )
    seed = int(config.get("seed", 0))
    rows = []
    rows.extend(check_theorem1())
    rows.extend(check_eif_centering())
    rows.append(check_gamma_mc(n_mc=int(config.get("n_mc", 5000)), seed=seed))
    rows.append(check_alpha0_solver())
    rows.append(check_bridge_ks(n_draws=int(config.get("bridge_draws", 1_000_000)),
                                seed=seed))
    rows.append(check_rejection_gof(n_draws=int(config.get("rejection_draws", 20_000)),
                                    seed=seed))
    rows.append(check_hinge_convexity(n_trials=int(config.get("hinge_trials", 10_000)),
                                      seed=seed))
    return rows


def checks_csv(rows) -> str:
    lines = [CHECK_HEADER]
    for row in rows:
        lines.append(
            f"{row.name},{'%.17g' % row.value},{'%.17g' % row.bound},"
            f"{str(row.passed).lower()}"
        )
    return "\n".join(lines) + "\n"
