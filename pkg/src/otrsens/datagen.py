"""Synthetic randomized trials with three-level compliance and hidden truth.

The generative recipe: covariates uniform on (-1,1)^2, a logistic instrument,
a latent confounder from the bridge distribution (whose logit marginalization
keeps compliance multinomial-logistic), six monotone principal strata, one
Gaussian outcome law per (z, a) cell, and complier outcomes drawn by
rejection sampling from the tilted arm density w * f_z / gamma.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit

from .model import Dataset, LinearPolicy, MONOTONE_STRATA, PrincipalStratum, STRATA
from .sensitivity import ArmAlpha, SensitivityParams, sensitivity_score

INSTRUMENT_COEF = (0.3, -2.0, 2.0)  # logit P(Z=+1|x) on (1, x1, x2)

# stratum log-odds against the never-taker reference; coefficients on (x1, z, u)
STRATUM_LOGITS = {
    "S1": (0.5, 0.5, 1.0),
    "S2": (-0.5, 0.5, 1.0),
    "S4": (-0.5, 0.5, -1.0),
    "S5": (0.5, 0.5, -1.0),
    "S6": (0.5, 0.5, -1.0),
}

# Gaussian outcome cells: mean = b0 + b1*x1 + b2*x2, spread sd
ARM_OUTCOMES = {-1: (1.0, 2.0, 2.0, 0.5), 1: (1.0, 0.0, 0.0, 0.5)}
OFFDIAG_OUTCOMES = {
    (-1, 1): (3.0, 1.0, 1.0, 0.5),
    (1, -1): (-1.0, 1.0, 1.0, 0.5),
    (1, 0): (5.0, 0.0, 0.0, 0.1),
    (-1, 0): (-5.0, 0.0, 0.0, 0.1),
}

REJECTION_PROPOSAL = (1.5, 2.0)  # proposal N(1.5, 2^2)
REJECTION_GRID = np.linspace(-10.0, 10.0, 2001)
REJECTION_M_PAD = 1.05
REJECTION_CAP = 10 ** 6
_M_CHUNK = 4000  # rows per envelope-constant block

# numbered RNG streams per replicate: (master_seed, replicate, stream)
STREAM_COVARIATES, STREAM_CONFOUNDER, STREAM_STRATA, STREAM_OUTCOME, STREAM_REJECTION = range(5)

_GH_Y, _GH_W = hermegauss(96)
_GH_W = _GH_W / _GH_W.sum()


def _default_alpha():
    return SensitivityParams(
        "Y_ONLY", minus=ArmAlpha(0.0, 0.5), plus=ArmAlpha(0.0, 0.5)
    )


@dataclass(frozen=True)
class GenerativeConfig:
    """Knobs of the synthetic trial; defaults reproduce the simulation study."""

    n: int = 500
    true_alpha: SensitivityParams = field(default_factory=_default_alpha)
    phi: float = 0.5
    seed: int = 0
    strata_scheme: str = "s4_first"
    rejection_mean_of_accepted: bool = False
    instrument_coef: tuple = INSTRUMENT_COEF
    stratum_logits: dict = field(default_factory=lambda: dict(STRATUM_LOGITS))
    arm_outcomes: dict = field(default_factory=lambda: dict(ARM_OUTCOMES))
    offdiag_outcomes: dict = field(default_factory=lambda: dict(OFFDIAG_OUTCOMES))

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError("phi must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.strata_scheme not in ("s4_first", "softmax"):
            raise ValueError("strata_scheme must be 's4_first' or 'softmax'")
        for label in self.stratum_logits:
            if label not in MONOTONE_STRATA or label == "S3":
                raise ValueError(f"stratum logit for invalid label {label!r}")
        for cell in list(self.arm_outcomes.values()) + list(self.offdiag_outcomes.values()):
            if not cell[3] > 0:
                raise ValueError("outcome cell spread must be positive")


@dataclass(frozen=True)
class TruthRecord:
    """Hidden per-row ground truth of a generated trial."""

    stratum: str
    u: float
    a_minus: int
    a_plus: int
    optimal_action: int

    def __post_init__(self):
        if self.stratum not in MONOTONE_STRATA:
            raise ValueError(f"stratum {self.stratum!r} is not a monotone type")
        if (self.a_minus, self.a_plus) != STRATA[self.stratum]:
            raise ValueError("potential compliances inconsistent with stratum")
        if self.optimal_action not in (-1, 1):
            raise ValueError("optimal_action must be -1 or +1")


def truths_to_csv(truths, path):
    """Sidecar with the latent rows: stratum,u,a_minus,a_plus."""
    with open(path, "w") as fh:
        fh.write("stratum,u,a_minus,a_plus\n")
        for t in truths:
            fh.write("%s,%.17g,%d,%d\n" % (t.stratum, t.u, t.a_minus, t.a_plus))


# ----------------------------------------------------------- confounder law


def bridge_inverse_cdf(phi, p):
    """Quantile map of the bridge law: log(sin(phi*pi*p)/sin(phi*pi*(1-p)))/phi."""
    p = np.asarray(p, dtype=float)
    return np.log(np.sin(phi * np.pi * p) / np.sin(phi * np.pi * (1.0 - p))) / phi


def sample_bridge(phi, rng, size=None):
    """Inverse-CDF draws of the bridge confounder."""
    if not 0.0 < phi < 1.0:
        raise ValueError("phi must lie in (0, 1)")
    p = np.clip(rng.random(size), 1e-15, 1.0 - 1e-15)
    out = bridge_inverse_cdf(phi, p)
    return out if size is not None else float(out)


# ------------------------------------------------------------------- strata


def _stratum_logit_columns(cfg, labels, x1, z, u):
    cols = []
    for label in labels:
        if label == "S3":
            cols.append(np.zeros_like(x1))
        else:
            cx, cz, cu = cfg.stratum_logits[label]
            cols.append(cx * x1 + cz * z + cu * u)
    return np.column_stack(cols)


def stratum_probabilities(x, z, u, cfg=None):
    """(n, 6) softmax over the monotone strata, never-taker logit fixed at 0."""
    cfg = cfg if cfg is not None else GenerativeConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1 = x[:, 0]
    z = np.broadcast_to(np.asarray(z, dtype=float), x1.shape)
    u = np.broadcast_to(np.asarray(u, dtype=float), x1.shape)
    logits = _stratum_logit_columns(cfg, MONOTONE_STRATA, x1, z, u)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def sample_stratum(x, z, u, rng, cfg=None) -> PrincipalStratum:
    """One multinomial stratum draw from the softmax probabilities."""
    p = stratum_probabilities(x, z, u, cfg)[0]
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return PrincipalStratum(MONOTONE_STRATA[min(idx, 5)])


def _categorical_rows(p, uniforms):
    """Row-wise categorical draws from an (n, k) probability matrix."""
    cum = np.cumsum(p, axis=1)
    return (uniforms[:, None] > cum).sum(axis=1)


def _draw_strata_labels(cfg, x1, z, u, rng):
    labels = np.array(MONOTONE_STRATA)
    if cfg.strata_scheme == "softmax":
        logits = _stratum_logit_columns(cfg, MONOTONE_STRATA, x1, z, u)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return labels[_categorical_rows(p, rng.random(x1.shape[0]))]
    # complier membership first, then the residual strata among non-compliers
    cx, cz, cu = cfg.stratum_logits["S4"]
    is_complier = rng.random(x1.shape[0]) < expit(cx * x1 + cz * z + cu * u)
    rest = [s for s in MONOTONE_STRATA if s != "S4"]
    logits = _stratum_logit_columns(cfg, rest, x1, z, u)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    out = np.array(rest)[_categorical_rows(p, rng.random(x1.shape[0]))]
    out[is_complier] = "S4"
    return out


def compliance_from_stratum(stratum, z) -> int:
    """Realized compliance of a stratum under instrument arm z."""
    s = stratum if isinstance(stratum, PrincipalStratum) else PrincipalStratum(str(stratum))
    if s.is_defier_type:
        raise ValueError(f"defier stratum {s.label} is excluded by monotonicity")
    if z not in (-1, 1):
        raise ValueError("z must be -1 or +1")
    return s.compliance(z)


# ----------------------------------------------------- complier outcome law


def _cell_mean(cell, x):
    b0, b1, b2, _ = cell
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return b0 + b1 * x[:, 0] + b2 * x[:, 1]


def tilted_arm_mean(params, z, x, cfg=None):
    """E[Y | complier, arm z, x] by Gauss-Hermite over the tilted arm law."""
    cfg = cfg if cfg is not None else GenerativeConfig()
    cell = cfg.arm_outcomes[int(z)]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = _cell_mean(cell, x)[:, None] + cell[3] * _GH_Y[None, :]
    w = expit(sensitivity_score(params, z, x, y))
    return (_GH_W * y * w).sum(axis=1) / (_GH_W * w).sum(axis=1)


def tilted_arm_gamma(params, z, x, cfg=None):
    """gamma(z, z, x) of the generative world, by quadrature."""
    cfg = cfg if cfg is not None else GenerativeConfig()
    cell = cfg.arm_outcomes[int(z)]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = _cell_mean(cell, x)[:, None] + cell[3] * _GH_Y[None, :]
    w = expit(sensitivity_score(params, z, x, y))
    return (_GH_W * w).sum(axis=1)


def true_optimal_actions(x, params, cfg=None):
    """Per-row argmax over arms of the complier tilted mean; ties go to +1."""
    below = tilted_arm_mean(params, -1, x, cfg)
    above = tilted_arm_mean(params, 1, x, cfg)
    return np.where(above >= below, 1, -1)


def _normal_pdf(y, mu, sd):
    return np.exp(-0.5 * ((y - mu) / sd) ** 2) / (np.sqrt(2.0 * np.pi) * sd)


def _envelope_constants(params, z, x, mu, sd, gam):
    """Per-row M: padded max of target/proposal over a fixed outcome grid."""
    pm, ps = REJECTION_PROPOSAL
    grid = REJECTION_GRID
    prop = _normal_pdf(grid, pm, ps)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _M_CHUNK):
        hi = lo + _M_CHUNK
        w = expit(sensitivity_score(params, z, x[lo:hi],
                                    np.broadcast_to(grid, (x[lo:hi].shape[0], grid.size))))
        target = w * _normal_pdf(grid[None, :], mu[lo:hi, None], sd) / gam[lo:hi, None]
        out[lo:hi] = REJECTION_M_PAD * (target / prop[None, :]).max(axis=1)
    return out


def _rejection_batch(params, z, x, rng, cfg, mean_of_accepted):
    """Complier outcomes at arm z for every row of x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if n == 0:
        return np.empty(0)
    cell = cfg.arm_outcomes[int(z)]
    mu, sd = _cell_mean(cell, x), cell[3]
    gam = tilted_arm_gamma(params, z, x, cfg)
    M = _envelope_constants(params, z, x, mu, sd, gam)
    pm, ps = REJECTION_PROPOSAL
    if mean_of_accepted:
        return _mean_of_accepted_batch(params, z, x, rng, mu, sd, gam, M)
    out = np.empty(n)
    active = np.arange(n)
    tries = 0
    while active.size:
        tries += 1
        if tries > REJECTION_CAP:
            raise RuntimeError("rejection sampling exceeded the acceptance cap")
        prop = rng.normal(pm, ps, active.size)
        accept_u = rng.random(active.size)
        w = expit(sensitivity_score(params, z, x[active], prop[:, None]))[:, 0]
        target = w * _normal_pdf(prop, mu[active], sd) / gam[active]
        ratio = target / (M[active] * _normal_pdf(prop, pm, ps))
        hit = accept_u < ratio
        out[active[hit]] = prop[hit]
        active = active[~hit]
    return out


def _mean_of_accepted_batch(params, z, x, rng, mu, sd, gam, M, n_prop=8000):
    """Literal variant: mean of the accepted draws among n_prop proposals."""
    pm, ps = REJECTION_PROPOSAL
    n = x.shape[0]
    out = np.empty(n)
    step = max(1, _M_CHUNK // 16)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        k = hi - lo
        prop = rng.normal(pm, ps, (k, n_prop))
        accept_u = rng.random((k, n_prop))
        w = expit(sensitivity_score(params, z, x[lo:hi], prop))
        target = w * _normal_pdf(prop, mu[lo:hi, None], sd) / gam[lo:hi, None]
        ratio = target / (M[lo:hi, None] * _normal_pdf(prop, pm, ps))
        hit = accept_u < ratio
        counts = hit.sum(axis=1)
        if np.any(counts == 0):
            raise RuntimeError("no proposal accepted in the literal variant")
        out[lo:hi] = (prop * hit).sum(axis=1) / counts
    return out


def rejection_sample_complier_y(x, z, true_params, rng, cfg=None) -> float:
    """One complier outcome at arm z (first accepted draw by default)."""
    cfg = cfg if cfg is not None else GenerativeConfig()
    vals = _rejection_batch(true_params, z, np.atleast_2d(np.asarray(x, dtype=float)),
                            rng, cfg, cfg.rejection_mean_of_accepted)
    return float(vals[0])


# ------------------------------------------------------------------- trials


def _replicate_rngs(cfg, replicate):
    return [
        np.random.default_rng((cfg.seed, replicate, stream)) for stream in range(5)
    ]


def generate_trial(cfg: GenerativeConfig, replicate: int = 0):
    """One synthetic trial: (Dataset, list of TruthRecord), fully seeded."""
    r_cov, r_u, r_strata, r_out, r_rej = _replicate_rngs(cfg, replicate)
    n = cfg.n
    x = r_cov.uniform(-1.0, 1.0, (n, 2))
    c0, c1, c2 = cfg.instrument_coef
    z = np.where(r_cov.random(n) < expit(c0 + c1 * x[:, 0] + c2 * x[:, 1]), 1, -1)
    u = sample_bridge(cfg.phi, r_u, size=n)
    labels = _draw_strata_labels(cfg, x[:, 0], z, u, r_strata)

    order = {s: i for i, s in enumerate(MONOTONE_STRATA)}
    idx = np.array([order[s] for s in labels])
    a_minus = np.array([STRATA[s][0] for s in MONOTONE_STRATA])[idx]
    a_plus = np.array([STRATA[s][1] for s in MONOTONE_STRATA])[idx]
    a = np.where(z == 1, a_plus, a_minus)

    y = np.empty(n)
    for (zz, aa) in sorted(cfg.offdiag_outcomes, key=str):
        cell = cfg.offdiag_outcomes[(zz, aa)]
        sel = (z == zz) & (a == aa)
        y[sel] = r_out.normal(_cell_mean(cell, x[sel]), cell[3])
    complier = labels == "S4"
    for zz in (-1, 1):
        cell = cfg.arm_outcomes[zz]
        sel = (z == zz) & (a == zz) & ~complier
        y[sel] = r_out.normal(_cell_mean(cell, x[sel]), cell[3])
    for zz in (-1, 1):
        sel = complier & (z == zz)
        y[sel] = _rejection_batch(cfg.true_alpha, zz, x[sel], r_rej, cfg,
                                  cfg.rejection_mean_of_accepted)

    optimal = true_optimal_actions(x, cfg.true_alpha, cfg)
    truths = [
        TruthRecord(
            stratum=str(labels[i]),
            u=float(u[i]),
            a_minus=int(a_minus[i]),
            a_plus=int(a_plus[i]),
            optimal_action=int(optimal[i]),
        )
        for i in range(n)
    ]
    return Dataset(x=x, z=z, a=a, y=y), truths


# ----------------------------------------------------------- value oracles


def true_complier_value(policy: LinearPolicy, true_params=None, n_mc=200_000,
                        rng=None, cfg=None) -> float:
    """Monte-Carlo complier value of a policy by simulating the latent world."""
    cfg = cfg if cfg is not None else GenerativeConfig()
    if true_params is not None:
        cfg = replace(cfg, true_alpha=true_params)
    rng = rng if rng is not None else np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, (n_mc, 2))
    c0, c1, c2 = cfg.instrument_coef
    z = np.where(rng.random(n_mc) < expit(c0 + c1 * x[:, 0] + c2 * x[:, 1]), 1, -1)
    u = sample_bridge(cfg.phi, rng, size=n_mc)
    labels = _draw_strata_labels(cfg, x[:, 0], z, u, rng)
    xs = x[labels == "S4"]
    act = policy.decide(xs)
    y = np.empty(xs.shape[0])
    for arm in (-1, 1):
        sel = act == arm
        y[sel] = _rejection_batch(cfg.true_alpha, arm, xs[sel], rng, cfg, False)
    return float(y.mean())


class TrueValueOracle:
    """Fast complier-value oracle: frozen complier covariate pool + quadrature.

    The pool is drawn once; policy values are then pool means of precomputed
    per-arm tilted means, so evaluating many policies is cheap.
    """

    def __init__(self, cfg: GenerativeConfig, n_pool=200_000, rng=None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(987654321)
        x = rng.uniform(-1.0, 1.0, (n_pool, 2))
        c0, c1, c2 = cfg.instrument_coef
        z = np.where(rng.random(n_pool) < expit(c0 + c1 * x[:, 0] + c2 * x[:, 1]), 1, -1)
        u = sample_bridge(cfg.phi, rng, size=n_pool)
        labels = _draw_strata_labels(cfg, x[:, 0], z, u, rng)
        self.x_pool = x[labels == "S4"]
        self._arm_means = {
            arm: tilted_arm_mean(cfg.true_alpha, arm, self.x_pool, cfg)
            for arm in (-1, 1)
        }

    def value(self, policy: LinearPolicy) -> float:
        """True complier value of a policy under the world's alpha."""
        act = policy.decide(self.x_pool)
        return float(np.where(act == 1, self._arm_means[1], self._arm_means[-1]).mean())

    def optimal_value(self) -> float:
        return float(np.maximum(self._arm_means[-1], self._arm_means[1]).mean())

    def optimal_actions(self, x):
        return true_optimal_actions(x, self.cfg.true_alpha, self.cfg)
