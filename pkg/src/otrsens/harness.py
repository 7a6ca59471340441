"""Simulation harness: replicated scenario runs, alpha sweeps, split studies.

Every runner is deterministic for a fixed spec: replicate randomness is keyed
by (seed, replicate), aggregation sorts by replicate id before reduction, and
floats are printed with one fixed format — so identical configs produce
identical bytes, with or without a worker pool. A replicate that raises is
logged and skipped; a run with more than 5% failed replicates is invalid.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .boost import BoostConfig, fit_boosted
from .datagen import GenerativeConfig, TrueValueOracle, generate_trial, true_complier_value
from .discrete import build_discrete_oracle
from .learner import LearnerConfig, learn_policy, select_lambda
from .model import Dataset, correct_classification_rate
from .nuisance import (
    NuisanceSet,
    fit_compliance,
    fit_instrument,
    fit_kappa,
    fit_outcome_density,
)
from .sensitivity import ArmAlpha, SensitivityParams
from .value import ipw_value, mr_value_eif, mr_value_known_fz_eif, psi_mr_eif
from .weights import WeightVector, ipw_weights, ivt_weights, mr_weights, owl_weights

FULL_FEATURES = (0, 1)
METHODS = ("OWL", "IVT", "IPW", "MR")
MASKABLE = ("fZ", "fA", "Q")

# Scenario presets: which nuisance designs are degraded, and to which feature
# subset (empty tuple = intercept-only). The "weights" family breaks the
# treatment-mechanism factors jointly or the outcome model, matching the cases
# the policy-learning tables use; the "values" family breaks one nuisance at a
# time so each robustness leg of the value estimators is exercised alone.
WEIGHT_CASES = {
    "CASE1": {},
    "CASE2": {"fZ": (), "fA": ()},
    "CASE3": {"Q": ()},
}
VALUE_CASES = {
    "CASE1": {},
    "CASE2": {"fZ": ()},
    "CASE3": {"fA": ()},
    "CASE4": {"Q": ()},
}
MASK_FAMILIES = {"weights": WEIGHT_CASES, "values": VALUE_CASES}

SUMMARY_HEADER = "scenario,family,method,metric,mean,sd,replicates,failures"
REPLICATES_HEADER = "replicate,method,metric,value"
SWEEP_HEADER = "alpha_minus,alpha_plus,metric,mean,sd"
TRAINTEST_HEADER = "alpha_minus,alpha_plus,method,mean,mean_se,sd,resamples,failures"
DIFFERENCES_HEADER = "alpha_minus,alpha_plus,method_a,method_b,mean,sd"


def _fmt(v) -> str:
    return "%.17g" % float(v)


def y_only_params(alpha_minus, alpha_plus) -> SensitivityParams:
    """Per-arm Y-slope tilt with zero intercepts."""
    return SensitivityParams(
        form="Y_ONLY",
        minus=ArmAlpha(a0=0.0, aY=float(alpha_minus)),
        plus=ArmAlpha(a0=0.0, aY=float(alpha_plus)),
    )


def _pair(value, name):
    pair = tuple(float(v) for v in value)
    if len(pair) != 2:
        raise ValueError(f"{name} must hold exactly two per-arm values")
    return pair


def _normalized_masks(masks):
    out = {}
    for key, feats in masks.items():
        if key not in MASKABLE:
            raise ValueError(f"unknown nuisance mask {key!r}; expected one of {MASKABLE}")
        out[key] = tuple(int(j) for j in feats)
    return out


def _check_methods(methods):
    methods = tuple(methods)
    if not methods:
        raise ValueError("method set is empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected a subset of {METHODS}")
    if len(set(methods)) != len(methods):
        raise ValueError("method set contains duplicates")
    return methods


def _se_of(eif) -> float:
    n = eif.values.shape[0]
    if n < 2:
        return 0.0
    return float(np.std(eif.values, ddof=1) / np.sqrt(n))


def _stream_seed(seed, replicate, stream) -> int:
    return (1_000_003 * (int(seed) + 1) + 9176 * int(replicate) + int(stream)) % (2**63)


@dataclass(frozen=True)
class ScenarioSpec:
    """One replicated simulation study under a named misspecification case."""

    scenario: str = "CASE1"
    family: str = "weights"
    methods: tuple = METHODS
    true_alpha: tuple = (0.5, 0.5)
    analysis_alpha: tuple | None = None
    n: int = 500
    replicates: int = 500
    seed: int = 0
    split_ratio: float = 0.6
    masks: dict | None = None
    estimators: bool | None = None
    n_mc: int = 3000
    lam: float = 0.01
    lambda_grid: tuple = ()
    owl_rounds: tuple = (0,)
    kappa_rounds: int = 150
    kappa_folds: int = 5
    value_pool: int = 200_000
    value_protocol: str = "pool"
    literal_mc: int = 200_000
    strata_scheme: str = "s4_first"
    mean_of_accepted: bool = False

    def __post_init__(self):
        if self.family not in MASK_FAMILIES:
            raise ValueError(f"family must be one of {tuple(MASK_FAMILIES)}")
        if self.masks is None:
            if self.scenario not in MASK_FAMILIES[self.family]:
                raise ValueError(
                    f"scenario {self.scenario!r} has no preset in family {self.family!r}"
                )
        else:
            object.__setattr__(self, "masks", _normalized_masks(self.masks))
        object.__setattr__(self, "methods", _check_methods(self.methods))
        object.__setattr__(self, "true_alpha", _pair(self.true_alpha, "true_alpha"))
        if self.analysis_alpha is not None:
            object.__setattr__(
                self, "analysis_alpha", _pair(self.analysis_alpha, "analysis_alpha")
            )
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "owl_rounds", tuple(int(r) for r in self.owl_rounds))
        if self.n < 2 or self.replicates < 1:
            raise ValueError("n must be >= 2 and replicates >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0,1)")
        if self.value_protocol not in ("pool", "literal"):
            raise ValueError("value_protocol must be 'pool' or 'literal'")
        if self.wants_estimators() and "IPW" not in self.methods:
            raise ValueError("estimator outputs evaluate the IPW-learned policy; add IPW")

    def resolved_masks(self) -> dict:
        if self.masks is not None:
            return dict(self.masks)
        return dict(MASK_FAMILIES[self.family][self.scenario])

    def wants_estimators(self) -> bool:
        if self.estimators is None:
            return self.family == "values"
        return bool(self.estimators)

    def true_params(self) -> SensitivityParams:
        return y_only_params(*self.true_alpha)

    def analysis_params(self) -> SensitivityParams:
        pair = self.analysis_alpha if self.analysis_alpha is not None else self.true_alpha
        return y_only_params(*pair)

    def generative(self) -> GenerativeConfig:
        return GenerativeConfig(
            n=self.n,
            true_alpha=self.true_params(),
            seed=self.seed,
            strata_scheme=self.strata_scheme,
            rejection_mean_of_accepted=self.mean_of_accepted,
        )


_VALUE_ORACLES: dict = {}


def _value_oracle(cfg: GenerativeConfig, n_pool: int) -> TrueValueOracle:
    """Per-process cache of the frozen complier pool for a generative world."""
    key = (
        repr(cfg.true_alpha),
        cfg.phi,
        cfg.strata_scheme,
        repr(sorted(cfg.stratum_logits.items())),
        repr(sorted(cfg.arm_outcomes.items())),
        repr(cfg.instrument_coef),
        int(n_pool),
    )
    if key not in _VALUE_ORACLES:
        _VALUE_ORACLES[key] = TrueValueOracle(cfg, n_pool=n_pool)
    return _VALUE_ORACLES[key]


def _policy_true_value(spec, cfg, policy, replicate) -> float:
    if spec.value_protocol == "pool":
        return _value_oracle(cfg, spec.value_pool).value(policy)
    rng = np.random.default_rng((spec.seed, replicate, 555))
    return true_complier_value(
        policy, cfg.true_alpha, n_mc=spec.literal_mc, rng=rng, cfg=cfg
    )


def fit_masked_nuisances(
    dataset,
    masks,
    params=None,
    n_mc=3000,
    mc_seed=0,
    kappa=False,
    kappa_folds=5,
    kappa_config=None,
) -> NuisanceSet:
    """Fit the nuisance bundle with per-nuisance design masks.

    `masks` maps "fZ"/"fA"/"Q" to the feature indices kept in that design; a
    missing key means the full design. gamma always comes from the correctly
    specified outcome fit — a "Q" mask corrupts only the numerator outcome
    model, mirroring how the estimators separate the two roles.
    """
    masks = _normalized_masks(masks)
    instrument = fit_instrument(dataset, mask=masks.get("fZ", FULL_FEATURES))
    compliance = fit_compliance(dataset, mask=masks.get("fA", FULL_FEATURES))
    outcome = fit_outcome_density(dataset)
    outcome_q = fit_outcome_density(dataset, mask=masks["Q"]) if "Q" in masks else None
    ns = NuisanceSet(
        instrument=instrument,
        compliance=compliance,
        outcome=outcome,
        outcome_q=outcome_q,
        n_mc=n_mc,
        mc_seed=mc_seed,
    )
    if kappa:
        if params is None:
            raise ValueError("fitting kappa requires the analysis tilt parameters")
        ns.kappa = fit_kappa(
            dataset, ns, params, k_folds=kappa_folds, config=kappa_config or BoostConfig()
        )
    return ns


def _weights_for(method, dataset, ns, params):
    if method == "OWL":
        return owl_weights(dataset, ns)
    if method == "IVT":
        return ivt_weights(dataset, ns)
    if method == "IPW":
        return ipw_weights(dataset, ns, params)
    if method == "MR":
        return mr_weights(dataset, ns, params)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class SignPolicy:
    """Decision rule sign(m(x)) for a fitted regression m; ties act +1."""

    model: object

    def decide(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.where(self.model.predict(x) >= 0.0, 1, -1)


@dataclass(frozen=True)
class ConstantPolicy:
    """Degenerate decision rule that assigns one arm everywhere."""

    action: int

    def decide(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.full(x.shape[0], int(self.action), dtype=int)


def owl_baseline_weights(dataset, ns) -> WeightVector:
    """Baseline weights with outcomes shifted nonnegative by the sample min."""
    fz = ns.f_z(dataset.z, dataset.x)
    values = (dataset.y - float(dataset.y.min())) / fz
    return WeightVector(values=values, method="OWL", clipped_denominators=0,
                        zero_fraction=float(np.mean(values == 0.0)))


def owl_itt_policy(dataset, ns, rounds_grid=(0,), k_folds=5):
    """OWL baseline: outcome-weighted classification of the encouragement.

    The baseline treats the encouragement itself as the treatment, weighting
    each row by Y/f(Z|X), and — as outcome-weighted learning requires — makes
    the weights nonnegative by shifting outcomes by the sample minimum. The
    rule is the sign of a boosted regression of w*Z on X (that product's
    conditional mean is exactly the encouragement advantage), with the number
    of rounds as the complexity dial: zero rounds is the weighted majority
    vote between the two constant rules. A multi-entry grid selects rounds by
    K-fold weighted-agreement cross-validation under the one-standard-error
    rule; the default grid (0,) pins the baseline at its majority-vote
    endpoint.
    """
    grid = tuple(int(r) for r in rounds_grid)
    if not grid or any(r < 0 for r in grid):
        raise ValueError("rounds_grid must be a non-empty tuple of ints >= 0")
    w = owl_baseline_weights(dataset, ns).values
    target = w * dataset.z

    def fit_rule(rounds, x, t):
        if rounds == 0:
            return ConstantPolicy(1 if float(np.mean(t)) >= 0.0 else -1)
        return SignPolicy(fit_boosted(x, t, BoostConfig(n_rounds=rounds)))

    pick = grid[0]
    if len(grid) > 1:
        folds = np.arange(dataset.n) % k_folds
        scores = np.zeros((k_folds, len(grid)))
        for f in range(k_folds):
            tr, ho = folds != f, folds == f
            for gi, rounds in enumerate(grid):
                rule = fit_rule(rounds, dataset.x[tr], target[tr])
                agree = rule.decide(dataset.x[ho]) == dataset.z[ho]
                scores[f, gi] = float(np.mean(w[ho] * agree))
        means = scores.mean(axis=0)
        ses = scores.std(axis=0, ddof=1) / np.sqrt(k_folds)
        best = int(np.argmax(means))
        cutoff = means[best] - ses[best]
        pick = grid[next(i for i in range(len(grid)) if means[i] >= cutoff)]
    return fit_rule(pick, dataset.x, target)


def _learn(dataset, weights, spec):
    if spec.lambda_grid:
        lam = select_lambda(
            dataset, weights, LearnerConfig(lam=spec.lam, lambda_grid=spec.lambda_grid)
        )
    else:
        lam = spec.lam
    return learn_policy(dataset, weights, LearnerConfig(lam=lam)), float(lam)


def _method_policy(method, dataset, ns, params, spec):
    """Fit one method's policy; lambda is None for the baseline's own learner."""
    if method == "OWL":
        return owl_itt_policy(dataset, ns, rounds_grid=spec.owl_rounds), None
    return _learn(dataset, _weights_for(method, dataset, ns, params), spec)


def scenario_replicate(spec: ScenarioSpec, replicate: int) -> dict:
    """One replicate: generate, fit under masks, learn, score. Raises on failure."""
    cfg = spec.generative()
    dataset, truths = generate_trial(cfg, replicate=replicate)
    params = spec.analysis_params()
    ns = fit_masked_nuisances(
        dataset,
        spec.resolved_masks(),
        params=params,
        n_mc=spec.n_mc,
        mc_seed=_stream_seed(spec.seed, replicate, 1),
        kappa=spec.wants_estimators(),
        kappa_folds=spec.kappa_folds,
        kappa_config=BoostConfig(n_rounds=spec.kappa_rounds),
    )
    optimal = np.array([t.optimal_action for t in truths])
    record = {"replicate": int(replicate), "methods": {}}
    policies = {}
    for m in spec.methods:
        policy, lam = _method_policy(m, dataset, ns, params, spec)
        policies[m] = policy
        record["methods"][m] = {
            "rate": correct_classification_rate(policy, (dataset.x, optimal)),
            "value": _policy_true_value(spec, cfg, policy, replicate),
            "lambda": lam,
        }
    if spec.wants_estimators():
        policy = policies["IPW"]
        est_ipw = ipw_value(dataset, policy, ns, params)
        eif_mr = mr_value_eif(dataset, policy, ns, params)
        eif_psi = psi_mr_eif(dataset, ns, params)
        record["estimators"] = {
            "ipw": (est_ipw.estimate, est_ipw.se),
            "mr": (eif_mr.estimate, _se_of(eif_mr)),
            "mr_centering": abs(eif_mr.centering),
            "psi_centering": abs(eif_psi.centering),
        }
    return record


def _scenario_worker(task):
    spec, replicate = task
    try:
        return scenario_replicate(spec, replicate)
    except Exception as exc:  # replicate failures are data, not crashes
        return {"replicate": int(replicate), "failed": f"{type(exc).__name__}: {exc}"}


def _run_tasks(worker, tasks, jobs):
    if jobs > 1:
        chunk = max(1, len(tasks) // (8 * jobs))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, tasks, chunksize=chunk))
    else:
        results = [worker(t) for t in tasks]
    results.sort(key=lambda r: r.get("replicate", r.get("resample", 0)))
    return results


def _split_outcomes(results, replicates):
    failures = [(r["replicate"], r["failed"]) for r in results if "failed" in r]
    good = [r for r in results if "failed" not in r]
    invalid = len(failures) > 0.05 * replicates
    return good, failures, invalid


def _mean_sd(values):
    arr = np.asarray(values, dtype=float)
    mean = float(np.mean(arr))
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


@dataclass(frozen=True)
class ScenarioResult:
    """Per-replicate records plus failure bookkeeping for one scenario."""

    spec: ScenarioSpec
    records: list
    failures: list
    invalid: bool

    ESTIMATOR_ROWS = (
        ("EST_IPW", "estimate", "ipw", 0),
        ("EST_IPW", "se", "ipw", 1),
        ("EST_MR", "estimate", "mr", 0),
        ("EST_MR", "se", "mr", 1),
        ("EST_MR", "centering", "mr_centering", None),
        ("EST_PSI", "centering", "psi_centering", None),
    )

    def summary(self) -> dict:
        """(method, metric) -> (mean, sd) over successful replicates."""
        if not self.records:
            return {}
        table = {}
        for m in self.spec.methods:
            for metric in ("rate", "value"):
                table[(m, metric)] = _mean_sd(
                    [r["methods"][m][metric] for r in self.records]
                )
        if self.records[0].get("estimators"):
            for method, metric, key, idx in self.ESTIMATOR_ROWS:
                vals = [
                    r["estimators"][key] if idx is None else r["estimators"][key][idx]
                    for r in self.records
                ]
                table[(method, metric)] = _mean_sd(vals)
        return table

    def summary_csv(self) -> str:
        lines = [SUMMARY_HEADER]
        tail = f"{len(self.records)},{len(self.failures)}"
        for (method, metric), (mean, sd) in self.summary().items():
            lines.append(
                f"{self.spec.scenario},{self.spec.family},{method},{metric},"
                f"{_fmt(mean)},{_fmt(sd)},{tail}"
            )
        return "\n".join(lines) + "\n"

    def replicates_csv(self) -> str:
        lines = [REPLICATES_HEADER]
        for r in self.records:
            for m in self.spec.methods:
                for metric in ("rate", "value", "lambda"):
                    v = r["methods"][m][metric]
                    if v is None:
                        continue
                    lines.append(f"{r['replicate']},{m},{metric},{_fmt(v)}")
            if r.get("estimators"):
                for method, metric, key, idx in self.ESTIMATOR_ROWS:
                    v = r["estimators"][key] if idx is None else r["estimators"][key][idx]
                    lines.append(f"{r['replicate']},{method},{metric},{_fmt(v)}")
        return "\n".join(lines) + "\n"

    def log_lines(self) -> list:
        lines = [
            f"scenario={self.spec.scenario} family={self.spec.family} "
            f"n={self.spec.n} replicates={self.spec.replicates} seed={self.spec.seed}"
        ]
        for r in self.records:
            lams = " ".join(
                f"{m}={_fmt(r['methods'][m]['lambda'])}"
                for m in self.spec.methods
                if r["methods"][m]["lambda"] is not None
            )
            lines.append(f"replicate={r['replicate']} lambda {lams}")
        for replicate, message in self.failures:
            lines.append(f"replicate={replicate} FAILED {message}")
        lines.append(
            f"completed={len(self.records)} failed={len(self.failures)} "
            f"invalid={str(self.invalid).lower()}"
        )
        return lines


def run_scenario(spec: ScenarioSpec, jobs: int = 1) -> ScenarioResult:
    """Run every replicate of a scenario, skipping and logging failures."""
    tasks = [(spec, r) for r in range(spec.replicates)]
    results = _run_tasks(_scenario_worker, tasks, jobs)
    good, failures, invalid = _split_outcomes(results, spec.replicates)
    return ScenarioResult(spec=spec, records=good, failures=failures, invalid=invalid)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of analysis tilts applied to data generated at one true tilt."""

    grid_minus: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)
    grid_plus: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)
    true_alpha: tuple = (0.5, -0.5)
    methods: tuple = METHODS
    n: int = 500
    replicates: int = 100
    seed: int = 0
    n_mc: int = 3000
    lam: float = 0.01
    lambda_grid: tuple = ()
    owl_rounds: tuple = (0,)
    value_pool: int = 200_000
    value_protocol: str = "pool"
    literal_mc: int = 200_000
    strata_scheme: str = "s4_first"
    mean_of_accepted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "grid_minus", tuple(float(v) for v in self.grid_minus))
        object.__setattr__(self, "grid_plus", tuple(float(v) for v in self.grid_plus))
        object.__setattr__(self, "methods", _check_methods(self.methods))
        object.__setattr__(self, "true_alpha", _pair(self.true_alpha, "true_alpha"))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "owl_rounds", tuple(int(r) for r in self.owl_rounds))
        if not self.grid_minus or not self.grid_plus:
            raise ValueError("sweep grid is empty")
        if self.n < 2 or self.replicates < 1:
            raise ValueError("n must be >= 2 and replicates >= 1")
        if self.value_protocol not in ("pool", "literal"):
            raise ValueError("value_protocol must be 'pool' or 'literal'")

    def cells(self):
        return [(am, ap) for am in self.grid_minus for ap in self.grid_plus]

    def free_methods(self):
        return tuple(m for m in self.methods if m in ("OWL", "IVT"))

    def tilted_methods(self):
        return tuple(m for m in self.methods if m in ("IPW", "MR"))

    def generative(self) -> GenerativeConfig:
        return GenerativeConfig(
            n=self.n,
            true_alpha=y_only_params(*self.true_alpha),
            seed=self.seed,
            strata_scheme=self.strata_scheme,
            rejection_mean_of_accepted=self.mean_of_accepted,
        )


def sweep_replicate(spec: SweepSpec, replicate: int) -> dict:
    """One replicate scored at every grid tilt; fits are reused across cells."""
    cfg = spec.generative()
    dataset, truths = generate_trial(cfg, replicate=replicate)
    ns = fit_masked_nuisances(
        dataset, {}, n_mc=spec.n_mc, mc_seed=_stream_seed(spec.seed, replicate, 1)
    )
    optimal = np.array([t.optimal_action for t in truths])
    record = {"replicate": int(replicate), "free": {}, "cells": {}}

    def scored(policy, lam):
        return {
            "rate": correct_classification_rate(policy, (dataset.x, optimal)),
            "value": _policy_true_value(spec, cfg, policy, replicate),
            "lambda": lam,
        }

    for m in spec.free_methods():
        policy, lam = _method_policy(m, dataset, ns, None, spec)
        record["free"][m] = scored(policy, lam)
    for am, ap in spec.cells():
        params = y_only_params(am, ap)
        cell = {}
        for m in spec.tilted_methods():
            policy, lam = _learn(dataset, _weights_for(m, dataset, ns, params), spec)
            cell[m] = scored(policy, lam)
        record["cells"][(am, ap)] = cell
    return record


def _sweep_worker(task):
    spec, replicate = task
    try:
        return sweep_replicate(spec, replicate)
    except Exception as exc:
        return {"replicate": int(replicate), "failed": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class SweepResult:
    """Per-replicate sweep records; cell summaries broadcast tilt-free methods."""

    spec: SweepSpec
    records: list
    failures: list
    invalid: bool

    def free_summary(self) -> dict:
        table = {}
        for m in self.spec.free_methods():
            for metric in ("rate", "value"):
                table[(m, metric)] = _mean_sd(
                    [r["free"][m][metric] for r in self.records]
                )
        return table

    def cell_summary(self) -> dict:
        """(alpha_minus, alpha_plus, method, metric) -> (mean, sd)."""
        table = {}
        free = self.free_summary()
        for am, ap in self.spec.cells():
            for m in self.spec.tilted_methods():
                for metric in ("rate", "value"):
                    table[(am, ap, m, metric)] = _mean_sd(
                        [r["cells"][(am, ap)][m][metric] for r in self.records]
                    )
            for (m, metric), stat in free.items():
                table[(am, ap, m, metric)] = stat
        return table

    def beats_fraction(self, method: str, reference: str = "IVT",
                       metric: str = "value") -> float:
        """Fraction of grid cells where `method` outscores the tilt-free reference."""
        ref, _ = self.free_summary()[(reference, metric)]
        cells = self.spec.cells()
        summary = self.cell_summary()
        wins = sum(1 for c in cells if summary[(c[0], c[1], method, metric)][0] > ref)
        return wins / len(cells)

    def to_csv(self) -> str:
        lines = [SWEEP_HEADER]
        summary = self.cell_summary()
        for am, ap in self.spec.cells():
            rows = [
                (f"{m.lower()}_{metric}", summary[(am, ap, m, metric)])
                for m in self.spec.methods
                for metric in ("rate", "value")
            ]
            for name, (mean, sd) in sorted(rows):
                lines.append(f"{_fmt(am)},{_fmt(ap)},{name},{_fmt(mean)},{_fmt(sd)}")
        return "\n".join(lines) + "\n"

    def log_lines(self) -> list:
        lines = [
            f"sweep true_alpha=({_fmt(self.spec.true_alpha[0])},"
            f"{_fmt(self.spec.true_alpha[1])}) n={self.spec.n} "
            f"replicates={self.spec.replicates} seed={self.spec.seed} "
            f"cells={len(self.spec.cells())}"
        ]
        for replicate, message in self.failures:
            lines.append(f"replicate={replicate} FAILED {message}")
        lines.append(
            f"completed={len(self.records)} failed={len(self.failures)} "
            f"invalid={str(self.invalid).lower()}"
        )
        return lines


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Score the analysis-tilt grid; one shared nuisance fit per replicate."""
    tasks = [(spec, r) for r in range(spec.replicates)]
    results = _run_tasks(_sweep_worker, tasks, jobs)
    good, failures, invalid = _split_outcomes(results, spec.replicates)
    return SweepResult(spec=spec, records=good, failures=failures, invalid=invalid)


@dataclass(frozen=True)
class TrainTestSpec:
    """Repeated train/test splits of one dataset with a known randomization."""

    source: str = "trial"
    n: int = 500
    resamples: int = 100
    split_ratio: float = 0.6
    methods: tuple = METHODS
    grid_minus: tuple = (0.5,)
    grid_plus: tuple = (0.5,)
    true_alpha: tuple = (0.5, 0.5)
    seed: int = 0
    n_mc: int = 3000
    lam: float = 0.01
    lambda_grid: tuple = ()
    owl_rounds: tuple = (0,)
    dataset_replicate: int = 0
    strata_scheme: str = "s4_first"
    mean_of_accepted: bool = False

    def __post_init__(self):
        if self.source not in ("trial", "discrete"):
            raise ValueError("source must be 'trial' or 'discrete'")
        object.__setattr__(self, "methods", _check_methods(self.methods))
        object.__setattr__(self, "grid_minus", tuple(float(v) for v in self.grid_minus))
        object.__setattr__(self, "grid_plus", tuple(float(v) for v in self.grid_plus))
        object.__setattr__(self, "true_alpha", _pair(self.true_alpha, "true_alpha"))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "owl_rounds", tuple(int(r) for r in self.owl_rounds))
        if not self.grid_minus or not self.grid_plus:
            raise ValueError("tilt grid is empty")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0,1)")
        if self.n < 10 or self.resamples < 1:
            raise ValueError("n must be >= 10 and resamples >= 1")

    def cells(self):
        return [(am, ap) for am in self.grid_minus for ap in self.grid_plus]


_TRAINTEST_WORLDS: dict = {}


def _traintest_world(spec: TrainTestSpec):
    """Per-process cache: (dataset, known f(z|x) callable) for a split study."""
    key = repr(spec)
    if key in _TRAINTEST_WORLDS:
        return _TRAINTEST_WORLDS[key]
    if spec.source == "discrete":
        oracle = build_discrete_oracle()
        rng = np.random.default_rng((spec.seed, 9090))
        dataset, _ = oracle.sample(spec.n, rng)

        def known_fz(z, x):
            return oracle.f_z_true(z, oracle.atom_index(x))

    else:
        cfg = GenerativeConfig(
            n=spec.n,
            true_alpha=y_only_params(*spec.true_alpha),
            seed=spec.seed,
            strata_scheme=spec.strata_scheme,
            rejection_mean_of_accepted=spec.mean_of_accepted,
        )
        dataset, _ = generate_trial(cfg, replicate=spec.dataset_replicate)
        c0, c1, c2 = cfg.instrument_coef

        def known_fz(z, x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            eta = c0 + c1 * x[:, 0] + c2 * x[:, 1]
            return expit(np.asarray(z, dtype=float) * eta)

    _TRAINTEST_WORLDS[key] = (dataset, known_fz)
    return _TRAINTEST_WORLDS[key]


def _subset(dataset: Dataset, idx) -> Dataset:
    return Dataset(x=dataset.x[idx], z=dataset.z[idx], a=dataset.a[idx], y=dataset.y[idx])


def traintest_resample(spec: TrainTestSpec, resample: int) -> dict:
    """One split: learn on the train part, score every policy on the test part."""
    dataset, known_fz = _traintest_world(spec)
    rng = np.random.default_rng((spec.seed, resample, 977))
    perm = rng.permutation(dataset.n)
    n_train = int(round(spec.split_ratio * dataset.n))
    train = _subset(dataset, np.sort(perm[:n_train]))
    test = _subset(dataset, np.sort(perm[n_train:]))
    # the two-point world's second coordinate is affine in the first, so the
    # full design is rank-deficient there; one feature separates the atoms
    features = (0,) if spec.source == "discrete" else FULL_FEATURES
    ns = NuisanceSet(
        instrument=fit_instrument(train, mask=features),
        compliance=fit_compliance(train, mask=features),
        outcome=fit_outcome_density(train, mask=features),
        n_mc=spec.n_mc,
        mc_seed=_stream_seed(spec.seed, resample, 2),
    )
    record = {"resample": int(resample), "cells": {}}
    free = {}
    for m in spec.methods:
        if m in ("OWL", "IVT"):
            free[m], _ = _method_policy(m, train, ns, None, spec)
    for am, ap in spec.cells():
        params = y_only_params(am, ap)
        cell = {}
        for m in spec.methods:
            policy = free.get(m)
            if policy is None:
                policy, _ = _learn(train, _weights_for(m, train, ns, params), spec)
            eif = mr_value_known_fz_eif(test, policy, ns, params, known_fz)
            cell[m] = (eif.estimate, _se_of(eif))
        record["cells"][(am, ap)] = cell
    return record


def _traintest_worker(task):
    spec, resample = task
    try:
        return traintest_resample(spec, resample)
    except Exception as exc:
        return {"resample": int(resample), "failed": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class TrainTestResult:
    """Split-study estimates per tilt cell, plus pairwise policy differences."""

    spec: TrainTestSpec
    records: list
    failures: list
    invalid: bool

    def cell_summary(self) -> dict:
        """(am, ap, method) -> (mean estimate, mean se, sd of estimates)."""
        table = {}
        for am, ap in self.spec.cells():
            for m in self.spec.methods:
                ests = [r["cells"][(am, ap)][m][0] for r in self.records]
                ses = [r["cells"][(am, ap)][m][1] for r in self.records]
                mean, sd = _mean_sd(ests)
                table[(am, ap, m)] = (mean, float(np.mean(ses)), sd)
        return table

    def difference_summary(self) -> dict:
        """(am, ap, method_a, method_b) -> (mean, sd) of per-split differences."""
        table = {}
        pairs = [
            (a, b)
            for i, a in enumerate(self.spec.methods)
            for b in self.spec.methods[i + 1 :]
        ]
        for am, ap in self.spec.cells():
            for a, b in pairs:
                diffs = [
                    r["cells"][(am, ap)][a][0] - r["cells"][(am, ap)][b][0]
                    for r in self.records
                ]
                table[(am, ap, a, b)] = _mean_sd(diffs)
        return table

    def direction_fraction(self, method_a: str = "MR", method_b: str = "OWL") -> float:
        """Fraction of tilt cells where method_a's mean value >= method_b's."""
        summary = self.cell_summary()
        cells = self.spec.cells()
        wins = sum(
            1
            for am, ap in cells
            if summary[(am, ap, method_a)][0] >= summary[(am, ap, method_b)][0]
        )
        return wins / len(cells)

    def to_csv(self) -> str:
        lines = [TRAINTEST_HEADER]
        tail = f"{len(self.records)},{len(self.failures)}"
        summary = self.cell_summary()
        for am, ap in self.spec.cells():
            for m in self.spec.methods:
                mean, mean_se, sd = summary[(am, ap, m)]
                lines.append(
                    f"{_fmt(am)},{_fmt(ap)},{m},{_fmt(mean)},{_fmt(mean_se)},"
                    f"{_fmt(sd)},{tail}"
                )
        return "\n".join(lines) + "\n"

    def differences_csv(self) -> str:
        lines = [DIFFERENCES_HEADER]
        summary = self.difference_summary()
        for am, ap in self.spec.cells():
            for (cam, cap, a, b), (mean, sd) in summary.items():
                if (cam, cap) == (am, ap):
                    lines.append(
                        f"{_fmt(am)},{_fmt(ap)},{a},{b},{_fmt(mean)},{_fmt(sd)}"
                    )
        return "\n".join(lines) + "\n"

    def log_lines(self) -> list:
        lines = [
            f"traintest source={self.spec.source} n={self.spec.n} "
            f"resamples={self.spec.resamples} split={_fmt(self.spec.split_ratio)} "
            f"seed={self.spec.seed} cells={len(self.spec.cells())}"
        ]
        for resample, message in self.failures:
            lines.append(f"resample={resample} FAILED {message}")
        lines.append(
            f"completed={len(self.records)} failed={len(self.failures)} "
            f"invalid={str(self.invalid).lower()}"
        )
        return lines


def run_train_test(spec: TrainTestSpec, jobs: int = 1) -> TrainTestResult:
    """Repeat the train/test protocol; aggregation is sorted by resample id."""
    tasks = [(spec, s) for s in range(spec.resamples)]
    results = _run_tasks(_traintest_worker, tasks, jobs)
    failures = [(r["resample"], r["failed"]) for r in results if "failed" in r]
    good = [r for r in results if "failed" not in r]
    invalid = len(failures) > 0.05 * spec.resamples
    return TrainTestResult(spec=spec, records=good, failures=failures, invalid=invalid)


def policy_value_difference(dataset, policy_a, policy_b, ns, params, true_fz) -> float:
    """d(pi, pi') = difference of known-randomization value estimates."""
    a = mr_value_known_fz_eif(dataset, policy_a, ns, params, true_fz)
    b = mr_value_known_fz_eif(dataset, policy_b, ns, params, true_fz)
    return a.estimate - b.estimate


# --------------------------------------------------------------- JSON specs


def params_from_config(obj) -> SensitivityParams:
    """Tilt parameters from JSON: [minus_slope, plus_slope] or a full mapping."""
    if isinstance(obj, (list, tuple)):
        return y_only_params(*_pair(obj, "alpha"))
    if not isinstance(obj, dict):
        raise ValueError("alpha must be a two-item list or a mapping")
    form = obj.get("form", "Y_ONLY")
    arms = {}
    for side in ("minus", "plus"):
        arm = obj.get(side)
        if not isinstance(arm, dict):
            raise ValueError(f"alpha mapping needs a {side!r} arm object")
        arms[side] = ArmAlpha(
            a0=float(arm.get("a0", 0.0)),
            aY=float(arm.get("aY", 0.0)),
            aX=np.asarray(arm.get("aX", ()), dtype=float),
        )
    loading = obj.get("loading")
    if loading is not None:
        loading = np.asarray(loading, dtype=float)
    return SensitivityParams(form=form, minus=arms["minus"], plus=arms["plus"],
                             loading=loading)


def _take(config: dict, allowed: dict, label: str) -> dict:
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ValueError(
            f"unknown {label} config keys {unknown}; allowed: {sorted(allowed)}"
        )
    out = {}
    for key, convert in allowed.items():
        if key in config and config[key] is not None:
            out[key] = convert(config[key])
    return out


_SCENARIO_KEYS = {
    "scenario": str,
    "family": str,
    "methods": tuple,
    "true_alpha": tuple,
    "analysis_alpha": tuple,
    "n": int,
    "replicates": int,
    "seed": int,
    "split_ratio": float,
    "masks": dict,
    "estimators": bool,
    "n_mc": int,
    "lam": float,
    "lambda_grid": tuple,
    "owl_rounds": tuple,
    "kappa_rounds": int,
    "kappa_folds": int,
    "value_pool": int,
    "value_protocol": str,
    "literal_mc": int,
    "strata_scheme": str,
    "mean_of_accepted": bool,
}

_SWEEP_KEYS = {
    "grid_minus": tuple,
    "grid_plus": tuple,
    "true_alpha": tuple,
    "methods": tuple,
    "n": int,
    "replicates": int,
    "seed": int,
    "n_mc": int,
    "lam": float,
    "lambda_grid": tuple,
    "owl_rounds": tuple,
    "value_pool": int,
    "value_protocol": str,
    "literal_mc": int,
    "strata_scheme": str,
    "mean_of_accepted": bool,
}

_TRAINTEST_KEYS = {
    "source": str,
    "n": int,
    "resamples": int,
    "split_ratio": float,
    "methods": tuple,
    "grid_minus": tuple,
    "grid_plus": tuple,
    "true_alpha": tuple,
    "seed": int,
    "n_mc": int,
    "lam": float,
    "lambda_grid": tuple,
    "owl_rounds": tuple,
    "dataset_replicate": int,
    "strata_scheme": str,
    "mean_of_accepted": bool,
}


def scenario_spec_from_config(config: dict, seed=None) -> ScenarioSpec:
    spec = ScenarioSpec(**_take(config, _SCENARIO_KEYS, "scenario"))
    return replace(spec, seed=int(seed)) if seed is not None else spec


def sweep_spec_from_config(config: dict, seed=None) -> SweepSpec:
    spec = SweepSpec(**_take(config, _SWEEP_KEYS, "sweep"))
    return replace(spec, seed=int(seed)) if seed is not None else spec


def traintest_spec_from_config(config: dict, seed=None) -> TrainTestSpec:
    spec = TrainTestSpec(**_take(config, _TRAINTEST_KEYS, "traintest"))
    return replace(spec, seed=int(seed)) if seed is not None else spec
