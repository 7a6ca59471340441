"""Per-subject classification weights for policy learning.

Four constructions: the sensitivity-parameterized IPW weight, the multiply
robust weight (IPW core plus the Q/delta augmentation and the blip term),
and two baselines — OWL (intention-to-treat, instrument as treatment) and
IVT (binary-compliance instrumental-variable weight).

Every weight has a scalar per-observation form mirroring the defining
display plus a vectorized dataset form used everywhere in practice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import Dataset
from .nuisance import NuisanceSet
from .sensitivity import SensitivityParams, sensitivity_score


@dataclass(frozen=True)
class WeightVector:
    """Weights per dataset row with basic diagnostics."""

    values: np.ndarray
    method: str
    clipped_denominators: int
    zero_fraction: float

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=float)
        )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("weights must be finite")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("row,weight,method\n")
            for i, v in enumerate(self.values):
                fh.write(f"{i},{'%.17g' % v},{self.method}\n")


def _clip_snapshot(ns):
    return ns.instrument.clip_events + ns.compliance.clip_events


def _pack(values, method, ns, before):
    values = np.asarray(values, dtype=float)
    return WeightVector(
        values=values,
        method=method,
        clipped_denominators=_clip_snapshot(ns) - before,
        zero_fraction=float(np.mean(values == 0.0)),
    )


def ipw_weights(dataset: Dataset, ns: NuisanceSet, params: SensitivityParams):
    """W = A(A+Z) Y w / (2 gamma f(A|Z,X) f(Z|X)); zero off the A=Z event."""
    before = _clip_snapshot(ns)
    n = dataset.n
    values = np.zeros(n)
    for z in (-1, 1):
        sel = (dataset.a == z) & (dataset.z == z)
        if not np.any(sel):
            continue
        x = dataset.x[sel]
        y = dataset.y[sel]
        w = expit(sensitivity_score(params, z, x, y))
        _, gamma = ns.q_gamma(z, x, params)
        fa = ns.f_a(z, z, x)
        fz = ns.f_z(z, x)
        # a(a+z) = 2 on these rows, cancelling the 1/2
        values[sel] = y * w / (gamma * fa * fz)
    return _pack(values, "IPW", ns, before)


def blip(ns: NuisanceSet, params: SensitivityParams, x):
    """Delta(x) = delta(1,1,x) - delta(-1,-1,x), vectorized over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return ns.delta(1, x, params) - ns.delta(-1, x, params)


def mr_weights(dataset: Dataset, ns: NuisanceSet, params: SensitivityParams):
    """W_mr = A(A+Z)/(2 gamma f) [Yw - Q - delta(w-gamma)] + Z Delta(X)."""
    before = _clip_snapshot(ns)
    values = dataset.z * blip(ns, params, dataset.x)
    for z in (-1, 1):
        sel = (dataset.a == z) & (dataset.z == z)
        if not np.any(sel):
            continue
        x = dataset.x[sel]
        y = dataset.y[sel]
        w = expit(sensitivity_score(params, z, x, y))
        q, gamma = ns.q_gamma(z, x, params)
        delta = q / gamma
        fa = ns.f_a(z, z, x)
        fz = ns.f_z(z, x)
        bracket = y * w - q - delta * (w - gamma)
        values[sel] += bracket / (gamma * fa * fz)
    return _pack(values, "MR", ns, before)


def owl_weights(dataset: Dataset, ns: NuisanceSet):
    """OWL baseline: Y / f(Z|X), the instrument treated as the treatment."""
    before = _clip_snapshot(ns)
    fz = ns.f_z(dataset.z, dataset.x)
    return _pack(dataset.y / fz, "OWL", ns, before)


def compliance_rate_difference(dataset: Dataset) -> float:
    """p_hat(A=1|Z=1) - p_hat(A=1|Z=-1) by sample proportions."""
    sel_p = dataset.z == 1
    sel_m = dataset.z == -1
    if not (np.any(sel_p) and np.any(sel_m)):
        raise ValueError("both instrument arms required")
    return float(
        np.mean(dataset.a[sel_p] == 1) - np.mean(dataset.a[sel_m] == 1)
    )


def ivt_weights(dataset: Dataset, ns: NuisanceSet):
    """IVT baseline: Z A Y / (f(Z|X) * {p(A=1|Z=1) - p(A=1|Z=-1)})."""
    before = _clip_snapshot(ns)
    diff = compliance_rate_difference(dataset)
    if diff <= 0:
        raise ValueError(
            f"compliance-rate difference {diff:.4f} <= 0: instrument too weak"
        )
    fz = ns.f_z(dataset.z, dataset.x)
    values = dataset.z * dataset.a * dataset.y / (fz * diff)
    return _pack(values, "IVT", ns, before)


# -- scalar per-observation forms ------------------------------------------


def _single(dataset_fn, obs, *args):
    ds = Dataset(
        x=np.atleast_2d(obs.x), z=[obs.z], a=[obs.a], y=[obs.y]
    )
    return float(dataset_fn(ds, *args).values[0])


def ipw_weight(obs, ns, params):
    return _single(ipw_weights, obs, ns, params)


def mr_weight(obs, ns, params):
    return _single(mr_weights, obs, ns, params)


def owl_weight(obs, ns):
    return _single(owl_weights, obs, ns)


def ivt_weight(obs, ns, dataset):
    """Scalar IVT weight; the compliance-rate difference comes from `dataset`."""
    diff = compliance_rate_difference(dataset)
    if diff <= 0:
        raise ValueError(
            f"compliance-rate difference {diff:.4f} <= 0: instrument too weak"
        )
    fz = float(ns.f_z(obs.z, np.atleast_2d(obs.x))[0])
    return obs.z * obs.a * obs.y / (fz * diff)
