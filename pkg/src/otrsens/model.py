"""Core domain types: trial observations, datasets, principal strata, linear
policies, and point estimates with influence-function standard errors.

Everything here is a frozen dataclass over numpy arrays; operations are pure
functions so instances can be shared freely across workers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

VALID_Z = (-1, 1)
VALID_A = (-1, 0, 1)

#: Table of principal strata: label -> (compliance under z=-1, under z=+1).
#: S7-S9 are the defier-type strata excluded under monotonicity.
STRATA = {
    "S1": (-1, -1),
    "S2": (1, 1),
    "S3": (0, 0),
    "S4": (-1, 1),
    "S5": (-1, 0),
    "S6": (0, 1),
    "S7": (1, -1),
    "S8": (1, 0),
    "S9": (0, -1),
}

MONOTONE_STRATA = ("S1", "S2", "S3", "S4", "S5", "S6")


@dataclass(frozen=True)
class Observation:
    """One subject: covariates x, instrument z, compliance a, outcome y."""

    x: np.ndarray
    z: int
    a: int
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if self.z not in VALID_Z:
            raise ValueError(f"z must be in {VALID_Z}, got {self.z}")
        if self.a not in VALID_A:
            raise ValueError(f"a must be in {VALID_A}, got {self.a}")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        if not np.isfinite(self.y):
            raise ValueError("outcome must be finite")


@dataclass(frozen=True)
class Dataset:
    """Column-major container for n observations.

    Stored as arrays (x: n×d, z/a: int vectors, y: float vector) because every
    estimator in the package is vectorized; `rows()` reconstructs Observation
    objects when object-style access is wanted. Row order is preserved and
    meaningful only for reproducibility — estimators are order-invariant.
    """

    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        z = np.asarray(self.z, dtype=int)
        a = np.asarray(self.a, dtype=int)
        y = np.asarray(self.y, dtype=float)
        if x.shape[0] != z.shape[0] or z.shape != a.shape or a.shape != y.shape:
            raise ValueError("column lengths disagree")
        if x.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isin(z, VALID_Z)):
            raise ValueError("instrument values must be -1 or +1")
        if not np.all(np.isin(a, VALID_A)):
            raise ValueError("compliance values must be -1, 0 or +1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("covariates and outcomes must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    def rows(self):
        return [
            Observation(self.x[i], int(self.z[i]), int(self.a[i]), float(self.y[i]))
            for i in range(self.n)
        ]

    @staticmethod
    def from_rows(rows) -> "Dataset":
        if not rows:
            raise ValueError("dataset is empty")
        d = len(np.atleast_1d(rows[0].x))
        if any(len(np.atleast_1d(r.x)) != d for r in rows):
            raise ValueError("covariate dimension differs across rows")
        return Dataset(
            x=np.stack([np.atleast_1d(r.x) for r in rows]),
            z=np.array([r.z for r in rows]),
            a=np.array([r.a for r in rows]),
            y=np.array([r.y for r in rows]),
        )

    def require_both_arms(self):
        """Nuisance fits need both instrument arms present."""
        if not (np.any(self.z == 1) and np.any(self.z == -1)):
            raise ValueError("both instrument arms required")

    # -- CSV round trip: header x1..xk,z,a,y; floats at 17 significant digits

    def to_csv(self, path):
        d = self.dim_x
        header = ",".join([f"x{j + 1}" for j in range(d)] + ["z", "a", "y"])
        buf = io.StringIO()
        buf.write(header + "\n")
        for i in range(self.n):
            cells = ["%.17g" % v for v in self.x[i]]
            cells += [str(int(self.z[i])), str(int(self.a[i])), "%.17g" % self.y[i]]
            buf.write(",".join(cells) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    @staticmethod
    def from_csv(path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[-3:] != ["z", "a", "y"]:
                raise ValueError("expected trailing columns z,a,y")
            d = len(header) - 3
            raw = np.loadtxt(fh, delimiter=",", ndmin=2)
        if raw.shape[1] != d + 3:
            raise ValueError("column count does not match header")
        return Dataset(
            x=raw[:, :d],
            z=raw[:, d].astype(int),
            a=raw[:, d + 1].astype(int),
            y=raw[:, d + 2],
        )


@dataclass(frozen=True)
class PrincipalStratum:
    """A principal stratum: potential compliance under each instrument arm."""

    label: str
    a_minus: int = field(init=False)
    a_plus: int = field(init=False)

    def __post_init__(self):
        if self.label not in STRATA:
            raise ValueError(f"unknown stratum {self.label!r}")
        am, ap = STRATA[self.label]
        object.__setattr__(self, "a_minus", am)
        object.__setattr__(self, "a_plus", ap)

    @property
    def is_defier_type(self) -> bool:
        return self.label in ("S7", "S8", "S9")

    def compliance(self, z: int) -> int:
        return self.a_plus if z == 1 else self.a_minus


@dataclass(frozen=True)
class LinearPolicy:
    """Regime pi(x) = sign(beta0 + beta.x), with sign(0) = +1."""

    beta0: float
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.beta.shape[0]:
            raise ValueError(
                f"covariate dim {x.shape[1]} != policy dim {self.beta.shape[0]}"
            )
        return self.beta0 + x @ self.beta

    def decide(self, x: np.ndarray) -> np.ndarray:
        """Vector of actions in {-1,+1}; exact zeros break toward +1."""
        g = self.decision_values(x)
        return np.where(g >= 0.0, 1, -1)


@dataclass(frozen=True)
class EstimateWithSE:
    """Point estimate plus SE from per-subject influence contributions."""

    estimate: float
    se: float
    n: int
    method: str

    METHODS = ("IPW", "MR", "MR_KNOWN_FZ", "OWL", "IVT")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise ValueError(f"method must be one of {self.METHODS}")
        if not self.se >= 0:
            raise ValueError("se must be nonnegative")

    @staticmethod
    def from_contributions(contrib: np.ndarray, method: str) -> "EstimateWithSE":
        contrib = np.asarray(contrib, dtype=float)
        n = contrib.shape[0]
        est = float(np.mean(contrib))
        se = float(np.std(contrib, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return EstimateWithSE(estimate=est, se=se, n=n, method=method)


def policy_decide(policy: LinearPolicy, x) -> int:
    """Action of `policy` at a single covariate vector."""
    return int(policy.decide(np.atleast_2d(np.asarray(x, dtype=float)))[0])


def correct_classification_rate(policy: LinearPolicy, eval_set) -> float:
    """Fraction of (x, optimal_action) pairs where the policy agrees.

    `eval_set` may be a list of (x, action) pairs or a pair of arrays.
    """
    if isinstance(eval_set, tuple) and len(eval_set) == 2:
        xs, acts = eval_set
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        acts = np.asarray(acts)
    else:
        eval_set = list(eval_set)
        if not eval_set:
            raise ValueError("evaluation set is empty")
        xs = np.stack([np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in eval_set])
        acts = np.array([a for _, a in eval_set])
    if xs.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    return float(np.mean(policy.decide(xs) == acts))
