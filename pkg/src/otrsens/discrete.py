"""Exact finite world for checking the estimators by enumeration.

Two covariate atoms and a binary outcome per (z, a) cell keep every nuisance
closed-form and every estimator expectation a finite 24-term sum. On rows
with A = Z the outcome mixes the tilted complier law with its complement
tilt, so the observed diagonal law is exactly the arm density and the tilt
w(y) is exactly the complier-membership probability. The compliance table is
solved so the complier share is identical at both atoms, which makes the
complier covariate law coincide with the marginal one.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .datagen import TruthRecord
from .model import Dataset
from .nuisance import NuisanceSet
from .sensitivity import ArmAlpha, SensitivityParams, sensitivity_score

Y_VALUES = (-1.0, 1.0)

# deliberately wrong tables for the single-corruption protocols
CORRUPT_FZ_PLUS = (0.30, 0.80)
CORRUPT_FA = {
    -1: np.array([[0.20, 0.20], [0.45, 0.45], [0.35, 0.35]]),
    1: np.array([[0.38, 0.38], [0.40, 0.40], [0.22, 0.22]]),
}


def _corrupt_q(q):
    return 0.6 * q + 0.35


def _corrupt_kappa(values, z):
    return values + 0.4 * z - 0.25


@dataclass(frozen=True)
class DiscreteOracle:
    """Two-atom observable world with closed-form truths."""

    x_atoms: np.ndarray       # (2, 2) covariate atoms
    p_x: np.ndarray           # (2,) marginal atom masses
    fz_plus: np.ndarray       # (2,) P(Z=+1 | atom)
    fa_table: dict            # {z: (3, 2) array over a in (-1, 0, 1) x atom}
    arm_plus: dict            # {z: (2,) P(Y=+1 | A=Z=z, atom)}
    offdiag_plus: dict        # {(z, a): (2,) P(Y=+1 | z, a, atom)}
    true_alpha: SensitivityParams

    # ---------------------------------------------------------- lookups

    def atom_index(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.argmin(np.abs(x[:, 0:1] - self.x_atoms[None, :, 0]), axis=1)

    def f_z_true(self, z, i):
        p = self.fz_plus[i]
        return np.where(np.asarray(z) == 1, p, 1.0 - p)

    def plus_prob(self, z, a, i):
        table = self.arm_plus[z] if a == z else self.offdiag_plus[(z, a)]
        return table[i]

    def w_at(self, params, z, i, y):
        x = self.x_atoms[np.atleast_1d(i)]
        y = np.broadcast_to(np.asarray(y, dtype=float), (x.shape[0], 1))
        return expit(sensitivity_score(params, z, x, y))[:, 0]

    def q_gamma_atoms(self, params, z):
        """Closed-form (Q(z,z,.), gamma(z,z,.)) over the two atoms."""
        i = np.arange(2)
        p = self.arm_plus[z]
        w_hi = self.w_at(params, z, i, 1.0)
        w_lo = self.w_at(params, z, i, -1.0)
        return p * w_hi - (1.0 - p) * w_lo, p * w_hi + (1.0 - p) * w_lo

    def tilt(self, z, params=None):
        """Complier mean outcome under arm z, per atom."""
        q, g = self.q_gamma_atoms(params if params is not None else self.true_alpha, z)
        return q / g

    def complier_share(self):
        """P(complier | atom); the construction makes this constant."""
        out = np.zeros(2)
        for z in (-1, 1):
            _, g = self.q_gamma_atoms(self.true_alpha, z)
            out += self.f_z_true(z, np.arange(2)) * self.fa_table[z][z + 1] * g
        return out

    # ------------------------------------------------------ exact truths

    def complier_value(self, policy) -> float:
        """Enumerated E[Y(pi) | complier]; complier x-law equals the marginal."""
        acts = policy.decide(self.x_atoms)
        per_atom = np.where(acts == 1, self.tilt(1), self.tilt(-1))
        return float(self.p_x @ per_atom)

    def psi_true(self) -> float:
        return float(self.p_x @ (self.tilt(1) - self.tilt(-1)))

    def theorem1_lhs(self, policy) -> float:
        """Literal 24-term sum of W * I{pi(X)=Z} with the true nuisances."""
        acts = policy.decide(self.x_atoms)
        total = 0.0
        for prob, i, z, a, y in self.atom_rows():
            if a != z or acts[i] != z:  # a(a+z)/2 kills every off-diagonal row
                continue
            w = float(self.w_at(self.true_alpha, z, np.array([i]), y)[0])
            _, g = self.q_gamma_atoms(self.true_alpha, z)
            fa = self.fa_table[z][z + 1, i]
            fz = float(self.f_z_true(z, np.array([i]))[0])
            total += prob * y * w / (g[i] * fa * fz)
        return total

    # ------------------------------------------------------- enumeration

    def atom_rows(self):
        """Yield (probability, atom, z, a, y) over the full 24-cell support."""
        for i in (0, 1):
            for z in (-1, 1):
                pz = float(self.f_z_true(z, np.array([i]))[0])
                for a in (-1, 0, 1):
                    pa = float(self.fa_table[z][a + 1, i])
                    plus = float(self.plus_prob(z, a, np.array([i]))[0])
                    for y, py in ((1.0, plus), (-1.0, 1.0 - plus)):
                        yield float(self.p_x[i]) * pz * pa * py, i, z, a, y

    def atom_dataset(self):
        """(Dataset, pmf) with one row per support cell; pmf sums to one."""
        rows = list(self.atom_rows())
        pmf = np.array([r[0] for r in rows])
        x = self.x_atoms[[r[1] for r in rows]]
        z = np.array([r[2] for r in rows])
        a = np.array([r[3] for r in rows])
        y = np.array([r[4] for r in rows])
        return Dataset(x=x, z=z, a=a, y=y), pmf

    # ---------------------------------------------------------- sampling

    def sample(self, n, rng):
        """n observable rows plus bookkeeping truths (exact S4 on A=Z rows)."""
        i = rng.choice(2, size=n, p=self.p_x)
        x = self.x_atoms[i]
        z = np.where(rng.random(n) < self.fz_plus[i], 1, -1)
        a = np.empty(n, dtype=int)
        for zz in (-1, 1):
            sel = z == zz
            cum = np.cumsum(self.fa_table[zz][:, i[sel]].T, axis=1)
            a[sel] = (rng.random(sel.sum())[:, None] > cum).sum(axis=1) - 1
        plus = np.empty(n)
        for zz in (-1, 1):
            for aa in (-1, 0, 1):
                sel = (z == zz) & (a == aa)
                if np.any(sel):
                    plus[sel] = self.plus_prob(zz, aa, i[sel])
        y = np.where(rng.random(n) < plus, 1.0, -1.0)

        labels = np.where(a == 0, "S3", np.where(a == 1, "S2", "S1")).astype(object)
        diag = a == z
        w = np.zeros(n)
        for zz in (-1, 1):
            sel = diag & (z == zz)
            w[sel] = self.w_at(self.true_alpha, zz, i[sel], 1.0) * (y[sel] == 1) + \
                self.w_at(self.true_alpha, zz, i[sel], -1.0) * (y[sel] == -1)
        labels[diag & (rng.random(n) < w)] = "S4"
        optimal = np.where(self.tilt(1) >= self.tilt(-1), 1, -1)[i]
        from .model import STRATA

        truths = [
            TruthRecord(stratum=str(labels[k]), u=0.0,
                        a_minus=STRATA[str(labels[k])][0],
                        a_plus=STRATA[str(labels[k])][1],
                        optimal_action=int(optimal[k]))
            for k in range(n)
        ]
        return Dataset(x=x, z=z, a=a, y=y), truths

    # ---------------------------------------------------------- nuisances

    def nuisances(self, params, corrupt=()) -> NuisanceSet:
        """Closed-form nuisance bundle at the analysis tilt.

        corrupt picks any subset of {"fZ", "fA", "Q", "kappa"}; everything
        else stays exact (gamma always comes from the correct outcome law).
        """
        unknown = set(corrupt) - {"fZ", "fA", "Q", "kappa"}
        if unknown:
            raise ValueError(f"unknown corruption tags {sorted(unknown)}")
        return NuisanceSet(
            instrument=OracleInstrument(self, CORRUPT_FZ_PLUS if "fZ" in corrupt else None),
            compliance=OracleCompliance(self, CORRUPT_FA if "fA" in corrupt else None),
            outcome=OracleOutcome(self),
            outcome_q=OracleOutcome(self, q_map=_corrupt_q) if "Q" in corrupt else None,
            kappa=OracleKappa(self, params,
                              distort=_corrupt_kappa if "kappa" in corrupt else None),
            n_mc=8,
        )


class OracleInstrument:
    """Exact (or deliberately wrong) instrument propensity over the atoms."""

    clip_events = 0

    def __init__(self, oracle, fz_plus=None):
        self._oracle = oracle
        self._plus = np.asarray(fz_plus if fz_plus is not None else oracle.fz_plus,
                                dtype=float)

    def f_z(self, z, x):
        i = self._oracle.atom_index(x)
        p = self._plus[i]
        return np.where(np.broadcast_to(np.asarray(z), i.shape) == 1, p, 1.0 - p)


class OracleCompliance:
    """Exact (or deliberately wrong) compliance table over the atoms."""

    clip_events = 0

    def __init__(self, oracle, table=None):
        self._oracle = oracle
        self._table = table if table is not None else oracle.fa_table

    def f_a(self, a, z, x):
        i = self._oracle.atom_index(x)
        a = np.broadcast_to(np.asarray(a), i.shape)
        z = np.broadcast_to(np.asarray(z), i.shape)
        out = np.empty(i.shape[0])
        for zz in (-1, 1):
            sel = z == zz
            out[sel] = self._table[zz][a[sel] + 1, i[sel]]
        return out


class OracleOutcome:
    """Two-point arm law with closed-form tilted moments.

    exact_moments bypasses the Monte-Carlo path entirely; q_map lets the
    misspecified-Q protocol distort the numerator while gamma stays exact.
    """

    def __init__(self, oracle, q_map=None):
        self._oracle = oracle
        self._q_map = q_map

    def exact_moments(self, params, z, x):
        i = self._oracle.atom_index(x)
        p = self._oracle.arm_plus[int(z)][i]
        w_hi = self._oracle.w_at(params, z, i, 1.0)
        w_lo = self._oracle.w_at(params, z, i, -1.0)
        gamma = p * w_hi + (1.0 - p) * w_lo
        q = p * w_hi - (1.0 - p) * w_lo
        if self._q_map is not None:
            q = self._q_map(q)
        return q, gamma


class OracleKappa:
    """Population projection kappa of the exact world.

    The observed diagonal law equals the arm law here, so the projection
    collapses to kappa(z, x) = delta(z, z, x) at the analysis tilt.
    """

    def __init__(self, oracle, params, distort=None):
        self._oracle = oracle
        self._distort = distort
        self._theta = {z: (lambda qg: qg[0] / qg[1])(oracle.q_gamma_atoms(params, z))
                       for z in (-1, 1)}
        self.fold_of_row = np.zeros(0, dtype=int)
        self.fold_models = []

    def predict_new(self, z, x):
        i = self._oracle.atom_index(x)
        z = np.broadcast_to(np.asarray(z), i.shape)
        out = np.where(z == 1, self._theta[1][i], self._theta[-1][i])
        if self._distort is not None:
            out = self._distort(out, z)
        return out

    def predict_fold(self, k, z, x):
        return self.predict_new(z, x)


def build_discrete_oracle(fz_plus=(0.65, 0.35), alpha=None) -> DiscreteOracle:
    """Assemble the two-atom world, solving one compliance cell so the
    complier share is the same at both atoms."""
    if alpha is None:
        alpha = SensitivityParams("Y_ONLY", minus=ArmAlpha(0.25, 0.6),
                                  plus=ArmAlpha(-0.1, 0.45))
    x_atoms = np.array([[-0.6, 0.2], [0.7, -0.4]])
    p_x = np.array([0.45, 0.55])
    fz_plus = np.asarray(fz_plus, dtype=float)
    if fz_plus.shape != (2,) or np.any(fz_plus <= 0) or np.any(fz_plus >= 1):
        raise ValueError("fz_plus must be two probabilities strictly inside (0, 1)")
    arm_plus = {-1: np.array([0.30, 0.72]), 1: np.array([0.58, 0.44])}
    offdiag_plus = {
        (-1, 1): np.array([0.80, 0.75]),
        (1, -1): np.array([0.35, 0.40]),
        (1, 0): np.array([0.60, 0.65]),
        (-1, 0): np.array([0.25, 0.20]),
    }

    skeleton = DiscreteOracle(
        x_atoms=x_atoms, p_x=p_x, fz_plus=fz_plus, fa_table={},
        arm_plus=arm_plus, offdiag_plus=offdiag_plus, true_alpha=alpha,
    )
    gam = {z: skeleton.q_gamma_atoms(alpha, z)[1] for z in (-1, 1)}

    # free diagonal cells; the last one equalizes the complier share
    fa_mm_a, fa_pp_a, fa_pp_b = 0.55, 0.60, 0.52
    share_a = (1 - fz_plus[0]) * fa_mm_a * gam[-1][0] + fz_plus[0] * fa_pp_a * gam[1][0]
    fa_mm_b = (share_a - fz_plus[1] * fa_pp_b * gam[1][1]) / ((1 - fz_plus[1]) * gam[-1][1])
    if not 0.05 < fa_mm_b < 0.95:
        raise RuntimeError(f"equalized compliance cell {fa_mm_b:.4f} out of range")

    diag = {-1: np.array([fa_mm_a, fa_mm_b]), 1: np.array([fa_pp_a, fa_pp_b])}
    rest_m = 1.0 - diag[-1]
    rest_p = 1.0 - diag[1]
    fa_table = {
        -1: np.vstack([diag[-1], 0.4 * rest_m, 0.6 * rest_m]),
        1: np.vstack([0.6 * rest_p, 0.4 * rest_p, diag[1]]),
    }
    return DiscreteOracle(
        x_atoms=x_atoms, p_x=p_x, fz_plus=fz_plus, fa_table=fa_table,
        arm_plus=arm_plus, offdiag_plus=offdiag_plus, true_alpha=alpha,
    )
