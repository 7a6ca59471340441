"""Enumeration tests on the exact two-atom world.

Everything here is a finite sum, so identities hold to float rounding and
the robustness algebra is checked without simulation error.
"""

import time

import numpy as np
import pytest
from scipy.special import expit

from otrsens.discrete import CORRUPT_FZ_PLUS, DiscreteOracle, build_discrete_oracle
from otrsens.model import LinearPolicy
from otrsens.value import (
    ipw_value,
    mr_value,
    mr_value_eif,
    mr_value_known_fz,
    mr_value_known_fz_eif,
    psi_mr,
    psi_mr_eif,
)
from otrsens.weights import ipw_weights, mr_weights

from .oracles import two_point_mean

# the four action patterns a threshold rule can realize on two atoms
THRESHOLD_POLICIES = (
    LinearPolicy(1.0, (1.0, 0.0)),    # both +1
    LinearPolicy(-1.0, (1.0, 0.0)),   # both -1
    LinearPolicy(0.0, (1.0, 0.0)),    # split (-1, +1)
    LinearPolicy(0.0, (-1.0, 0.0)),   # split (+1, -1)
)

SINGLE_CORRUPTIONS = (("fZ",), ("fA",), ("Q",), ("kappa",))


@pytest.fixture(scope="module")
def oracle():
    return build_discrete_oracle()


def enumerated(eif, pmf):
    """Population mean of the uncentered influence rows."""
    return float((eif.values + eif.estimate) @ pmf)


def true_fz_fn(oracle):
    return lambda z, x: oracle.f_z_true(z, oracle.atom_index(x))


# ------------------------------------------------------------ construction


def test_pmf_is_a_distribution(oracle):
    _, pmf = oracle.atom_dataset()
    assert pmf.shape == (24,)
    assert np.all(pmf > 0)
    assert abs(pmf.sum() - 1.0) < 1e-14


def test_complier_share_constant_across_atoms(oracle):
    share = oracle.complier_share()
    assert abs(share[0] - share[1]) < 1e-12
    assert 0.05 < share[0] < 0.95


def test_tilt_matches_independent_two_point_calc(oracle):
    a0, aY = oracle.true_alpha.plus.a0, oracle.true_alpha.plus.aY
    for i in (0, 1):
        p = oracle.arm_plus[1][i]
        w = lambda y: expit(a0 + aY * y)
        num = two_point_mean((1.0, -1.0), (p, 1 - p), lambda y: y * w(y))
        den = two_point_mean((1.0, -1.0), (p, 1 - p), w)
        assert abs(oracle.tilt(1)[i] - num / den) < 1e-14


def test_kappa_stub_equals_theta(oracle):
    ns = oracle.nuisances(oracle.true_alpha)
    got = ns.kappa.predict_new(np.array([-1, -1, 1, 1]),
                               oracle.x_atoms[[0, 1, 0, 1]])
    want = np.concatenate([oracle.tilt(-1), oracle.tilt(1)])
    assert np.allclose(got, want, atol=1e-14)


def test_nuisances_reject_unknown_corruption(oracle):
    with pytest.raises(ValueError):
        oracle.nuisances(oracle.true_alpha, corrupt=("fY",))


# ----------------------------------------------------------- the theorem


def test_theorem1_identity_all_threshold_policies(oracle):
    start = time.monotonic()
    for pol in THRESHOLD_POLICIES:
        lhs = oracle.theorem1_lhs(pol)
        rhs = oracle.complier_value(pol)
        assert abs(lhs - rhs) < 1e-9
    assert time.monotonic() - start < 1.0


def test_theorem1_through_package_weights(oracle):
    ds, pmf = oracle.atom_dataset()
    ns = oracle.nuisances(oracle.true_alpha)
    for pol in THRESHOLD_POLICIES:
        w = ipw_weights(ds, ns, oracle.true_alpha)
        agree = pol.decide(ds.x) == ds.z
        assert abs(float((w.values * agree) @ pmf) - oracle.complier_value(pol)) < 1e-9


# ------------------------------------------------------------- robustness


def test_mr_value_enumeration_exact_under_each_corruption(oracle):
    ds, pmf = oracle.atom_dataset()
    pol = THRESHOLD_POLICIES[2]
    truth = oracle.complier_value(pol)
    for corrupt in ((),) + SINGLE_CORRUPTIONS:
        ns = oracle.nuisances(oracle.true_alpha, corrupt)
        got = enumerated(mr_value_eif(ds, pol, ns, oracle.true_alpha), pmf)
        assert abs(got - truth) < 1e-9, corrupt


def test_known_fz_enumeration_exact_under_each_corruption(oracle):
    ds, pmf = oracle.atom_dataset()
    pol = THRESHOLD_POLICIES[3]
    truth = oracle.complier_value(pol)
    for corrupt in ((), ("fA",), ("Q",)):
        ns = oracle.nuisances(oracle.true_alpha, corrupt)
        got = enumerated(
            mr_value_known_fz_eif(ds, pol, ns, oracle.true_alpha, true_fz_fn(oracle)),
            pmf)
        assert abs(got - truth) < 1e-9, corrupt


def test_psi_enumeration_exact_under_each_model(oracle):
    ds, pmf = oracle.atom_dataset()
    truth = oracle.psi_true()
    for corrupt in ((), ("fZ",), ("fA",), ("fZ", "fA"), ("Q",)):
        ns = oracle.nuisances(oracle.true_alpha, corrupt)
        got = enumerated(psi_mr_eif(ds, ns, oracle.true_alpha), pmf)
        assert abs(got - truth) < 1e-9, corrupt


def test_ipw_enumeration_is_biased_under_corruption(oracle):
    # the contrast: plain inverse weighting has no such protection
    ds, pmf = oracle.atom_dataset()
    pol = THRESHOLD_POLICIES[0]  # both atoms treated +1
    truth = oracle.complier_value(pol)
    ns = oracle.nuisances(oracle.true_alpha, ("fZ",))
    w = ipw_weights(ds, ns, oracle.true_alpha)
    agree = pol.decide(ds.x) == ds.z
    assert abs(float((w.values * agree) @ pmf) - truth) > 0.05
    pol = THRESHOLD_POLICIES[2]
    ns = oracle.nuisances(oracle.true_alpha, ("fA",))
    w = ipw_weights(ds, ns, oracle.true_alpha)
    agree = pol.decide(ds.x) == ds.z
    assert abs(float((w.values * agree) @ pmf) - oracle.complier_value(pol)) > 0.01


# ---------------------------------------------------------------- samples


def test_sample_diagonal_law_and_membership_probability(oracle):
    ds, truths = oracle.sample(40_000, np.random.default_rng(3))
    labels = np.array([t.stratum for t in truths])
    i = oracle.atom_index(ds.x)
    # observed diagonal law == arm law (the complement tilt hides the mix)
    sel = (ds.z == 1) & (ds.a == 1) & (i == 0)
    p_hat = float(np.mean(ds.y[sel] == 1))
    se = np.sqrt(p_hat * (1 - p_hat) / sel.sum())
    assert abs(p_hat - oracle.arm_plus[1][0]) < 3 * se
    # P(complier | y, diagonal) == the tilt w(y)
    for y in (1.0, -1.0):
        cell = sel & (ds.y == y)
        w_hat = float(np.mean(labels[cell] == "S4"))
        want = float(oracle.w_at(oracle.true_alpha, 1, np.array([0]), y)[0])
        se = np.sqrt(want * (1 - want) / cell.sum())
        assert abs(w_hat - want) < 3 * se


def test_sample_truths_are_consistent(oracle):
    from otrsens.datagen import compliance_from_stratum

    ds, truths = oracle.sample(2000, np.random.default_rng(11))
    want_opt = np.where(oracle.tilt(1) >= oracle.tilt(-1), 1, -1)
    i = oracle.atom_index(ds.x)
    for k, t in enumerate(truths):
        assert ds.a[k] == compliance_from_stratum(t.stratum, int(ds.z[k]))
        assert t.optimal_action == want_opt[i[k]]


def test_sampled_estimators_hit_truth_within_three_se(oracle):
    pol = THRESHOLD_POLICIES[2]
    truth = oracle.complier_value(pol)
    ds, _ = oracle.sample(4000, np.random.default_rng(29))
    for corrupt in ((),) + SINGLE_CORRUPTIONS:
        ns = oracle.nuisances(oracle.true_alpha, corrupt)
        est = mr_value(ds, pol, ns, oracle.true_alpha)
        assert abs(est.estimate - truth) < 3 * est.se, corrupt
    psi_truth = oracle.psi_true()
    for corrupt in ((), ("fZ", "fA"), ("Q",)):
        ns = oracle.nuisances(oracle.true_alpha, corrupt)
        est = psi_mr(ds, ns, oracle.true_alpha)
        assert abs(est.estimate - psi_truth) < 3 * est.se, corrupt


def test_sampled_ipw_matches_mr_when_all_correct(oracle):
    pol = THRESHOLD_POLICIES[2]
    ds, _ = oracle.sample(4000, np.random.default_rng(17))
    ns = oracle.nuisances(oracle.true_alpha)
    a = ipw_value(ds, pol, ns, oracle.true_alpha)
    b = mr_value(ds, pol, ns, oracle.true_alpha)
    assert abs(a.estimate - b.estimate) < 3 * (a.se + b.se)


def test_psi_is_signed_mean_of_mr_weights(oracle):
    ds, _ = oracle.sample(1000, np.random.default_rng(5))
    ns = oracle.nuisances(oracle.true_alpha)
    w = mr_weights(ds, ns, oracle.true_alpha)
    est = psi_mr(ds, ns, oracle.true_alpha)
    assert np.isclose(est.estimate, float(np.mean(ds.z * w.values)), rtol=1e-12)


def test_eif_centering_on_samples(oracle):
    ds, _ = oracle.sample(3000, np.random.default_rng(41))
    ns = oracle.nuisances(oracle.true_alpha, ("Q",))
    pol = THRESHOLD_POLICIES[1]
    assert mr_value_eif(ds, pol, ns, oracle.true_alpha).centering <= 1e-12
    assert psi_mr_eif(ds, ns, oracle.true_alpha).centering <= 1e-12
    assert mr_value_known_fz_eif(ds, pol, ns, oracle.true_alpha,
                                 true_fz_fn(oracle)).centering <= 1e-12


# ------------------------------------------------- randomized-trial variant


def test_randomized_variant_known_fz_scalar():
    o = build_discrete_oracle(fz_plus=(0.5, 0.5))
    ds, pmf = o.atom_dataset()
    pol = THRESHOLD_POLICIES[2]
    truth = o.complier_value(pol)
    for corrupt in ((), ("fA",), ("Q",)):
        ns = o.nuisances(o.true_alpha, corrupt)
        got = enumerated(mr_value_known_fz_eif(ds, pol, ns, o.true_alpha, 0.5), pmf)
        assert abs(got - truth) < 1e-9, corrupt
    samp, _ = o.sample(4000, np.random.default_rng(7))
    ns = o.nuisances(o.true_alpha, ("fA",))
    est = mr_value_known_fz(samp, pol, ns, o.true_alpha, 0.5)
    assert abs(est.estimate - truth) < 3 * est.se


def test_build_rejects_degenerate_fz():
    with pytest.raises(ValueError):
        build_discrete_oracle(fz_plus=(0.0, 0.5))
    assert CORRUPT_FZ_PLUS != (0.65, 0.35)
