"""Core types: observations, datasets, strata table, linear policies."""

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from otrsens.model import (
    MONOTONE_STRATA,
    STRATA,
    Dataset,
    EstimateWithSE,
    LinearPolicy,
    Observation,
    PrincipalStratum,
    correct_classification_rate,
    policy_decide,
)


def test_observation_validates_codes():
    Observation(x=np.array([0.0, 1.0]), z=1, a=0, y=2.5)
    with pytest.raises(ValueError, match="z must be"):
        Observation(x=np.zeros(2), z=0, a=1, y=0.0)
    with pytest.raises(ValueError, match="a must be"):
        Observation(x=np.zeros(2), z=1, a=2, y=0.0)
    with pytest.raises(ValueError, match="finite"):
        Observation(x=np.array([np.nan]), z=1, a=1, y=0.0)
    with pytest.raises(ValueError, match="finite"):
        Observation(x=np.zeros(1), z=1, a=1, y=np.inf)


def test_dataset_shape_checks():
    ds = Dataset(x=np.zeros((3, 2)), z=[1, -1, 1], a=[1, -1, 0], y=[0.1, 0.2, 0.3])
    assert ds.n == 3 and ds.dim_x == 2
    with pytest.raises(ValueError, match="empty"):
        Dataset(x=np.zeros((0, 2)), z=[], a=[], y=[])
    with pytest.raises(ValueError, match="lengths"):
        Dataset(x=np.zeros((3, 2)), z=[1, -1], a=[1, -1], y=[0.1, 0.2])
    with pytest.raises(ValueError, match="instrument"):
        Dataset(x=np.zeros((1, 1)), z=[2], a=[1], y=[0.0])


def test_dataset_round_trip_rows():
    rows = [
        Observation(np.array([0.3, -0.7]), 1, 1, 1.25),
        Observation(np.array([-0.1, 0.2]), -1, 0, -0.5),
    ]
    ds = Dataset.from_rows(rows)
    back = ds.rows()
    assert all(np.allclose(r.x, b.x) for r, b in zip(rows, back))
    assert [b.z for b in back] == [1, -1]
    assert [b.a for b in back] == [1, 0]


def test_dataset_requires_both_arms_for_fitting():
    ds = Dataset(x=np.zeros((2, 1)), z=[1, 1], a=[1, 1], y=[0.0, 1.0])
    with pytest.raises(ValueError, match="both instrument arms"):
        ds.require_both_arms()


def test_csv_round_trip_lossless(tmp_path):
    rng = np.random.default_rng(7)
    ds = Dataset(
        x=rng.uniform(-1, 1, size=(20, 3)),
        z=rng.choice([-1, 1], size=20),
        a=rng.choice([-1, 0, 1], size=20),
        y=rng.normal(size=20) * 1e3,
    )
    path = tmp_path / "trial.csv"
    ds.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,z,a,y"
    back = Dataset.from_csv(path)
    assert np.array_equal(ds.x, back.x)
    assert np.array_equal(ds.z, back.z)
    assert np.array_equal(ds.a, back.a)
    assert np.array_equal(ds.y, back.y)


def test_strata_table_matches_definitions():
    assert STRATA["S4"] == (-1, 1)
    assert STRATA["S3"] == (0, 0)
    assert PrincipalStratum("S4").compliance(1) == 1
    assert PrincipalStratum("S4").compliance(-1) == -1
    assert PrincipalStratum("S5").compliance(1) == 0
    assert PrincipalStratum("S6").compliance(-1) == 0
    assert {s for s in STRATA if PrincipalStratum(s).is_defier_type} == {
        "S7",
        "S8",
        "S9",
    }
    assert all(not PrincipalStratum(s).is_defier_type for s in MONOTONE_STRATA)
    with pytest.raises(ValueError, match="unknown stratum"):
        PrincipalStratum("S10")


def test_policy_decide_examples():
    assert policy_decide(LinearPolicy(0.0, [1.0, 0.0]), [2.0, 5.0]) == 1
    assert policy_decide(LinearPolicy(0.0, [1.0, 0.0]), [0.0, 9.0]) == 1  # tie -> +1
    assert policy_decide(LinearPolicy(-3.0, [1.0, 1.0]), [1.0, 1.0]) == -1
    with pytest.raises(ValueError, match="dim"):
        policy_decide(LinearPolicy(0.0, [1.0, 0.0]), [1.0, 2.0, 3.0])


def test_classification_rate_endpoints():
    pol = LinearPolicy(0.0, [1.0])
    pts = [([0.5], 1), ([-0.5], -1), ([2.0], 1)]
    assert correct_classification_rate(pol, pts) == 1.0
    flipped = [(x, -a) for x, a in pts]
    assert correct_classification_rate(pol, flipped) == 0.0
    with pytest.raises(ValueError, match="empty"):
        correct_classification_rate(pol, [])


def test_classification_rate_random_policy_near_half():
    rng = np.random.default_rng(11)
    xs = rng.normal(size=(20000, 2))
    acts = rng.choice([-1, 1], size=20000)
    pol = LinearPolicy(0.0, rng.normal(size=2))
    rate = correct_classification_rate(pol, (xs, acts))
    assert abs(rate - 0.5) < 0.02


@given(
    c=st.floats(min_value=1e-3, max_value=1e3),
    beta0=st.floats(-5, 5),
    b1=st.floats(-5, 5),
    b2=st.floats(-5, 5),
    x1=st.floats(-10, 10),
    x2=st.floats(-10, 10),
)
def test_sign_invariant_to_positive_rescaling(c, beta0, b1, b2, x1, x2):
    # only honest away from the boundary: rescaling a subnormal decision
    # value can underflow across 0 and flip the >= 0 tie-break
    assume(abs(beta0 + b1 * x1 + b2 * x2) > 1e-6)
    base = LinearPolicy(beta0, [b1, b2])
    scaled = LinearPolicy(c * beta0, [c * b1, c * b2])
    x = np.array([[x1, x2]])
    assert base.decide(x)[0] == scaled.decide(x)[0]


@given(seed=st.integers(0, 10_000))
def test_rate_of_policy_and_negation_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(50, 2))
    # keep decision values away from 0 so the +1 tie-break can't break symmetry
    pol = LinearPolicy(0.5, rng.normal(size=2))
    vals = pol.decision_values(xs)
    xs = xs[np.abs(vals) > 1e-9]
    if xs.shape[0] == 0:
        return
    acts = rng.choice([-1, 1], size=xs.shape[0])
    neg = LinearPolicy(-pol.beta0, -pol.beta)
    r1 = correct_classification_rate(pol, (xs, acts))
    r2 = correct_classification_rate(neg, (xs, acts))
    assert abs((r1 + r2) - 1.0) < 1e-12


def test_estimate_with_se_from_contributions():
    contrib = np.array([1.0, 2.0, 3.0, 4.0])
    est = EstimateWithSE.from_contributions(contrib, "IPW")
    assert est.estimate == pytest.approx(2.5)
    assert est.se == pytest.approx(np.std(contrib, ddof=1) / 2.0)
    assert est.n == 4
    with pytest.raises(ValueError, match="method"):
        EstimateWithSE(1.0, 0.1, 10, "BOGUS")
