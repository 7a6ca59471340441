"""Weighted hinge-loss policy learner and lambda selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrsens.learner import (
    LearnerConfig,
    hinge_objective,
    learn_policy,
    policy_from_json,
    policy_to_json,
    select_lambda,
    weighted_agreement,
)
from otrsens.model import Dataset, LinearPolicy


def separable_dataset(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    x[:, 0] = np.where(x[:, 0] >= 0, 0.05, -0.05) + x[:, 0]  # margin at x1=0
    z = np.where(x[:, 0] > 0, 1, -1)  # labels determined by x1
    return Dataset(x=x, z=z, a=z.copy(), y=np.ones(n))


def test_separable_case_reaches_full_agreement():
    ds = separable_dataset()
    pol = learn_policy(ds, np.ones(ds.n), LearnerConfig(lam=1e-4, max_iter=3000))
    assert np.all(pol.decide(ds.x) == ds.z)


def test_flipping_weight_signs_flips_the_regime():
    rng = np.random.default_rng(1)
    n = 300
    x = rng.uniform(-1, 1, size=(n, 2))
    z = np.where(rng.uniform(size=n) < 0.5, 1, -1)
    ds = Dataset(x=x, z=z, a=z.copy(), y=np.ones(n))
    w = rng.normal(size=n) + 0.3
    w[w == 0] = 0.1
    cfg = LearnerConfig(lam=0.05, max_iter=800)
    pol = learn_policy(ds, w, cfg)
    pol_flipped = learn_policy(ds, -w, cfg)
    grid = rng.uniform(-1, 1, size=(500, 2))
    vals = pol.decision_values(grid)
    grid = grid[np.abs(vals) > 1e-8]  # avoid the sign(0)=+1 tie edge
    assert np.all(pol.decide(grid) == -pol_flipped.decide(grid))


@given(
    seed=st.integers(0, 500),
    t=st.floats(0.01, 0.99),
)
@settings(max_examples=40, deadline=None)
def test_objective_convexity(seed, t):
    rng = np.random.default_rng(seed)
    n, d = 40, 3
    xmat = rng.normal(size=(n, d))
    labels = rng.choice([-1.0, 1.0], size=n)
    absw = np.abs(rng.normal(size=n)) + 0.01
    lam = 10 ** rng.uniform(-4, 0)
    th1 = rng.normal(size=d + 1)
    th2 = rng.normal(size=d + 1)
    mid = t * th1 + (1 - t) * th2
    lhs = hinge_objective(mid, xmat, labels, absw, lam)
    rhs = t * hinge_objective(th1, xmat, labels, absw, lam) + (1 - t) * (
        hinge_objective(th2, xmat, labels, absw, lam)
    )
    assert lhs <= rhs + 1e-10


def test_solution_beats_zero_and_random_restarts():
    rng = np.random.default_rng(7)
    n = 250
    x = rng.uniform(-1, 1, size=(n, 2))
    z = np.where(x[:, 0] + 0.5 * x[:, 1] + 0.2 * rng.normal(size=n) > 0, 1, -1)
    ds = Dataset(x=x, z=z, a=z.copy(), y=np.ones(n))
    w = np.abs(rng.normal(size=n)) + 0.05
    cfg = LearnerConfig(lam=0.01, max_iter=2000)
    pol = learn_policy(ds, w, cfg)
    theta_hat = np.concatenate([[pol.beta0], pol.beta])
    labels = np.sign(w) * ds.z
    obj_hat = hinge_objective(theta_hat, ds.x, labels, np.abs(w), cfg.lam)
    assert obj_hat <= hinge_objective(np.zeros(3), ds.x, labels, np.abs(w), cfg.lam)
    for _ in range(20):
        theta_rand = rng.normal(size=3)
        assert obj_hat <= hinge_objective(
            theta_rand, ds.x, labels, np.abs(w), cfg.lam
        ) + 1e-9


def test_weight_scaling_with_lambda_scaling_is_invariant():
    rng = np.random.default_rng(3)
    n = 150
    x = rng.uniform(-1, 1, size=(n, 2))
    z = np.where(rng.uniform(size=n) < 0.5, 1, -1)
    ds = Dataset(x=x, z=z, a=z.copy(), y=np.ones(n))
    w = rng.normal(size=n)
    w[w == 0] = 0.2
    c = 37.5
    pol1 = learn_policy(ds, w, LearnerConfig(lam=0.02, max_iter=500))
    pol2 = learn_policy(ds, c * w, LearnerConfig(lam=c * 0.02, max_iter=500))
    grid = rng.uniform(-1, 1, size=(400, 2))
    assert np.array_equal(pol1.decide(grid), pol2.decide(grid))


def test_zero_weights_error():
    ds = separable_dataset(50)
    with pytest.raises(ValueError, match="all weights are zero"):
        learn_policy(ds, np.zeros(ds.n))
    with pytest.raises(ValueError, match="length"):
        learn_policy(ds, np.ones(ds.n - 1))
    with pytest.raises(ValueError, match="finite"):
        learn_policy(ds, np.full(ds.n, np.nan))


def test_zero_weight_rows_are_dropped():
    ds = separable_dataset(120, seed=4)
    w_full = np.ones(ds.n)
    w_holes = w_full.copy()
    # zero out rows whose removal keeps the problem identical in content:
    # duplicate the kept rows so the weighted objective is unchanged
    pol_full = learn_policy(ds, w_full, LearnerConfig(lam=1e-3))
    w_holes[::5] = 0.0
    pol_holes = learn_policy(ds, w_holes, LearnerConfig(lam=1e-3))
    kept = Dataset(
        x=ds.x[w_holes != 0],
        z=ds.z[w_holes != 0],
        a=ds.a[w_holes != 0],
        y=ds.y[w_holes != 0],
    )
    pol_kept = learn_policy(kept, np.ones(kept.n), LearnerConfig(lam=1e-3))
    assert pol_holes.beta0 == pol_kept.beta0
    assert np.array_equal(pol_holes.beta, pol_kept.beta)
    assert isinstance(pol_full, LinearPolicy)


def test_select_lambda_single_and_tie():
    ds = separable_dataset(160, seed=5)
    w = np.ones(ds.n)
    cfg = LearnerConfig(lambda_grid=(0.5,), cv_folds=4)
    assert select_lambda(ds, w, cfg) == 0.5
    cfg2 = LearnerConfig(lambda_grid=(1e-1, 1e-3), cv_folds=4, max_iter=1500)
    # both lambdas separate the data fully -> tie -> smallest wins
    assert select_lambda(ds, w, cfg2) == 1e-3


def test_select_lambda_monotone_degradation():
    rng = np.random.default_rng(11)
    n = 240
    x = rng.uniform(-1, 1, size=(n, 2))
    z = np.where(x[:, 0] + 0.3 * rng.normal(size=n) > 0, 1, -1)
    ds = Dataset(x=x, z=z, a=z.copy(), y=np.ones(n))
    w = np.abs(rng.normal(size=n)) + 0.1
    cfg = LearnerConfig(lambda_grid=(1e-3, 1e6), cv_folds=4, max_iter=600)
    lam = select_lambda(ds, w, cfg)
    assert lam == 1e-3
    # huge penalty shrinks the slope to ~0
    pol_big = learn_policy(ds, w, LearnerConfig(lam=1e6, max_iter=600))
    assert np.linalg.norm(pol_big.beta) < 1e-3


def test_weighted_agreement_score():
    ds = separable_dataset(40, seed=6)
    pol = LinearPolicy(0.0, [1.0, 0.0])  # decides sign(x1) = labels
    w = np.full(ds.n, 2.0)
    assert weighted_agreement(pol, ds, w) == pytest.approx(2.0 * ds.n)
    wrong = LinearPolicy(0.0, [-1.0, 0.0])
    x_off_axis = ds.x[np.abs(ds.x[:, 0]) > 1e-9]
    assert weighted_agreement(wrong, ds, w) <= 2.0 * (ds.n - x_off_axis.shape[0])


def test_policy_json_round_trip():
    pol = LinearPolicy(-0.75, [1.25, -3.5])
    back = policy_from_json(policy_to_json(pol))
    assert back.beta0 == pol.beta0
    assert np.array_equal(back.beta, pol.beta)
