"""Deterministic boosted depth-2 trees used for the kappa regression."""

import numpy as np
import pytest

from otrsens.boost import BoostConfig, BoostedStumps, fit_boosted


def test_constant_target_reproduced_exactly():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(200, 3))
    model = fit_boosted(F, np.full(200, 2.75))
    assert len(model.trees) == 0
    assert np.all(model.predict(F) == 2.75)


def test_fits_smooth_signal():
    rng = np.random.default_rng(1)
    F = rng.uniform(-2, 2, size=(1500, 2))
    y = np.sin(F[:, 0]) + 0.5 * F[:, 1] ** 2
    model = fit_boosted(F, y, BoostConfig(n_rounds=300, learning_rate=0.1))
    resid = y - model.predict(F)
    assert np.var(resid) < 0.02 * np.var(y)


def test_bitwise_deterministic():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(400, 3))
    y = F[:, 0] * F[:, 1] + rng.normal(scale=0.3, size=400)
    p1 = fit_boosted(F, y).predict(F)
    p2 = fit_boosted(F, y).predict(F)
    assert np.array_equal(p1, p2)


def test_min_leaf_limits_tiny_splits():
    # 8 rows with min_leaf=10: no admissible split, model is the mean
    F = np.arange(8.0).reshape(-1, 1)
    y = np.array([0, 0, 0, 0, 10, 10, 10, 10.0])
    model = fit_boosted(F, y, BoostConfig(min_leaf=10))
    assert len(model.trees) == 0
    assert model.predict(F)[0] == pytest.approx(5.0)


def test_step_function_recovered():
    F = np.linspace(0, 1, 600).reshape(-1, 1)
    y = np.where(F[:, 0] > 0.5, 3.0, -1.0)
    model = fit_boosted(F, y, BoostConfig(n_rounds=120))
    pred = model.predict(F)
    assert np.max(np.abs(pred - y)) < 0.05


def test_predict_accepts_single_row():
    F = np.random.default_rng(3).normal(size=(100, 2))
    y = F[:, 0]
    model = fit_boosted(F, y)
    out = model.predict(np.array([0.2, -0.3]))
    assert out.shape == (1,)
    assert isinstance(model, BoostedStumps)
