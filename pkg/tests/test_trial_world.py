"""End-to-end behavior on the synthetic trial world with fitted nuisances."""

import numpy as np
import pytest

from otrsens.boost import BoostConfig
from otrsens.datagen import GenerativeConfig, TrueValueOracle, generate_trial
from otrsens.learner import LearnerConfig, learn_policy
from otrsens.model import LinearPolicy
from otrsens.nuisance import (
    NuisanceSet,
    fit_compliance,
    fit_instrument,
    fit_kappa,
    fit_outcome_density,
)
from otrsens.sensitivity import ArmAlpha, SensitivityParams
from otrsens.value import ipw_value, mr_value, mr_value_eif, psi_mr_eif
from otrsens.weights import mr_weights

ALPHA = SensitivityParams("Y_ONLY", minus=ArmAlpha(0.0, 0.5), plus=ArmAlpha(0.0, 0.5))
CFG = GenerativeConfig(n=500, true_alpha=ALPHA, seed=100)
POLICY = LinearPolicy(0.0, (-1.0, -1.0))  # near the true boundary x1 + x2 = 0


def fitted(ds, n_mc=3000, n_rounds=150):
    ns = NuisanceSet(instrument=fit_instrument(ds), compliance=fit_compliance(ds),
                     outcome=fit_outcome_density(ds), n_mc=n_mc)
    ns.kappa = fit_kappa(ds, ns, ALPHA, config=BoostConfig(n_rounds=n_rounds))
    return ns


@pytest.mark.slow
def test_mr_se_never_much_worse_than_ipw_se():
    # the augmentation removes the heavy inverse-weight tails, so on this
    # design the one-step SE should beat plain IPW on nearly every draw
    wins = 0
    for rep in range(100):
        ds, _ = generate_trial(CFG, replicate=rep)
        ns = fitted(ds)
        wins += mr_value(ds, POLICY, ns, ALPHA).se <= ipw_value(ds, POLICY, ns, ALPHA).se
    assert wins >= 90


def test_eif_centering_on_a_fitted_replicate():
    ds, _ = generate_trial(CFG, replicate=7)
    ns = fitted(ds)
    assert mr_value_eif(ds, POLICY, ns, ALPHA).centering <= 1e-12
    assert psi_mr_eif(ds, ns, ALPHA).centering <= 1e-12


@pytest.mark.slow
def test_learned_policy_beats_constant_rules_in_true_value():
    oracle = TrueValueOracle(CFG, n_pool=100_000)
    ds, _ = generate_trial(CFG, replicate=1)
    ns = fitted(ds)
    w = mr_weights(ds, ns, ALPHA)
    pol = learn_policy(ds, w, LearnerConfig(lam=0.01))
    v = oracle.value(pol)
    assert v > oracle.value(LinearPolicy(1.0, (0.0, 0.0)))   # always +1
    assert v > oracle.value(LinearPolicy(-1.0, (0.0, 0.0)))  # always -1
    assert v > oracle.optimal_value() - 0.12
