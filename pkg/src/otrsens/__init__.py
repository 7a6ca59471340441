"""Optimal treatment regimes among compliers under a sensitivity model for
complier membership: IPW and multiply robust value estimators, a weighted
hinge-loss policy learner, and a synthetic-trial simulation harness."""

from .model import (
    Dataset,
    EstimateWithSE,
    LinearPolicy,
    Observation,
    PrincipalStratum,
    correct_classification_rate,
    policy_decide,
)

__all__ = [
    "Dataset",
    "EstimateWithSE",
    "LinearPolicy",
    "Observation",
    "PrincipalStratum",
    "correct_classification_rate",
    "policy_decide",
]

__version__ = "0.1.0"
