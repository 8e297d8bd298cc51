"""Open-set active learning with evidential dual-head models.

A labeled pool grows round by round. Each round the learner estimates how
many unknown classes it has seen, trains a primary classifier plus an
evidential auxiliary head over known and estimated unknown classes, then
queries samples that are likely known (purity) and moderately uncertain
(informativeness), at a controlled known-class precision.
"""

from .core import (UNKNOWN, Dataset, FeatureSet, LabelSpace, Oracle, PoolState, RoundConfig, RoundMetrics,
                   apply_query_result, observed_precision)
from .harness import STRATEGIES, SyntheticSpec, generate_synthetic, run_experiment, run_strategy
from .query import PrecisionController, run_round

__all__ = [
    "UNKNOWN",
    "Dataset",
    "FeatureSet",
    "LabelSpace",
    "Oracle",
    "PoolState",
    "PrecisionController",
    "RoundConfig",
    "RoundMetrics",
    "STRATEGIES",
    "SyntheticSpec",
    "apply_query_result",
    "generate_synthetic",
    "observed_precision",
    "run_experiment",
    "run_round",
    "run_strategy",
]
