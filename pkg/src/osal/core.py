"""Data model: feature sets, label spaces, pool state, round configuration.

The learner only ever sees :class:`PoolState`. Labeled unknowns carry no
class id there; ground-truth classes live in the simulation oracle
(``true_classes`` arrays held by the harness).
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

UNKNOWN = -1
"""Sentinel oracle answer for a sample outside the known classes."""


@dataclass(frozen=True)
class FeatureSet:
    matrix: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise ValueError("feature matrix must be 2-D with n_samples >= 1 and dim >= 1")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("feature matrix contains NaN or Inf")
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        if ids.shape != (matrix.shape[0],):
            raise ValueError("sample_ids length must equal n_samples")
        if np.unique(ids).size != ids.size:
            raise ValueError("sample_ids must be unique")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "sample_ids", ids)

    @classmethod
    def from_matrix(cls, matrix) -> "FeatureSet":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix, np.arange(matrix.shape[0]))

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class LabelSpace:
    k: int
    u_true: int | None = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.u_true is not None and self.u_true < 0:
            raise ValueError("u_true must be >= 0")

    def is_known(self, true_class: int) -> bool:
        return 0 <= true_class < self.k


@dataclass(frozen=True)
class PoolState:
    """Partition of the pool into labeled-known, labeled-unknown and unlabeled.

    ``labeled_known`` maps sample index to class in ``[0, k)``. Index sets are
    kept as sorted tuples so that iteration order is reproducible.
    """

    labeled_known: Mapping[int, int]
    labeled_unknown: tuple[int, ...]
    unlabeled: tuple[int, ...]
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labeled_known", dict(sorted(self.labeled_known.items())))
        object.__setattr__(self, "labeled_unknown", tuple(sorted(self.labeled_unknown)))
        object.__setattr__(self, "unlabeled", tuple(sorted(self.unlabeled)))
        a, b, c = set(self.labeled_known), set(self.labeled_unknown), set(self.unlabeled)
        if len(b) != len(self.labeled_unknown) or len(c) != len(self.unlabeled):
            raise ValueError("duplicate indices in pool state")
        if a & b or a & c or b & c:
            raise ValueError("pool partitions overlap")
        if self.round < 0:
            raise ValueError("round must be >= 0")

    @classmethod
    def initial(cls, labeled_known: Mapping[int, int], unlabeled) -> "PoolState":
        return cls(dict(labeled_known), (), tuple(int(i) for i in unlabeled), 0)

    def all_indices(self) -> frozenset[int]:
        return frozenset(self.labeled_known) | frozenset(self.labeled_unknown) | frozenset(self.unlabeled)

    def labeled_indices(self) -> np.ndarray:
        return np.array(sorted(set(self.labeled_known) | set(self.labeled_unknown)), dtype=np.int64)

    def check_labels(self, k: int) -> None:
        bad = [i for i, c in self.labeled_known.items() if not 0 <= c < k]
        if bad:
            raise ValueError(f"labeled_known labels outside [0, {k}) at indices {bad[:5]}")


@dataclass(frozen=True)
class RoundConfig:
    budget: int = 150
    target_precision: float = 0.6
    u_max: int = 100
    rounds: int = 10
    gamma: float = 1.0
    epochs: int = 40
    learning_rate: float = 0.05
    batch_size: int = 64
    weight_decay: float = 5e-4
    seed: int = 1
    momentum: float = 0.9
    lr_decay_every: int = 0
    hidden_dim: int = 64
    logit_clamp: float = 30.0
    learn_gamma: bool = False
    kmeans_restarts: int = 1
    initial_fraction: float = 0.05

    def __post_init__(self):
        if not 0 < self.target_precision <= 1:
            raise ValueError("target_precision must lie in (0, 1]")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.rounds < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("rounds, epochs and batch_size must be >= 1")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")
        if not 0 < self.initial_fraction <= 1:
            raise ValueError("initial_fraction must lie in (0, 1]")

    def validate_for(self, k: int) -> None:
        if self.u_max <= k:
            raise ValueError(f"u_max ({self.u_max}) must exceed k ({k})")

    @classmethod
    def from_dict(cls, data: Mapping) -> "RoundConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in names})

    def replace(self, **changes) -> "RoundConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_accuracy: float
    observed_precision: float
    u_hat: int
    pool_size: int
    calibrated_precision: float

    def __post_init__(self):
        for name in ("test_accuracy", "observed_precision", "calibrated_precision"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


def observed_precision(batch_is_known) -> float:
    """Fraction of a queried batch that belongs to known classes."""
    flags = np.asarray(batch_is_known, dtype=bool)
    if flags.size == 0:
        raise ValueError("empty query batch")
    return float(np.count_nonzero(flags)) / flags.size


def apply_query_result(state: PoolState, queried, oracle_labels: Mapping[int, int]) -> PoolState:
    """Move queried samples out of the unlabeled set.

    ``oracle_labels[i]`` is a class in ``[0, k)`` or :data:`UNKNOWN`.
    """
    queried = [int(i) for i in queried]
    unlabeled = set(state.unlabeled)
    for i in queried:
        if i not in unlabeled:
            raise ValueError(f"index not queryable: {i}")
    if len(set(queried)) != len(queried):
        raise ValueError("duplicate indices in query")
    known = dict(state.labeled_known)
    unknown = list(state.labeled_unknown)
    for i in queried:
        label = int(oracle_labels[i])
        if label == UNKNOWN:
            unknown.append(i)
        else:
            known[i] = label
        unlabeled.discard(i)
    return PoolState(known, tuple(unknown), tuple(unlabeled), state.round + 1)


def rng_stream(seed: int, round_: int, tag: str) -> np.random.Generator:
    """Independent generator keyed by (seed, round, subroutine tag)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_), zlib.crc32(tag.encode())]))


@dataclass
class Oracle:
    """Simulation ground truth: answers queries with a class or UNKNOWN."""

    true_classes: np.ndarray
    k: int

    def label(self, indices) -> dict[int, int]:
        out = {}
        for i in indices:
            c = int(self.true_classes[i])
            out[int(i)] = c if 0 <= c < self.k else UNKNOWN
        return out

    def is_known(self, indices) -> np.ndarray:
        cls = self.true_classes[np.asarray(indices, dtype=np.int64)]
        return (cls >= 0) & (cls < self.k)


@dataclass(frozen=True)
class Dataset:
    """Features plus simulation ground truth for one benchmark.

    ``true_classes`` uses ids ``[0, k)`` for known classes and ``>= k`` for
    unknown ones. ``test_indices`` are held-out known-class rows used only
    for accuracy.
    """

    features: FeatureSet
    true_classes: np.ndarray
    test_indices: np.ndarray
    k: int

    @property
    def oracle(self) -> Oracle:
        return Oracle(self.true_classes, self.k)
