"""Synthetic open-set benchmarks, comparison strategies and experiment runs."""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .core import Dataset, FeatureSet, PoolState, RoundConfig, RoundMetrics, rng_stream
from .query import PrecisionController, RoundContext, run_round, two_stage_selector
from .scoring import informativeness

log = logging.getLogger(__name__)

STRATEGIES = ("e2oal", "random", "uncertainty", "purity_only", "info_only", "no_class_expansion")
MIN_CENTROID_GAP = 1.0  # in units of within-class sigma


@dataclass(frozen=True)
class SyntheticSpec:
    known_classes: int = 20
    unknown_classes: int = 30
    dim: int = 32
    samples_per_class: int = 200
    cluster_separation: float = 6.0
    test_fraction: float = 0.5
    seed: int = 0
    initial_fraction: float = 0.05

    def __post_init__(self):
        if self.cluster_separation <= 0:
            raise ValueError("cluster_separation must be > 0")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.known_classes < 2:
            raise ValueError("known_classes must be >= 2")
        if self.unknown_classes < 0 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("unknown_classes must be >= 0; dim and samples_per_class >= 1")


@dataclass(frozen=True)
class SyntheticBenchmark:
    features: FeatureSet
    true_classes: np.ndarray
    splits: np.ndarray
    state: PoolState
    spec: SyntheticSpec

    @property
    def test_indices(self) -> np.ndarray:
        return known_test_indices(self.true_classes, self.splits, self.spec.known_classes)

    @property
    def dataset(self) -> Dataset:
        return Dataset(self.features, self.true_classes, self.test_indices, self.spec.known_classes)


def known_test_indices(true_classes, splits, k) -> np.ndarray:
    true_classes = np.asarray(true_classes)
    return np.flatnonzero((np.asarray(splits) == "test") & (true_classes >= 0) & (true_classes < k))


def class_centroids(n_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    """Points on a sphere scaled so their mean pairwise distance equals ``separation``."""
    if n_classes == 1:
        return np.zeros((1, dim))
    if dim == 1 and n_classes > 2:
        raise ValueError(f"infeasible separation/dim: {n_classes} classes cannot be distinct on a 1-D sphere")
    directions = rng.normal(size=(n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    gaps = np.linalg.norm(directions[:, None] - directions[None, :], axis=-1)
    upper = gaps[np.triu_indices(n_classes, 1)]
    centroids = directions * (separation / upper.mean())
    closest = upper.min() * separation / upper.mean()
    if closest < MIN_CENTROID_GAP:
        raise ValueError(
            f"infeasible separation/dim: closest centroids are {closest:.3f} sigma apart "
            f"(need >= {MIN_CENTROID_GAP}); raise the separation or the dimension"
        )
    return centroids


def initial_pool(true_classes, splits, k: int, fraction: float, rng) -> PoolState:
    """Label a random ``fraction`` of the known-class pool rows; the rest is unlabeled."""
    true_classes = np.asarray(true_classes)
    pool_rows = np.flatnonzero(np.asarray(splits) == "pool")
    known_rows = pool_rows[(true_classes[pool_rows] >= 0) & (true_classes[pool_rows] < k)]
    if known_rows.size == 0:
        raise ValueError("pool has no known-class samples to seed the labeled set")
    n_init = max(1, int(round(fraction * known_rows.size)))
    chosen = np.sort(rng.choice(known_rows, size=n_init, replace=False))
    labeled = {int(i): int(true_classes[i]) for i in chosen}
    rest = np.setdiff1d(pool_rows, chosen)
    return PoolState.initial(labeled, rest)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticBenchmark:
    """Isotropic unit-variance Gaussian classes; class ids ``< k`` are known."""
    rng = rng_stream(spec.seed, 0, "synthetic")
    n_classes = spec.known_classes + spec.unknown_classes
    centroids = class_centroids(n_classes, spec.dim, spec.cluster_separation, rng)
    per = spec.samples_per_class
    classes = np.repeat(np.arange(n_classes), per)
    matrix = centroids[classes] + rng.normal(size=(classes.size, spec.dim))
    n_test = int(round(spec.test_fraction * per))
    splits = np.tile(np.array(["test"] * n_test + ["pool"] * (per - n_test)), n_classes)
    for c in range(n_classes):
        block = slice(c * per, (c + 1) * per)
        splits[block] = splits[block][rng.permutation(per)]
    order = rng.permutation(classes.size)
    # round-trip through float32 so in-memory and on-disk runs see identical features
    matrix = matrix[order].astype(np.float32).astype(np.float64)
    classes, splits = classes[order], splits[order]
    state = initial_pool(classes, splits, spec.known_classes, spec.initial_fraction,
                         rng_stream(spec.seed, 0, "initial_pool"))
    return SyntheticBenchmark(FeatureSet.from_matrix(matrix), classes, splits, state, spec)


def write_benchmark(bench: SyntheticBenchmark, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feat_path, label_path = out / "features.e2fm", out / "labels.csv"
    io.write_features(feat_path, bench.features.matrix)
    io.write_labels(label_path, bench.features.sample_ids, bench.true_classes, bench.splits)
    return feat_path, label_path


# ---------------------------------------------------------------------------
# Selectors for comparison strategies


def _top(indices, score, budget):
    order = np.lexsort((indices, -np.asarray(score)))
    return indices[order[:budget]]


def random_selector(ctx: RoundContext):
    return np.sort(ctx.rng.choice(ctx.unlabeled, size=ctx.budget, replace=False)), ctx.unlabeled.size


def uncertainty_selector(ctx: RoundContext):
    return _top(ctx.unlabeled, -ctx.primary_probs.max(axis=1), ctx.budget), ctx.unlabeled.size


def purity_only_selector(ctx: RoundContext):
    return _top(ctx.unlabeled, ctx.purity, ctx.budget), ctx.budget


def info_only_selector(ctx: RoundContext):
    return _top(ctx.unlabeled, informativeness(ctx.primary_probs), ctx.budget), ctx.unlabeled.size


_SELECTORS = {
    "e2oal": (two_stage_selector, True),
    "no_class_expansion": (two_stage_selector, False),
    "random": (random_selector, True),
    "uncertainty": (uncertainty_selector, True),
    "purity_only": (purity_only_selector, True),
    "info_only": (info_only_selector, True),
}


def run_strategy(strategy: str, data: Dataset, state: PoolState, config: RoundConfig) -> list[RoundMetrics]:
    """Run ``config.rounds`` rounds (or until the pool is empty) with one strategy."""
    if strategy not in _SELECTORS:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    config.validate_for(data.k)
    state.check_labels(data.k)
    selector, expansion = _SELECTORS[strategy]
    ctrl = PrecisionController.start(config.target_precision)
    rows = []
    for _ in range(config.rounds):
        if not state.unlabeled:
            break
        state, metrics, ctrl = run_round(state, data, config, ctrl, class_expansion=expansion, selector=selector)
        rows.append(metrics)
    return rows


# ---------------------------------------------------------------------------
# Experiments


_DATA_KEYS = {"synthetic", "features", "labels", "k", "initial_fraction"}
_TOP_KEYS = {"data", "strategies", "seeds", "output_dir", "workers"} | {
    f.name for f in dataclasses.fields(RoundConfig)
} - {"seed"}


@dataclass
class ExperimentPlan:
    data: Dataset
    pool_rows: np.ndarray  # split == "pool"
    splits: np.ndarray
    strategies: list[str]
    seeds: list[int]
    config: RoundConfig
    output_dir: Path
    initial_fraction: float
    workers: int = 1


def _field_error(path, name, message):
    return io.FileFormatError(path, f"field {name!r}: {message}")


def load_plan(config_path, output_dir=None) -> ExperimentPlan:
    path = Path(config_path)
    raw = io.read_json(path)
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise _field_error(path, unknown[0], "unknown field")
    for required in ("data", "strategies", "seeds"):
        if required not in raw:
            raise _field_error(path, required, "missing")
    strategies = raw["strategies"]
    if not isinstance(strategies, list) or not strategies or any(s not in STRATEGIES for s in strategies):
        raise _field_error(path, "strategies", f"must be a non-empty list drawn from {list(STRATEGIES)}")
    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise _field_error(path, "seeds", "must be a non-empty list of integers")
    try:
        config = RoundConfig.from_dict({key: value for key, value in raw.items() if key not in ("data",)})
    except (TypeError, ValueError) as exc:
        raise io.FileFormatError(path, f"round configuration: {exc}") from None

    data_cfg = raw["data"]
    if not isinstance(data_cfg, dict):
        raise _field_error(path, "data", "must be an object")
    bad = sorted(set(data_cfg) - _DATA_KEYS)
    if bad:
        raise _field_error(path, f"data.{bad[0]}", "unknown field")
    fraction = float(data_cfg.get("initial_fraction", config.initial_fraction))
    base = path.parent
    if "synthetic" in data_cfg:
        try:
            spec = SyntheticSpec(**data_cfg["synthetic"])
        except (TypeError, ValueError) as exc:
            raise _field_error(path, "data.synthetic", str(exc)) from None
        bench = generate_synthetic(spec)
        dataset, splits = bench.dataset, bench.splits
    else:
        for key in ("features", "labels", "k"):
            if key not in data_cfg:
                raise _field_error(path, f"data.{key}", "missing (or give data.synthetic)")
        features = io.read_features(base / data_cfg["features"])
        label_path = base / data_cfg["labels"]
        labels = io.align_labels(features, io.read_labels(label_path), label_path)
        k = int(data_cfg["k"])
        dataset = Dataset(features, labels.true_classes, known_test_indices(labels.true_classes, labels.splits, k), k)
        splits = labels.splits
    try:
        config.validate_for(dataset.k)
    except ValueError as exc:
        raise _field_error(path, "u_max", str(exc)) from None
    out = Path(output_dir) if output_dir is not None else base / raw.get("output_dir", "results")
    return ExperimentPlan(
        data=dataset,
        pool_rows=np.flatnonzero(splits == "pool"),
        splits=splits,
        strategies=list(strategies),
        seeds=list(seeds),
        config=config,
        output_dir=out,
        initial_fraction=fraction,
        workers=int(raw.get("workers", 1)),
    )


def cell_filename(strategy: str, seed: int) -> str:
    return f"{strategy}_seed{seed}.csv"


def run_cell(plan: ExperimentPlan, strategy: str, seed: int) -> list[RoundMetrics]:
    config = plan.config.replace(seed=seed)
    state = initial_pool(plan.data.true_classes, plan.splits, plan.data.k, plan.initial_fraction,
                         rng_stream(seed, 0, "initial_pool"))
    return run_strategy(strategy, plan.data, state, config)


def _run_cell_job(args):
    plan, strategy, seed = args
    return run_cell(plan, strategy, seed)


def summarize(rows_by_cell: dict[tuple[str, int], list[RoundMetrics]], strategies, seeds) -> dict:
    summary = {}
    for strategy in strategies:
        finals, precisions, cells = [], [], {}
        for seed in seeds:
            rows = rows_by_cell[(strategy, seed)]
            final = rows[-1].test_accuracy if rows else 0.0
            prec = float(np.mean([r.observed_precision for r in rows])) if rows else 0.0
            finals.append(final)
            precisions.append(prec)
            cells[str(seed)] = {"final_accuracy": final, "mean_precision": prec}
        summary[strategy] = {
            "final_accuracy_mean": float(np.mean(finals)),
            "final_accuracy_std": float(np.std(finals)),
            "mean_precision_mean": float(np.mean(precisions)),
            "mean_precision_std": float(np.std(precisions)),
            "cells": cells,
        }
    return summary


def run_experiment(config_path, output_dir=None) -> dict:
    """Run every (strategy, seed) cell; write one metrics CSV per cell and summary.json."""
    plan = load_plan(config_path, output_dir)
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(plan, s, seed) for s in plan.strategies for seed in plan.seeds]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(job) for job in jobs]
    for (_, strategy, seed), rows in zip(jobs, results):
        io.write_metrics(plan.output_dir / cell_filename(strategy, seed), rows)
    # aggregate from the files so the summary always matches what was written
    rows_by_cell = {
        (s, seed): io.read_metrics(plan.output_dir / cell_filename(s, seed)) for _, s, seed in jobs
    }
    summary = summarize(rows_by_cell, plan.strategies, plan.seeds)
    with open(plan.output_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
