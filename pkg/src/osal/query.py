"""Two-stage query selection and the per-round loop.

Stage 1 fits a three-component 1-D Gaussian mixture to purity scores, ranks
the unlabeled pool by posterior of the highest-mean component, and grows a
candidate pool until the mean posterior of its weakest ``budget`` members
falls to the calibrated precision. Stage 2 takes the ``budget`` most
informative candidates. The calibrated precision is nudged every round by
the gap between target and observed precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .class_estimation import estimate_unknown_classes
from .core import (UNKNOWN, Dataset, PoolState, RoundConfig, RoundMetrics, apply_query_result, observed_precision,
                   rng_stream)
from .evidential import predict, softmax, train
from .scoring import informativeness, purity_score

log = logging.getLogger(__name__)

N_COMPONENTS = 3
HIGH = N_COMPONENTS - 1
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Gmm1d:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    history: tuple[float, ...] = ()
    n_iter: int = 0


def _component_logpdf(x, means, variances):
    x = np.asarray(x, dtype=np.float64)[..., None]
    return -0.5 * (_LOG_2PI + np.log(variances) + (x - means) ** 2 / variances)


def _logsumexp(a, axis=-1):
    peak = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(peak, axis) + np.log(np.sum(np.exp(a - peak), axis=axis))


def fit_gmm_1d(scores, *, tol: float = 1e-8, max_iter: int = 500) -> Gmm1d:
    """EM for a three-component univariate Gaussian mixture.

    Initialized deterministically (means at the 1/6, 1/2 and 5/6 quantiles,
    equal weights, pooled within-tercile variance). Stops when the mean
    per-sample log-likelihood gains less than ``tol``. Components come back
    sorted by mean, so index 2 is the high component.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    if np.unique(x).size < N_COMPONENTS:
        raise ValueError("degenerate scores: need at least 3 distinct values")
    n = x.size
    floor = 1e-6 * float(np.var(x))
    means = np.quantile(x, [1 / 6, 3 / 6, 5 / 6])
    terciles = np.array_split(np.sort(x), N_COMPONENTS)
    pooled = sum(float(np.sum((t - t.mean()) ** 2)) for t in terciles) / n
    variances = np.full(N_COMPONENTS, max(pooled, floor))
    weights = np.full(N_COMPONENTS, 1.0 / N_COMPONENTS)

    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        joint = np.log(weights) + _component_logpdf(x, means, variances)
        total = _logsumexp(joint)
        history.append(float(total.sum()))
        if len(history) > 1 and (history[-1] - history[-2]) / n < tol:
            break
        resp = np.exp(joint - total[:, None])
        nk = resp.sum(axis=0)
        # a component that lost all mass keeps its parameters
        alive = nk > 1e-300
        new_means = means.copy()
        new_means[alive] = (resp[:, alive] * x[:, None]).sum(axis=0) / nk[alive]
        new_vars = variances.copy()
        new_vars[alive] = (resp[:, alive] * (x[:, None] - new_means[alive]) ** 2).sum(axis=0) / nk[alive]
        variances = np.maximum(new_vars, floor)
        means = new_means
        weights = nk / n
        weights = np.maximum(weights, 1e-300)
        weights /= weights.sum()
    else:
        joint = np.log(weights) + _component_logpdf(x, means, variances)
        history.append(float(_logsumexp(joint).sum()))

    order = np.argsort(means, kind="stable")
    return Gmm1d(weights[order], means[order], variances[order], history[-1], tuple(history), n_iter)


def component_posteriors(gmm: Gmm1d, scores) -> np.ndarray:
    joint = np.log(gmm.weights) + _component_logpdf(scores, gmm.means, gmm.variances)
    return np.exp(joint - _logsumexp(joint)[..., None])


def high_posterior(gmm: Gmm1d, scores):
    """Posterior probability of the highest-mean component."""
    post = component_posteriors(gmm, scores)[..., HIGH]
    return float(post) if np.ndim(post) == 0 else post


@dataclass(frozen=True)
class PrecisionController:
    target: float
    calibrated: float
    last_observed: float | None = None
    t: int = 0

    @classmethod
    def start(cls, target: float) -> "PrecisionController":
        """State before any query: calibrated precision equals the target."""
        if not 0.0 < target <= 1.0:
            raise ValueError("target precision must lie in (0, 1]")
        return cls(target, target)


def update_calibrated_precision(ctrl: PrecisionController, observed: float) -> PrecisionController:
    """Shift the calibrated precision by (target - observed), clamped to [0, 1]."""
    if not 0.0 <= observed <= 1.0:
        raise ValueError("observed precision must lie in [0, 1]")
    value = min(max(ctrl.calibrated + (ctrl.target - observed), 0.0), 1.0)
    return PrecisionController(ctrl.target, value, observed, ctrl.t + 1)


@dataclass(frozen=True)
class CandidatePool:
    indices: np.ndarray
    posteriors: np.ndarray

    def __len__(self):
        return int(self.indices.size)


def candidate_pool_from_posteriors(indices, posteriors, budget: int, p_hat: float) -> CandidatePool:
    """Grow the pool from the top ``budget`` samples (by posterior) while the
    mean posterior of its lowest ``budget`` members stays above ``p_hat``.

    The sample whose addition breaks the condition stays in the pool.
    Ordering is by (posterior descending, index ascending), so the result
    does not depend on input order.
    """
    indices = np.asarray(indices, dtype=np.int64)
    post = np.asarray(posteriors, dtype=np.float64)
    n = indices.size
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if n < budget:
        raise ValueError(f"budget exceeds unlabeled pool: {budget} > {n}")
    order = np.lexsort((indices, -post))
    idx, q = indices[order], post[order]
    # tail_mean[j] = mean of q[j : j + budget], the weakest block when the pool has j + budget members
    tail_mean = sliding_window_view(q, budget).mean(axis=1)
    stop = np.flatnonzero(tail_mean <= p_hat)
    size = n if stop.size == 0 else int(stop[0]) + budget
    return CandidatePool(idx[:size], q[:size])


def build_candidate_pool(indices, purity, gmm: Gmm1d, budget: int, p_hat: float) -> CandidatePool:
    return candidate_pool_from_posteriors(indices, high_posterior(gmm, np.asarray(purity)), budget, p_hat)


def select_queries(pool: CandidatePool, info, budget: int) -> np.ndarray:
    """Top ``budget`` pool members by informativeness.

    Ties go to the higher purity posterior, then the lower index.
    """
    info = np.asarray(info, dtype=np.float64)
    if info.shape != pool.indices.shape:
        raise ValueError("one informativeness score per pool member is required")
    if len(pool) < budget:
        raise ValueError(f"pool smaller than budget: {len(pool)} < {budget}")
    order = np.lexsort((pool.indices, -pool.posteriors, -info))
    return pool.indices[order[:budget]]


# ---------------------------------------------------------------------------
# Round orchestration


@dataclass
class RoundContext:
    """Everything a query selector may look at after scoring."""

    t: int
    unlabeled: np.ndarray
    purity: np.ndarray  # over ``unlabeled``
    posteriors: np.ndarray  # high-component posterior over ``unlabeled``
    primary_probs: np.ndarray  # primary-head softmax over ``unlabeled``
    budget: int
    calibrated: float
    rng: np.random.Generator
    extras: dict = field(default_factory=dict)


Selector = Callable[[RoundContext], tuple[np.ndarray, int]]


def two_stage_selector(ctx: RoundContext) -> tuple[np.ndarray, int]:
    pool = candidate_pool_from_posteriors(ctx.unlabeled, ctx.posteriors, ctx.budget, ctx.calibrated)
    pos = np.searchsorted(ctx.unlabeled, pool.indices)
    info = informativeness(ctx.primary_probs[pos])
    return select_queries(pool, info, ctx.budget), len(pool)


def _labeled_rows(state: PoolState, k: int):
    known_idx = np.fromiter(state.labeled_known.keys(), dtype=np.int64, count=len(state.labeled_known))
    known_cls = np.fromiter(state.labeled_known.values(), dtype=np.int64, count=len(state.labeled_known))
    unk_idx = np.asarray(state.labeled_unknown, dtype=np.int64)
    rows = np.concatenate([known_idx, unk_idx])
    labels = np.concatenate([known_cls, np.full(unk_idx.size, UNKNOWN)])
    return rows, labels


def run_round(
    state: PoolState,
    data: Dataset,
    config: RoundConfig,
    ctrl: PrecisionController,
    *,
    class_expansion: bool = True,
    selector: Selector | None = None,
):
    """One active-learning round. Returns ``(new_state, metrics, new_ctrl)``.

    ``class_expansion=False`` collapses all labeled unknowns into a single
    auxiliary class instead of running class estimation. ``selector``
    replaces the two-stage query step (used by baselines and ablations).
    """
    k = data.k
    t = state.round + 1
    features = data.features
    selector = selector or two_stage_selector

    u_hat = 0
    proxy = None
    if state.labeled_unknown and t > 1:
        if class_expansion:
            rows, labels = _labeled_rows(state, k)
            est = estimate_unknown_classes(
                features.matrix[rows], labels, k, config.u_max, config.seed,
                round_=t, restarts=config.kmeans_restarts,
            )
            u_hat, proxy = est.u_hat, est.proxy_labels
        else:
            u_hat, proxy = 1, np.full(len(state.labeled_unknown), k)

    params = train(features, state, k, config, u_hat=u_hat, proxy_labels=proxy, round_=t)

    pool_rows = np.array(sorted(state.all_indices()), dtype=np.int64)
    unlabeled = np.asarray(state.unlabeled, dtype=np.int64)
    z_pool, o_pool = predict(params, features.matrix[pool_rows])
    purity_all = purity_score(o_pool, k, round_=t if u_hat else 1)
    pos_u = np.searchsorted(pool_rows, unlabeled)

    z_test, _ = predict(params, features.matrix[data.test_indices])
    test_truth = data.true_classes[data.test_indices]
    test_acc = float(np.mean(np.argmax(z_test, axis=1) == test_truth)) if test_truth.size else 0.0

    if unlabeled.size == 0:
        metrics = RoundMetrics(t, test_acc, 0.0, u_hat, 0, ctrl.calibrated)
        return replace(state, round=t), metrics, ctrl

    gmm = fit_gmm_1d(purity_all)
    budget = min(config.budget, unlabeled.size)
    ctx = RoundContext(
        t=t,
        unlabeled=unlabeled,
        purity=purity_all[pos_u],
        posteriors=high_posterior(gmm, purity_all[pos_u]),
        primary_probs=softmax(z_pool[pos_u]),
        budget=budget,
        calibrated=ctrl.calibrated,
        rng=rng_stream(config.seed, t, "select"),
    )
    batch, pool_size = selector(ctx)
    oracle = data.oracle
    answers = oracle.label(batch)
    precision = observed_precision(oracle.is_known(batch))
    new_state = apply_query_result(state, batch, answers)
    metrics = RoundMetrics(t, test_acc, precision, u_hat, int(pool_size), ctrl.calibrated)
    log.info("round %d: acc=%.4f precision=%.3f u_hat=%d pool=%d p_hat=%.3f",
             t, test_acc, precision, u_hat, pool_size, ctrl.calibrated)
    return new_state, metrics, update_calibrated_precision(ctrl, precision)
