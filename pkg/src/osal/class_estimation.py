"""Label-guided clustering to estimate how many unknown classes the labeled
pool contains, and which of them each labeled unknown belongs to.

The search scores a clustering of the labeled pool into ``k + m`` clusters by
aligning clusters with the ``k`` known classes plus one collapsed unknown class
and multiplying the per-class F1 values. ``m`` is chosen by ternary search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import UNKNOWN, rng_stream

log = logging.getLogger(__name__)

MAX_ITER = 300


@dataclass
class ClusterAssignment:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    reseeded: int = 0  # empty clusters repaired during Lloyd iterations

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


@dataclass
class EstimationResult:
    u_hat: int
    score: float
    proxy_labels: np.ndarray
    unknown_centroids: np.ndarray
    evaluations: dict[int, float]


def _sq_dists(x: np.ndarray, centroids: np.ndarray, x_sq: np.ndarray | None = None) -> np.ndarray:
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", x, x)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    d = x_sq[:, None] - 2.0 * (x @ centroids.T) + c_sq[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x, n_clusters, rng, x_sq):
    n = x.shape[0]
    centers = np.empty((n_clusters, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1], x_sq)[:, 0]
    for j in range(1, n_clusters):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j : j + 1], x_sq)[:, 0])
    return centers


def _lloyd(x, centers, x_sq, max_iter):
    n = x.shape[0]
    n_clusters = centers.shape[0]
    assign = None
    history = []
    reseeded = 0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dists(x, centers, x_sq)
        new_assign = np.argmin(d, axis=1)
        point_d = d[np.arange(n), new_assign]
        history.append(float(point_d.sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=n_clusters)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # move each empty centroid onto the point currently farthest from its own centroid
            far = np.einsum("ij,ij->i", x - centers[assign], x - centers[assign])
            taken = set()
            for j in np.flatnonzero(~nonempty):
                order = np.argsort(-far, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                centers[j] = x[pick]
                far[pick] = -1.0
                reseeded += 1
    else:
        d = _sq_dists(x, centers, x_sq)
        assign = np.argmin(d, axis=1)
    inertia = float(d[np.arange(n), assign].sum())
    return assign, centers, inertia, history, n_iter, reseeded


def kmeans(features, n_clusters: int, seed=0, *, restarts: int = 1, max_iter: int = MAX_ITER) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeding.

    ``seed`` is an int or a ``numpy.random.Generator``. With ``restarts > 1``
    the run with the lowest final inertia wins.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > n:
        raise ValueError(f"too many clusters: {n_clusters} > {n} samples")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x_sq = np.einsum("ij,ij->i", x, x)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp(x, n_clusters, rng, x_sq)
        assign, centers, inertia, history, n_iter, reseeded = _lloyd(x, centers, x_sq, max_iter)
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(assign, centers, inertia, history, n_iter, reseeded)
    return best


def hungarian_match(cost) -> np.ndarray:
    """Minimum-cost assignment of every row to a distinct column.

    Shortest augmenting paths with dual potentials, O(r^2 c). Returns
    ``cols`` with ``cols[i]`` the column given to row ``i``; surplus columns
    stay unassigned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    r, c = cost.shape
    if r > c:
        raise ValueError(f"rows exceed columns: {r} > {c}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    if r == 0:
        return np.zeros(0, dtype=np.int64)
    # 1-based rows/columns; column 0 is the virtual root of each search
    u = np.zeros(r + 1)
    v = np.zeros(c + 1)
    owner = np.zeros(c + 1, dtype=np.int64)
    way = np.zeros(c + 1, dtype=np.int64)
    for i in range(1, r + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(c + 1, np.inf)
        used = np.zeros(c + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(r, dtype=np.int64)
    for j in range(1, c + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def assignment_cost(cost, cols) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[i, j] for i, j in enumerate(cols)))


def _collapse_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = labels.copy()
    out[(labels < 0) | (labels >= k)] = k
    return out


def match_clusters(assignments, labels, k: int, n_clusters: int) -> np.ndarray:
    """Map every cluster to one of ``k + 1`` classes (index ``k`` = unknown).

    ``k + 1`` clusters are matched one-to-one by maximum overlap; every
    other cluster goes to the unknown class. Clusters are put in a canonical
    order (by composition) before matching so the result does not depend on
    how cluster ids happen to be numbered.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    y = _collapse_labels(labels, k)
    if n_clusters < k + 1:
        raise ValueError(f"insufficient clusters: {n_clusters} < k+1 = {k + 1}")
    overlap = np.zeros((k + 1, n_clusters), dtype=np.int64)
    np.add.at(overlap, (y, assignments), 1)
    canon = np.lexsort(overlap[::-1])
    cols = hungarian_match(-overlap[:, canon].astype(np.float64))
    mapping = np.full(n_clusters, k, dtype=np.int64)
    mapping[canon[cols]] = np.arange(k + 1)
    return mapping


def class_f1(pred, truth, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    tp = np.bincount(truth[pred == truth], minlength=n_classes).astype(np.float64)
    n_pred = np.bincount(pred, minlength=n_classes).astype(np.float64)
    n_true = np.bincount(truth, minlength=n_classes).astype(np.float64)
    denom = n_pred + n_true  # 2tp + fp + fn
    return np.divide(2.0 * tp, denom, out=np.zeros(n_classes), where=denom > 0)


def f1_product_evaluate(assignments, labels, k: int, n_clusters: int | None = None) -> float:
    """Product of per-class F1 over the ``k`` known classes and the collapsed unknown class.

    ``labels`` holds known classes in ``[0, k)``; anything else (including
    :data:`UNKNOWN`) is the unknown class.
    """
    if isinstance(assignments, ClusterAssignment):
        n_clusters = assignments.n_clusters
        assignments = assignments.assignments
    assignments = np.asarray(assignments, dtype=np.int64)
    if n_clusters is None:
        n_clusters = int(assignments.max()) + 1
    mapping = match_clusters(assignments, labels, k, n_clusters)
    f1 = class_f1(mapping[assignments], _collapse_labels(labels, k), k + 1)
    return float(np.prod(f1))


def ternary_search_max(evaluate: Callable[[int], float], lo: int, hi: int) -> tuple[int, float, dict[int, float]]:
    """Maximize an (assumed unimodal) integer function on ``[lo, hi]``.

    Each point is evaluated at most once. Returns ``(argmax, max, cache)``;
    ties in the final sweep go to the smallest argument.
    """
    if lo > hi:
        raise ValueError(f"empty search interval [{lo}, {hi}]")
    cache: dict[int, float] = {}

    def score(m):
        if m not in cache:
            cache[m] = float(evaluate(m))
        return cache[m]

    left, right = lo, hi
    while right - left > 2:
        m1 = (2 * left + right) // 3
        m2 = (left + 2 * right) // 3
        if score(m1) < score(m2):
            left = m1
        else:
            right = m2
    best = max(range(left, right + 1), key=lambda m: (score(m), -m))
    return best, cache[best], cache


def assign_proxy_labels(features, unknown_centroids) -> np.ndarray:
    """Index of the nearest unknown centroid for each row (ties -> lowest index)."""
    centroids = np.asarray(unknown_centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[0] == 0:
        raise ValueError("no unknown clusters")
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    diff = x[:, None, :] - centroids[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    return np.argmin(d, axis=1)


def estimate_unknown_classes(
    features,
    labels,
    k: int,
    u_max: int,
    seed: int,
    *,
    round_: int = 0,
    restarts: int = 1,
) -> EstimationResult:
    """Search the unknown-class count on the labeled pool.

    ``features`` are the labeled rows; ``labels`` gives a known class in
    ``[0, k)`` or :data:`UNKNOWN` per row. Proxy labels are returned for the
    unknown rows in their order of appearance, offset into ``[k, k + u_hat)``.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    is_unknown = (labels < 0) | (labels >= k)
    if not is_unknown.any():
        raise ValueError("no labeled unknowns: class estimation needs at least one")
    if u_max <= k:
        raise ValueError(f"u_max ({u_max}) must exceed k ({k})")
    lo = k + 1
    hi = min(u_max, x.shape[0] - k)
    if hi < lo:
        raise ValueError(f"too few labeled samples ({x.shape[0]}) to search m in [{lo}, {u_max}]")

    fits: dict[int, ClusterAssignment] = {}

    def evaluate(m: int) -> float:
        fit = kmeans(x, k + m, rng_stream(seed, round_, f"kmeans:{m}"), restarts=restarts)
        fits[m] = fit
        return f1_product_evaluate(fit, labels, k)

    u_hat, score, cache = ternary_search_max(evaluate, lo, hi)
    fit = fits[u_hat]
    mapping = match_clusters(fit.assignments, labels, k, fit.n_clusters)
    unknown_ids = np.flatnonzero(mapping == k)
    centroids = fit.centroids[unknown_ids]
    proxy = assign_proxy_labels(x[is_unknown], centroids) + k
    log.debug("class estimation: u_hat=%d score=%.4f evaluated=%s", u_hat, score, sorted(cache))
    return EstimationResult(u_hat, score, proxy, centroids, dict(cache))


__all__ = [
    "UNKNOWN",
    "ClusterAssignment",
    "EstimationResult",
    "kmeans",
    "hungarian_match",
    "assignment_cost",
    "match_clusters",
    "class_f1",
    "f1_product_evaluate",
    "ternary_search_max",
    "assign_proxy_labels",
    "estimate_unknown_classes",
]
