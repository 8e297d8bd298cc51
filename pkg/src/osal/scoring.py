"""Per-sample purity and informativeness scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SampleScores:
    purity: np.ndarray
    informativeness: np.ndarray


def purity_score(aux_logits, k: int, round_: int = 2) -> np.ndarray | float:
    """Known-vs-unknown logit margin of the auxiliary head.

    For ``round_ > 1``: best known logit minus best unknown logit. In the
    first round the head has no unknown slots and the score is the best
    known logit alone. Works on one logit vector or a matrix of rows.
    """
    o = np.asarray(aux_logits, dtype=np.float64)
    if not np.all(np.isfinite(o)):
        raise ValueError("logits must be finite")
    known = o[..., :k].max(axis=-1)
    if round_ <= 1:
        out = known
    else:
        if o.shape[-1] <= k:
            raise ValueError("no unknown classes in the auxiliary head")
        out = known - o[..., k:].max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _validate_dist(p, name):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError(f"{name} does not sum to 1")
    return p


def _kl_base2(p, m):
    # 0 * log(0 / m) := 0
    ratio = np.divide(p, m, out=np.ones_like(p), where=p > 0)
    return np.sum(np.where(p > 0, p * np.log2(ratio), 0.0), axis=-1)


def js_divergence(p, q):
    """Jensen-Shannon divergence in bits (so it lies in [0, 1]); row-wise for matrices."""
    p = _validate_dist(p, "p")
    q = _validate_dist(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    out = 0.5 * _kl_base2(p, m) + 0.5 * _kl_base2(q, m)
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def informativeness(probs):
    """JS(p || uniform) * JS(p || onehot(argmax p)).

    Zero at both extremes, largest for moderately uncertain predictions.
    Argmax ties go to the lowest class index.
    """
    p = _validate_dist(probs, "probs")
    n_classes = p.shape[-1]
    uniform = np.full_like(p, 1.0 / n_classes)
    peak = np.zeros_like(p)
    np.put_along_axis(peak, np.expand_dims(np.argmax(p, axis=-1), -1), 1.0, axis=-1)
    return js_divergence(p, uniform) * js_divergence(p, peak)


def max_softmax(probs) -> np.ndarray:
    return np.asarray(probs, dtype=np.float64).max(axis=-1)


def score_samples(aux_logits, primary_probs, k: int, round_: int = 2) -> SampleScores:
    """Purity from the auxiliary head and informativeness from the primary head, row by row."""
    purity = np.atleast_1d(purity_score(aux_logits, k, round_))
    info = np.atleast_1d(informativeness(primary_probs))
    if purity.shape != info.shape:
        raise ValueError("one row of auxiliary logits per row of primary probabilities is required")
    return SampleScores(purity, info)
