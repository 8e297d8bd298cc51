"""Dual-head classifier with a Dirichlet-evidential auxiliary head.

A shared one-hidden-layer tanh encoder feeds two affine heads:

* the primary head scores the ``k`` known classes and is trained with
  softmax cross-entropy on known-labeled samples only;
* the auxiliary head scores ``k + u_hat`` classes (known plus proxy unknown
  clusters). Its logits ``o`` give evidence ``exp(o)`` and Dirichlet
  concentrations ``alpha = exp(o) / gamma + 1``; it is trained with the
  expected-likelihood NLL plus a KL pull of the off-target concentrations
  toward the flat Dirichlet.

Gradients are derived by hand; ``tests/test_evidential.py`` checks them
against central differences.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureSet, PoolState, RoundConfig, rng_stream
from .special import digamma, log_gamma, trigamma

log = logging.getLogger(__name__)

PARAM_NAMES = ("w_enc", "b_enc", "w_pri", "b_pri", "w_aux", "b_aux", "log_gamma")


@dataclass
class DualHeadParams:
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_pri: np.ndarray
    b_pri: np.ndarray
    w_aux: np.ndarray
    b_aux: np.ndarray
    log_gamma: np.ndarray  # shape (1,), so it can be updated in place like the rest
    input_mean: np.ndarray
    input_scale: np.ndarray
    logit_clamp: float = 30.0
    loss_history: list[float] = field(default_factory=list)

    @property
    def gamma(self) -> float:
        return float(np.exp(self.log_gamma[0]))

    @property
    def k(self) -> int:
        return self.w_pri.shape[1]

    @property
    def aux_width(self) -> int:
        return self.w_aux.shape[1]

    @property
    def u_hat(self) -> int:
        return self.aux_width - self.k

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "DualHeadParams":
        return dataclasses.replace(
            self,
            **{name: arr.copy() for name, arr in self.arrays().items()},
            loss_history=list(self.loss_history),
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def init_params(dim, hidden, k, aux_width, gamma, rng, *, input_mean=None, input_scale=None, logit_clamp=30.0):
    if aux_width < k:
        raise ValueError("auxiliary head must cover at least the known classes")
    return DualHeadParams(
        w_enc=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, hidden)),
        b_enc=np.zeros(hidden),
        w_pri=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, k)),
        b_pri=np.zeros(k),
        w_aux=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, aux_width)),
        b_aux=np.zeros(aux_width),
        log_gamma=np.array([np.log(gamma)]),
        input_mean=np.zeros(dim) if input_mean is None else np.asarray(input_mean, dtype=np.float64),
        input_scale=np.ones(dim) if input_scale is None else np.asarray(input_scale, dtype=np.float64),
        logit_clamp=logit_clamp,
    )


# ---------------------------------------------------------------------------
# Probability maps and per-sample losses


def calibrated_softmax(logits, gamma: float) -> np.ndarray:
    """(exp(o_y) + gamma) / sum_c (exp(o_c) + gamma), along the last axis.

    Not shift invariant, which is the point: weak evidence everywhere keeps
    the distribution close to uniform. Callers clamp logits beforehand if
    they can exceed the float64 exponent range.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    o = np.asarray(logits, dtype=np.float64)
    num = np.exp(o) + gamma
    return num / num.sum(axis=-1, keepdims=True)


def dirichlet_alpha(logits, gamma: float, clamp: float = 30.0) -> np.ndarray:
    return np.exp(np.clip(np.asarray(logits, dtype=np.float64), -clamp, clamp)) / gamma + 1.0


def _check_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("invalid concentration: alpha must be finite and > 0")
    return alpha


def dirichlet_expected_prob(alpha) -> np.ndarray:
    alpha = _check_alpha(alpha)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def _pick(arr, y):
    y = np.asarray(y, dtype=np.int64)
    if arr.ndim == 1:
        return arr[y]
    return arr[np.arange(arr.shape[0]), y]


def loss_nll(alpha, true_class):
    """-log(alpha_y / sum(alpha)); per row for a batch."""
    alpha = _check_alpha(alpha)
    out = np.log(alpha.sum(axis=-1)) - np.log(_pick(alpha, true_class))
    return float(out) if np.ndim(out) == 0 else out


def deflate(alpha, true_class) -> np.ndarray:
    """Replace the target-class concentration by 1, keeping the others."""
    alpha = np.array(_check_alpha(alpha), dtype=np.float64)
    if alpha.ndim == 1:
        alpha[int(true_class)] = 1.0
    else:
        alpha[np.arange(alpha.shape[0]), np.asarray(true_class, dtype=np.int64)] = 1.0
    return alpha


def kl_to_flat_dirichlet(alpha_tilde):
    """KL(Dir(a) || Dir(1, ..., 1)) in closed form, per row."""
    a = _check_alpha(alpha_tilde)
    n_classes = a.shape[-1]
    s = a.sum(axis=-1)
    out = (
        log_gamma(s)
        - log_gamma(float(n_classes))
        - np.sum(log_gamma(a), axis=-1)
        + np.sum((a - 1.0) * (digamma(a) - np.expand_dims(digamma(s), -1)), axis=-1)
    )
    return float(out) if np.ndim(out) == 0 else out


def loss_kl(alpha, true_class):
    return kl_to_flat_dirichlet(deflate(alpha, true_class))


# ---------------------------------------------------------------------------
# Forward / backward


def _normalize(params, x):
    return (np.asarray(x, dtype=np.float64) - params.input_mean) / params.input_scale


def forward(params: DualHeadParams, x):
    """Return (primary logits, auxiliary logits) for the rows of ``x``."""
    h = np.tanh(_normalize(params, x) @ params.w_enc + params.b_enc)
    return h @ params.w_pri + params.b_pri, h @ params.w_aux + params.b_aux


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def total_loss(params: DualHeadParams, x, primary_labels, aux_labels, *, with_grad: bool = True):
    """Cross-entropy on the primary head plus NLL + KL on the auxiliary head.

    ``primary_labels`` is -1 for rows without a known class (labeled
    unknowns); those rows contribute only to the auxiliary terms. Each term
    is averaged over the rows it applies to. Returns ``(loss, grads)`` with
    ``grads`` keyed like :data:`PARAM_NAMES` (``None`` if ``with_grad`` is
    false).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    yp = np.asarray(primary_labels, dtype=np.int64)
    ya = np.asarray(aux_labels, dtype=np.int64)
    if yp.shape != (n,) or ya.shape != (n,):
        raise ValueError("label arrays must match the batch size")
    if np.any(ya < 0) or np.any(ya >= params.aux_width):
        raise ValueError("auxiliary labels out of range")
    if np.any(yp >= params.k):
        raise ValueError("primary labels out of range")
    rows = np.arange(n)
    known = yp >= 0
    n_known = int(known.sum())
    gamma = params.gamma
    clamp = params.logit_clamp

    xn = _normalize(params, x)
    h = np.tanh(xn @ params.w_enc + params.b_enc)
    z = h @ params.w_pri + params.b_pri
    o = h @ params.w_aux + params.b_aux

    # primary head: softmax cross-entropy over known-labeled rows
    ce = 0.0
    dz = np.zeros_like(z)
    if n_known:
        zk = z[known]
        p = softmax(zk)
        yk = yp[known]
        ce = float(np.mean(-np.log(p[np.arange(n_known), yk])))
        g = p.copy()
        g[np.arange(n_known), yk] -= 1.0
        dz[known] = g / n_known

    # auxiliary head: evidential terms
    inside = (o > -clamp) & (o < clamp)
    ev = np.exp(np.clip(o, -clamp, clamp)) / gamma
    alpha = ev + 1.0
    s = alpha.sum(axis=1)
    nll = np.log(s) - np.log(alpha[rows, ya])
    a_t = alpha.copy()
    a_t[rows, ya] = 1.0
    kl = kl_to_flat_dirichlet(a_t)
    kl = np.atleast_1d(kl)
    loss = ce + float(np.mean(nll + kl))
    if not with_grad:
        return loss, None

    c = alpha.shape[1]
    s_t = a_t.sum(axis=1)
    d_alpha = np.repeat((1.0 / s)[:, None], c, axis=1)
    d_alpha[rows, ya] -= 1.0 / alpha[rows, ya]
    d_kl = (a_t - 1.0) * trigamma(a_t) - (trigamma(s_t) * (s_t - c))[:, None]
    d_kl[rows, ya] = 0.0  # deflated entry is constant
    d_alpha = (d_alpha + d_kl) / n
    do = d_alpha * ev * inside
    d_log_gamma = -np.sum(d_alpha * ev)

    dh = dz @ params.w_pri.T + do @ params.w_aux.T
    da = dh * (1.0 - h * h)
    grads = {
        "w_enc": xn.T @ da,
        "b_enc": da.sum(axis=0),
        "w_pri": h.T @ dz,
        "b_pri": dz.sum(axis=0),
        "w_aux": h.T @ do,
        "b_aux": do.sum(axis=0),
        "log_gamma": np.array([d_log_gamma]),
    }
    return loss, grads


# ---------------------------------------------------------------------------
# Training


def fit(params: DualHeadParams, x, primary_labels, aux_labels, config: RoundConfig, rng) -> DualHeadParams:
    """Mini-batch SGD with momentum, L2 weight decay and optional step decay."""
    x = np.asarray(x, dtype=np.float64)
    yp = np.asarray(primary_labels, dtype=np.int64)
    ya = np.asarray(aux_labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("nothing to train on")
    names = [nm for nm in PARAM_NAMES if nm != "log_gamma" or config.learn_gamma]
    velocity = {nm: np.zeros_like(getattr(params, nm)) for nm in names}
    lr = config.learning_rate
    for epoch in range(config.epochs):
        if config.lr_decay_every and epoch and epoch % config.lr_decay_every == 0:
            lr *= 0.1
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = total_loss(params, x[idx], yp[idx], ya[idx])
            epoch_loss += loss * idx.size
            for nm in names:
                p = getattr(params, nm)
                g = grads[nm]
                if nm != "log_gamma":
                    g = g + config.weight_decay * p
                v = velocity[nm]
                v *= config.momentum
                v += g
                p -= lr * v
        params.loss_history.append(epoch_loss / n)
    if not params.all_finite():
        raise FloatingPointError("training produced non-finite parameters")
    return params


def training_targets(state: PoolState, k: int, proxy_labels=None):
    """Indices plus primary/auxiliary targets for the labeled pool.

    Labeled unknowns get primary target -1 and auxiliary target from
    ``proxy_labels`` (aligned with ``state.labeled_unknown``). Without proxy
    labels they are left out, which is the first-round situation.
    """
    known_idx = np.fromiter(state.labeled_known.keys(), dtype=np.int64, count=len(state.labeled_known))
    known_cls = np.fromiter(state.labeled_known.values(), dtype=np.int64, count=len(state.labeled_known))
    if proxy_labels is None or not state.labeled_unknown:
        return known_idx, known_cls, known_cls.copy()
    unk_idx = np.asarray(state.labeled_unknown, dtype=np.int64)
    proxy = np.asarray(proxy_labels, dtype=np.int64)
    if proxy.shape != unk_idx.shape:
        raise ValueError("one proxy label per labeled unknown is required")
    idx = np.concatenate([known_idx, unk_idx])
    yp = np.concatenate([known_cls, np.full(unk_idx.size, -1)])
    ya = np.concatenate([known_cls, proxy])
    return idx, yp, ya


def train(features: FeatureSet, state: PoolState, k: int, config: RoundConfig, *, u_hat: int = 0,
          proxy_labels=None, round_: int | None = None) -> DualHeadParams:
    """Fresh model fit on the current labeled pool.

    The auxiliary head is ``k``-way when ``u_hat`` is 0 (no labeled unknowns
    yet) and ``(k + u_hat)``-way otherwise.
    """
    round_ = state.round if round_ is None else round_
    idx, yp, ya = training_targets(state, k, proxy_labels if u_hat else None)
    if idx.size == 0:
        raise ValueError("nothing to train on")
    matrix = features.matrix
    mean = matrix.mean(axis=0)
    scale = matrix.std(axis=0)
    scale[scale == 0] = 1.0
    params = init_params(
        matrix.shape[1], config.hidden_dim, k, k + u_hat, config.gamma,
        rng_stream(config.seed, round_, "init"),
        input_mean=mean, input_scale=scale, logit_clamp=config.logit_clamp,
    )
    fit(params, matrix[idx], yp, ya, config, rng_stream(config.seed, round_, "shuffle"))
    log.debug("round %d: trained on %d samples, final loss %.4f", round_, idx.size, params.loss_history[-1])
    return params


def predict(params: DualHeadParams, x, batch: int = 4096):
    """Primary logits and auxiliary logits, evaluated in row blocks."""
    x = np.asarray(x, dtype=np.float64)
    zs, os_ = [], []
    for start in range(0, x.shape[0], batch):
        z, o = forward(params, x[start : start + batch])
        zs.append(z)
        os_.append(o)
    if not zs:
        return np.zeros((0, params.k)), np.zeros((0, params.aux_width))
    return np.concatenate(zs), np.concatenate(os_)
