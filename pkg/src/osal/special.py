"""Log-gamma, digamma and trigamma for positive real arguments.

All three shift the argument upward with the standard recurrences until it
is large enough for the asymptotic (Stirling / Bernoulli) series to reach
double precision, then undo the shift. Inputs may be scalars or arrays.
"""

from __future__ import annotations

import numpy as np

_SHIFT_TO = 10.0
_HALF_LOG_2PI = 0.91893853320467274178

# B_{2n} / (2n (2n-1)) for the log-gamma series, n = 1..8
_LGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
# B_{2n} / (2n) for the digamma series
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
)
# B_{2n} for the trigamma series
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)


def _check_domain(x):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("domain: argument must be finite and > 0")
    return arr


def _wrap(result, x):
    if np.ndim(x) == 0:
        return float(result)
    return result


def _shift(z):
    """Return (shifted z >= _SHIFT_TO, number of unit steps taken)."""
    steps = np.where(z < _SHIFT_TO, np.ceil(_SHIFT_TO - z), 0.0)
    return z + steps, steps.astype(np.int64)


def log_gamma(x):
    """log Gamma(x) for x > 0."""
    z = _check_domain(x)
    w, steps = _shift(z)
    inv = 1.0 / w
    inv2 = inv * inv
    series = np.zeros_like(w)
    for c in reversed(_LGAMMA_COEF):
        series = series * inv2 + c
    out = (w - 0.5) * np.log(w) - w + _HALF_LOG_2PI + series * inv
    # log Gamma(z) = log Gamma(z + n) - log(z (z+1) ... (z+n-1))
    max_steps = int(steps.max(initial=0))
    if max_steps:
        prod = np.ones_like(z)
        for i in range(max_steps):
            prod = np.where(i < steps, prod * (z + i), prod)
        out = out - np.log(prod)
    return _wrap(out, x)


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    z = _check_domain(x)
    w, steps = _shift(z)
    inv2 = 1.0 / (w * w)
    series = np.zeros_like(w)
    for c in reversed(_DIGAMMA_COEF):
        series = series * inv2 + c
    out = np.log(w) - 0.5 / w - series * inv2
    max_steps = int(steps.max(initial=0))
    for i in range(max_steps):
        out = out - np.where(i < steps, 1.0 / (z + i), 0.0)
    return _wrap(out, x)


def trigamma(x):
    """psi'(x) for x > 0."""
    z = _check_domain(x)
    w, steps = _shift(z)
    inv = 1.0 / w
    inv2 = inv * inv
    series = np.zeros_like(w)
    for c in reversed(_TRIGAMMA_COEF):
        series = series * inv2 + c
    out = inv + 0.5 * inv2 + series * inv2 * inv
    max_steps = int(steps.max(initial=0))
    for i in range(max_steps):
        out = out + np.where(i < steps, 1.0 / ((z + i) * (z + i)), 0.0)
    return _wrap(out, x)
