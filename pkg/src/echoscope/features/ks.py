"""Two-sample Kolmogorov-Smirnov test.

Equal sample sizes use the exact alternating binomial series for any n.
Unequal sizes get the exact null distribution by lattice-path counting up to
EXACT_CELLS cells and the limiting Kolmogorov law beyond that.
"""

from __future__ import annotations

import math

import numpy as np

_LOG2 = math.log(2.0)

# exact p-values while na * nb stays at or below this many lattice cells
EXACT_CELLS = 1_000_000
# below this exact p the log is taken from the asymptotic tail instead
_EXACT_FLOOR = 1e-12


def _scaled_statistic(a: np.ndarray, b: np.ndarray) -> int:
    """D * na * nb as an exact integer."""
    a = np.sort(a)
    b = np.sort(b)
    pooled = np.concatenate([a, b])
    ca = np.searchsorted(a, pooled, side="right").astype(np.int64)
    cb = np.searchsorted(b, pooled, side="right").astype(np.int64)
    return int(np.max(np.abs(ca * b.size - cb * a.size)))


def ks_statistic(a, b) -> float:
    """D = sup_x |F_a(x) - F_b(x)| over the pooled sample."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return _scaled_statistic(a, b) / (a.size * b.size)


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _equal_logsf(k: int, n: int) -> float:
    """log P(D >= k / n) for two samples of size n:
    2 sum_j (-1)^(j+1) C(2n, n - jk) / C(2n, n), factored around its first term."""
    base = _log_binom(2 * n, n)
    first = _log_binom(2 * n, n - k) - base
    rest = 0.0
    sign = -1.0
    for j in range(2, n // k + 1):
        t = math.exp(_log_binom(2 * n, n - j * k) - base - first)
        rest += sign * t
        sign = -sign
        if t < 1e-17:
            break
    return min(0.0, _LOG2 + first + math.log1p(rest))


def _exact_sf(h: int, na: int, nb: int) -> float:
    """P(D * na * nb >= h) under the null, by counting the monotone lattice
    paths from (0, 0) to (na, nb) that keep |i * nb - j * na| < h."""
    # row i admits j in [lo_i, hi_i]: |i nb - j na| < h
    row = np.zeros(nb + 1)
    hi0 = min(nb, (h - 1) // na)
    row[:hi0 + 1] = 1.0
    log_scale = 0.0
    for i in range(1, na + 1):
        c = i * nb
        lo = max(0, (c - h) // na + 1)
        hi = min(nb, (c + h - 1) // na)
        if lo > hi:
            return 1.0
        # paths into (i, j) come from (i-1, j) or (i, j-1): a cumsum over the band
        seg = np.cumsum(row[lo:hi + 1])
        row[:lo] = 0.0
        row[lo:hi + 1] = seg
        top = seg[-1]
        if top == 0.0:
            return 1.0
        row[lo:hi + 1] /= top
        log_scale += math.log(top)
    if row[nb] == 0.0:
        return 1.0
    log_total = _log_binom(na + nb, na)
    p_inside = math.exp(math.log(row[nb]) + log_scale - log_total)
    return min(1.0, max(0.0, 1.0 - p_inside))


def kolmogorov_logsf(lam: float) -> float:
    """log P(K > lam) for the limiting Kolmogorov distribution K."""
    if lam <= 0.0:
        return 0.0
    if lam < 1.0:
        # theta-function form converges fast for small lam
        s = 0.0
        c = math.pi ** 2 / (8.0 * lam * lam)
        for j in range(1, 50):
            t = math.exp(-((2 * j - 1) ** 2) * c)
            s += t
            if t < 1e-17 * s:
                break
        cdf = math.sqrt(2.0 * math.pi) / lam * s
        return math.log1p(-cdf) if cdf < 1.0 else -math.inf
    # 2 sum (-1)^(j-1) exp(-2 j^2 lam^2), factored as 2 e^{-2 lam^2} (1 + r)
    x = 2.0 * lam * lam
    r = 0.0
    sign = -1.0
    for j in range(2, 100):
        t = math.exp(-(j * j - 1) * x)
        r += sign * t
        sign = -sign
        if t < 1e-17:
            break
    return _LOG2 - x + math.log1p(r)


def ks_two_sample_logp(a, b) -> float:
    """Natural log of :func:`ks_two_sample`, finite even where p underflows."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("KS test needs at least two observations per sample")
    h = _scaled_statistic(a, b)
    if h == 0:
        return 0.0
    if na == nb:
        return _equal_logsf(h // na, na)
    if na * nb <= EXACT_CELLS:
        p = _exact_sf(h, na, nb) if na <= nb else _exact_sf(h, nb, na)
        if p > _EXACT_FLOOR:
            return math.log(p)
    d = h / (na * nb)
    ne = na * nb / (na + nb)
    return kolmogorov_logsf(math.sqrt(ne) * d)


def ks_two_sample(a, b) -> float:
    """p-value that ``a`` and ``b`` share one continuous distribution."""
    return math.exp(ks_two_sample_logp(a, b))
