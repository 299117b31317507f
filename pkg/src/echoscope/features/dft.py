"""Exact-length discrete Fourier transform.

Mixed-radix Cooley-Tukey over the prime factors of N, batched along the last
axis; prime lengths above ``_DIRECT_MAX`` go through Bluestein's chirp-z with
a power-of-two convolution. No zero padding of the caller's signal, so bin k
of the result is exactly bin k of the length-N DFT.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_DIRECT_MAX = 64


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=128)
def _dft_matrix(n: int) -> np.ndarray:
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(-2j * np.pi * jk / n)


@lru_cache(maxsize=128)
def _twiddles(p: int, q: int) -> np.ndarray:
    n = p * q
    sk = np.outer(np.arange(p), np.arange(q)) % n
    return np.exp(-2j * np.pi * sk / n)


@lru_cache(maxsize=32)
def _bluestein_plan(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp angle small and exact for large n
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    return w, _fft_last(b[np.newaxis, :])[0], m


def _bluestein(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    w, fb, m = _bluestein_plan(n)
    padded = np.zeros(a.shape[:-1] + (m,), dtype=complex)
    padded[..., :n] = a * w
    conv = _ifft_last(_fft_last(padded) * fb)
    return conv[..., :n] * w


def _fft_last(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p == n:
        if n <= _DIRECT_MAX:
            return a @ _dft_matrix(n).T
        return _bluestein(a)
    q = n // p
    # row s of `sub` is the length-q transform of a[..., s::p]
    lead = a.shape[:-1]
    sub = _fft_last(np.swapaxes(a.reshape(lead + (q, p)), -1, -2))
    sub = sub * _twiddles(p, q)
    out = _dft_matrix(p) @ sub
    return out.reshape(lead + (n,))


def _ifft_last(a: np.ndarray) -> np.ndarray:
    return np.conj(_fft_last(np.conj(a))) / a.shape[-1]


def dft(signal) -> np.ndarray:
    """Forward DFT, X[k] = sum_t x[t] exp(-2 pi i k t / N)."""
    a = np.asarray(signal)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("dft expects a non-empty 1-D sequence")
    return _fft_last(a.astype(complex)[np.newaxis, :])[0]


def idft(spectrum) -> np.ndarray:
    """Inverse of :func:`dft` (1/N normalisation on the inverse)."""
    a = np.asarray(spectrum, dtype=complex)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("idft expects a non-empty 1-D sequence")
    return _ifft_last(a[np.newaxis, :])[0]
