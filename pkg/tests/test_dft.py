import numpy as np
import pytest

from echoscope.features import dft, idft
from oracles import direct_dft


def test_delta_is_flat():
    assert np.allclose(dft([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)


def test_constant_is_scaled_delta():
    assert np.allclose(dft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)


def test_random_16_matches_direct_sum():
    x = np.random.default_rng(3).normal(size=16)
    assert np.max(np.abs(dft(x) - direct_dft(x))) < 1e-9


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 12, 17, 31, 60, 61, 64, 97, 127])
def test_lengths_match_direct_sum(n):
    x = np.random.default_rng(n).normal(size=n)
    assert np.max(np.abs(dft(x) - direct_dft(x))) < 1e-9 * max(1.0, np.abs(x).sum())


@pytest.mark.parametrize("n", [7, 31, 127, 1023])
def test_idft_round_trip(n):
    x = np.random.default_rng(n).normal(size=n)
    assert np.allclose(idft(dft(x)).real, x, atol=1e-12)
    assert np.max(np.abs(idft(dft(x)).imag)) < 1e-12


def test_real_input_is_hermitian():
    x = np.random.default_rng(9).normal(size=31)
    big = dft(x)
    assert np.allclose(big[1:], np.conj(big[1:][::-1]), atol=1e-12)


def test_empty_input():
    with pytest.raises(ValueError):
        dft([])
