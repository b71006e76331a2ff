import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from mnrank.errors import BoundError
from mnrank.primes import _segmented_sieve, _simple_sieve, positional_encoding, positional_encodings
from mnrank.primes import prime_pi, sieve_primes


def trial_division(n):
    return [k for k in range(2, n) if all(k % d for d in range(2, int(k**0.5) + 1))]


def test_small_table_matches_trial_division():
    assert_array_equal(sieve_primes(500).primes, trial_division(500))


@pytest.mark.parametrize("x, expected", [(10, 4), (100, 25), (1000, 168), (10**4, 1229), (10**5, 9592)])
def test_known_prime_counts(x, expected):
    t = sieve_primes(10**5 + 1)
    assert prime_pi(t, x) == expected


def test_limit_is_exclusive():
    t = sieve_primes(11)
    assert t.primes[-1] == 7
    with pytest.raises(BoundError):
        t.is_prime(11)


@given(st.integers(min_value=2, max_value=20000), st.integers(min_value=64, max_value=5000))
@settings(max_examples=40, deadline=None)
def test_segmented_matches_simple(limit, segment):
    assert_array_equal(_segmented_sieve(limit, segment), _simple_sieve(limit))


def test_large_limit_takes_segmented_path():
    t = sieve_primes(2 * 10**7)
    assert len(t) == 1270607


@pytest.mark.parametrize("limit", [0, 1, 2**31 + 1])
def test_bad_limits(limit):
    with pytest.raises(BoundError):
        sieve_primes(limit)


def test_pi_and_index_agree():
    t = sieve_primes(3000)
    for k, p in enumerate(t.primes):
        assert t.index(p) == k
        assert prime_pi(t, p) == k + 1
    assert prime_pi(t, 1) == 0


def test_positional_encoding_values():
    t = sieve_primes(1000)
    enc = positional_encodings(t, 100)
    assert len(enc) == 25
    assert enc[-1] == pytest.approx(1.0)
    assert enc[0] == pytest.approx(-1 + 2 / 25)
    assert positional_encoding(t, 97, 100) == pytest.approx(1.0)
    assert np.all(np.diff(enc) > 0)


def test_documented_examples():
    assert_array_equal(sieve_primes(10).primes, [2, 3, 5, 7])
    assert_array_equal(sieve_primes(3).primes, [2])
    t = sieve_primes(100000)
    assert len(t) == 9592 and prime_pi(t, 99991) == 9592
    assert positional_encoding(t, 2, 99999) == pytest.approx(-1 + 2 / 9592)
    assert positional_encoding(t, 3, 10) == 0.0
    with pytest.raises(BoundError):
        prime_pi(t, 100000)


@given(st.integers(0, 4999))
@settings(max_examples=60, deadline=None)
def test_pi_matches_trial_division(x):
    t = sieve_primes(5000)
    assert prime_pi(t, x) == sum(1 for k in range(2, x + 1) if all(k % d for d in range(2, int(k**0.5) + 1)))
