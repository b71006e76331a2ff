import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from mnrank import _pointcount as K
from mnrank.curves import CurveModel, ap_bad_prime, ap_bsgs, ap_good_prime, ap_matrix, ap_vector
from mnrank.curves import count_points_naive, discriminant
from mnrank.errors import ArgumentError, MinimalityError, ValidationError
from mnrank.primes import sieve_primes

E11 = CurveModel(0, -1, 1, -10, -20, conductor=11, label="11a1")
E37 = CurveModel(0, 0, 1, -1, 0, conductor=37, rank=1, label="37a1")


def oracle_ap(curve, p):
    return p + 1 - count_points_naive(curve, p) if not curve.is_bad(p) else p - count_points_naive(curve, p)


def test_known_discriminants():
    assert discriminant(E11) == -161051
    assert discriminant(E37) == 37


def test_11a1_first_traces():
    v = ap_vector(E11, sieve_primes(14)).values
    assert_array_equal(v, [-2, -1, 1, -2, 1, 4])


def test_37a1_traces():
    # a_p of 37a1 for p < 30
    v = ap_vector(E37, sieve_primes(30)).values
    assert_array_equal(v, [-2, -3, -2, -1, -5, -2, 0, 0, 2, 6])


def test_bad_prime_types():
    # 11a1 is split multiplicative at 11, 37a1 nonsplit at 37
    assert ap_bad_prime(E11, 11) == 1
    assert ap_bad_prime(E37, 37) == -1
    # y^2 = x^3 + 1 (36a1) is additive at 2 and 3
    E36 = CurveModel(0, 0, 0, 0, 1, conductor=36)
    assert ap_bad_prime(E36, 2) == 0
    assert ap_bad_prime(E36, 3) == 0


def test_sample_against_oracle(sample_catalog):
    table = sieve_primes(600)
    curves = list(sample_catalog)[:20]
    M = ap_matrix(curves, table)
    for c, row in zip(curves, M):
        assert_array_equal(row, [oracle_ap(c, int(p)) for p in table.primes])


def test_bsgs_matches_character_sum(sample_catalog):
    primes = sieve_primes(4096).primes
    primes = primes[primes > 500][::25]
    for c in list(sample_catalog)[:10]:
        for p in primes:
            p = int(p)
            if c.discriminant % p == 0:
                continue
            assert ap_bsgs(c, p) == ap_good_prime(c, p)


def test_kernel_paths_agree_on_large_primes(sample_catalog):
    table = sieve_primes(9000)
    curves = list(sample_catalog)[:8]
    fast = ap_matrix(curves, table)
    slow = ap_matrix(curves, table, naive_threshold=9000)
    assert_array_equal(fast, slow)


@given(st.integers(-6, 6), st.integers(-6, 6), st.integers(0, 200))
@settings(max_examples=60, deadline=None)
def test_translation_invariance(a4, a6, shift):
    # a_p is an isomorphism invariant: x -> x + r changes the model, not the trace
    if 4 * a4**3 + 27 * a6 * a6 == 0:
        return
    p = 1009
    E = CurveModel(0, 0, 0, a4, a6, conductor=_any_conductor(a4, a6))
    r = shift
    F = CurveModel(0, 3 * r, 0, 3 * r * r + a4, r**3 + a4 * r + a6, conductor=E.conductor)
    if E.discriminant % p == 0:
        return
    assert ap_good_prime(E, p) == ap_good_prime(F, p)


def _any_conductor(a4, a6):
    # radical of the discriminant: good enough to pass validation for good-prime checks
    d = abs(-16 * (4 * a4**3 + 27 * a6 * a6))
    n, rad, q = d, 1, 2
    while q * q <= n:
        if n % q == 0:
            rad *= q
            while n % q == 0:
                n //= q
        q += 1
    return rad * (n if n > 1 else 1)


@given(st.integers(5, 400).filter(lambda p: all(p % d for d in range(2, int(p**0.5) + 1))),
       st.integers(0, 10**6), st.integers(0, 10**6))
@settings(max_examples=80, deadline=None)
def test_charsum_hasse(p, A, B):
    A %= p
    B %= p
    if (4 * A**3 + 27 * B * B) % p == 0:
        return
    t = int(K.charsum_trace(p, A, B, K.quadratic_character_table(p)))
    assert t * t <= 4 * p


def test_validation_errors():
    with pytest.raises(ValidationError):
        CurveModel(0, 0, 0, 0, 0, conductor=1)
    with pytest.raises(ValidationError):
        CurveModel(0, 0, 1, -1, 0, conductor=38)
    with pytest.raises(ValidationError):
        CurveModel(0, 0, 1, -1, 0, conductor=37, rank=-1)
    with pytest.raises(ValidationError):
        CurveModel(0.5, 0, 1, -1, 0, conductor=37)


def test_non_minimal_model_is_reported():
    # 11a1 scaled by u = 2 (a_i -> 2^i a_i) is singular mod 2, a good prime
    E = CurveModel(0, -4, 8, -160, -1280, conductor=11)
    with pytest.raises(MinimalityError) as ei:
        ap_matrix([E], sieve_primes(20))
    assert ei.value.prime == 2
    with pytest.raises(MinimalityError):
        ap_good_prime(E, 2)


def test_argument_errors():
    with pytest.raises(ArgumentError):
        ap_good_prime(E11, 11)
    with pytest.raises(ArgumentError):
        ap_bad_prime(E11, 5)


def test_documented_examples():
    assert discriminant((0, 0, 0, 0, 1)) == -432
    assert discriminant((0, 0, 0, -1, 0)) == 64
    assert count_points_naive(CurveModel(0, 0, 0, 1, 0, conductor=2), 3) == 4
    E36 = CurveModel(0, 0, 0, 0, 1, conductor=36)
    assert count_points_naive(E36, 5) == 6
    assert ap_good_prime(E36, 5) == 0
    assert ap_good_prime(E11, 2) == -2 and ap_good_prime(E11, 7) == -2
    assert ap_bad_prime(CurveModel(0, 0, 1, 0, -7, conductor=27), 3) == 0
    assert_array_equal(ap_vector(E11, sieve_primes(10)).values, [-2, -1, 1, -2])
    assert_array_equal(ap_vector(E37, sieve_primes(3)).values, [-2])


def test_overlap_range_and_purity(sample_catalog):
    # every prime in [2048, 8192] by BSGS (threshold 2048) and by character sums (threshold 8192)
    t = sieve_primes(8193)
    curves = list(sample_catalog)[20:24]
    a = ap_matrix(curves, t, naive_threshold=2048)
    b = ap_matrix(curves, t, naive_threshold=8193)
    assert_array_equal(a, b)
    assert ap_matrix(curves, t).tobytes() == ap_matrix(curves, t).tobytes()


def test_parallel_matches_serial(sample_catalog):
    t = sieve_primes(2000)
    curves = list(sample_catalog)[:40]
    assert_array_equal(ap_matrix(curves, t, jobs=2, chunk=8), ap_matrix(curves, t))
