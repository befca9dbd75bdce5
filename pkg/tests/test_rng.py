import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linac import rng
from linac.rng import (REFERENCE_KEY, RngStream, derive_stream, gaussians, next_gaussian,
                       next_uint64, next_uniform, permutation, shuffle_epoch, uint64s, uniforms)

keys = st.integers(min_value=-(1 << 63), max_value=(1 << 63) - 1)

# Frozen once from this implementation; guards against accidental changes to
# the mixer, label folding or key handling.
REFERENCE_KEY_INIT_DIGEST = "563a6fe169a3bae22f0e861dff97f9763defe8d87f202b997087e8112db02a6e"


def test_splitmix_reference_vector():
    # First outputs of SplitMix64 seeded with 0 (published reference values).
    s = RngStream(0)
    out = []
    for _ in range(3):
        z, s = next_uint64(s)
        out.append(z)
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_derive_stream_is_deterministic():
    a, _ = uint64s(derive_stream(1234, rng.INIT), 1000)
    b, _ = uint64s(derive_stream(1234, rng.INIT), 1000)
    assert np.array_equal(a, b)


def test_labels_give_unrelated_streams():
    a, _ = uint64s(derive_stream(1234, rng.INIT), 1000)
    b, _ = uint64s(derive_stream(1234, shuffle_epoch(0)), 1000)
    assert np.count_nonzero(a != b) >= 990


@settings(max_examples=30, deadline=None)
@given(keys)
def test_distinct_labels_rarely_collide(key):
    a, _ = uint64s(derive_stream(key, rng.INIT), 1000)
    b, _ = uint64s(derive_stream(key, rng.SHUFFLE), 1000)
    assert np.count_nonzero(a == b) < 10


def test_reference_key_digest_is_frozen():
    assert rng.stream_digest(REFERENCE_KEY, rng.INIT) == REFERENCE_KEY_INIT_DIGEST


def test_bulk_and_scalar_draws_agree():
    s = derive_stream(7, "x")
    bulk, end = uint64s(s, 50)
    t = s
    for expected in bulk.tolist():
        z, t = next_uint64(t)
        assert z == expected
    assert t == end


def test_uniform_range_and_mean():
    u, _ = uniforms(derive_stream(3, "u"), 100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert 0.49 <= u.mean() <= 0.51


def test_next_uniform_matches_bulk():
    s = derive_stream(5, "u")
    value, s2 = next_uniform(s)
    bulk, s3 = uniforms(s, 1)
    assert value == bulk[0] and s2 == s3
    assert next_uniform(s) == next_uniform(s)


def test_gaussian_moments():
    z, _ = gaussians(derive_stream(11, "g"), 100_000)
    assert -0.02 <= z.mean() <= 0.02
    assert 0.97 <= z.var() <= 1.03


def test_next_gaussian_is_pure():
    s = derive_stream(11, "g")
    assert next_gaussian(s) == next_gaussian(s)
    value, _ = next_gaussian(s)
    assert value == gaussians(s, 1)[0][0]


def test_permutation_small_cases():
    s = derive_stream(0, "p")
    assert permutation(s, 0)[0].tolist() == []
    assert permutation(s, 1)[0].tolist() == [0]


def test_permutation_is_bijective_and_repeatable():
    s = derive_stream(99, "p")
    p1, _ = permutation(s, 1024)
    p2, _ = permutation(s, 1024)
    assert np.array_equal(np.sort(p1), np.arange(1024))
    assert np.array_equal(p1, p2)


@settings(max_examples=50, deadline=None)
@given(keys, st.integers(min_value=0, max_value=300))
def test_permutation_always_bijection(key, n):
    p, _ = permutation(derive_stream(key, "p"), n)
    assert sorted(p.tolist()) == list(range(n))


def test_permutation_positions_roughly_uniform():
    # every element should land in position 0 about 1/n of the time
    n, trials = 8, 8000
    counts = np.zeros(n)
    s = derive_stream(1, "perm-uniformity")
    for _ in range(trials):
        p, s = permutation(s, n)
        counts[p[0]] += 1
    assert np.all(np.abs(counts / trials - 1 / n) < 0.02)


def test_streams_are_immutable_values():
    s = derive_stream(1, "a")
    _, s2 = next_uint64(s)
    assert s != s2
    with pytest.raises(Exception):
        s.state = 0


def test_key_range_checked():
    with pytest.raises(ValueError):
        derive_stream(1 << 64, "x")
    assert derive_stream(-1, "x") == derive_stream((1 << 64) - 1, "x")


def test_random_keys_are_signed_64bit():
    ks, _ = rng.random_keys(derive_stream(0, "keys"), 100)
    assert all(-(1 << 63) <= k < (1 << 63) for k in ks)
    assert len(set(ks)) == 100
