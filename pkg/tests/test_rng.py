import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stablepot import rng
from stablepot.errors import ValidationError
from stablepot.rng import RngStream, RunningMoments, as_stream, chunk_sizes, map_chunks, merge_all


def test_seed_validation():
    with pytest.raises(ValidationError):
        RngStream(-1)
    with pytest.raises(ValidationError):
        RngStream(2**64)
    with pytest.raises(ValidationError):
        RngStream(1.5)
    RngStream(2**64 - 1)


def test_same_address_same_draws():
    a = RngStream(7, (1, 2)).generator(3).random(5)
    b = RngStream(7, (1, 2)).generator(3).random(5)
    assert np.array_equal(a, b)


def test_children_and_chunks_differ():
    s = RngStream(7)
    draws = [s.child(1).generator(0).random(), s.child(2).generator(0).random(),
             s.generator(0).random(), s.generator(1).random()]
    assert len(set(draws)) == 4


def test_as_stream():
    assert as_stream(5) == RngStream(5, (0,))
    s = RngStream(3, (4,))
    assert as_stream(s) is s
    with pytest.raises(ValidationError):
        as_stream("seed")


@given(st.integers(0, 50_000), st.integers(1, 10_000))
def test_chunk_sizes_cover(n, size):
    sizes = chunk_sizes(n, size)
    assert sum(sizes) == n and all(0 < m <= size for m in sizes)


@pytest.mark.parametrize("threads", [1, 2, 4, 8])
def test_map_chunks_independent_of_threads(threads):
    fn = lambda gen, count, k: gen.standard_normal(count).sum()
    ref = map_chunks(fn, RngStream(11), 50_000, threads=1, chunk_size=4096)
    out = map_chunks(fn, RngStream(11), 50_000, threads=threads, chunk_size=4096)
    assert out == ref


def test_first_chunk_extends_stream():
    fn = lambda gen, count, k: (k, gen.random())
    full = map_chunks(fn, RngStream(1), 40, chunk_size=10)
    tail = map_chunks(fn, RngStream(1), 20, chunk_size=10, first_chunk=2)
    assert full[2:] == tail


def test_set_threads():
    old = rng.get_threads()
    try:
        rng.set_threads(3)
        assert rng.get_threads() == 3
        with pytest.raises(ValidationError):
            rng.set_threads(0)
    finally:
        rng.set_threads(old)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(1, 59))
def test_running_moments_merge(values, cut):
    v = np.array(values)
    cut = min(cut, len(v) - 1)
    m = RunningMoments.of(v[:cut]).merge(RunningMoments.of(v[cut:]))
    d = v - v.mean()
    scale = 1 + np.max(np.abs(v))
    assert m.count == len(v)
    assert m.mean == pytest.approx(v.mean(), abs=1e-9 * scale)
    assert m.m2 == pytest.approx(d @ d, rel=1e-8, abs=1e-6 * scale**2)
    assert m.m3 == pytest.approx(np.sum(d**3), rel=1e-6, abs=1e-6 * scale**3)
    assert m.m4 == pytest.approx(np.sum(d**4), rel=1e-6, abs=1e-6 * scale**4)


def test_merge_all_and_std_error():
    g = np.random.default_rng(0)
    parts = [g.normal(size=100) for _ in range(5)]
    m = merge_all(RunningMoments.of(p) for p in parts)
    v = np.concatenate(parts)
    assert m.std_error == pytest.approx(v.std(ddof=1) / np.sqrt(v.size))
    assert RunningMoments().std_error == np.inf
