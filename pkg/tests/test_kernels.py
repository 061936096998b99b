"""Kernel correctness: jitted and numpy paths against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecot_sched import kernels
from ecot_sched.kernels import continuous_admission, levenshtein


def brute_levenshtein(a, b):
    """Textbook recursive definition, memoized; the independent oracle."""
    from functools import lru_cache

    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            d(i - 1, j) + 1,
            d(i, j - 1) + 1,
            d(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return d(len(a), len(b))


short_seq = st.lists(st.integers(min_value=0, max_value=9), max_size=12)


@given(short_seq, short_seq)
@settings(max_examples=200, deadline=None)
def test_levenshtein_matches_brute_force(a, b):
    assert levenshtein(np.array(a), np.array(b)) == brute_levenshtein(a, b)


@given(short_seq, short_seq)
@settings(max_examples=100, deadline=None)
def test_numpy_and_python_paths_agree(a, b):
    aa = np.asarray(a, dtype=np.int64)
    bb = np.asarray(b, dtype=np.int64)
    expected = brute_levenshtein(a, b)
    assert kernels._levenshtein_numpy(aa, bb) == expected
    assert kernels._levenshtein_py(aa, bb) == expected
    if kernels.USE_NUMBA:
        assert int(kernels._levenshtein_jit(aa, bb)) == expected


def test_levenshtein_trivial_paths():
    assert levenshtein(np.array([], dtype=np.int64), np.array([], dtype=np.int64)) == 0
    assert levenshtein(np.array([1, 2, 3]), np.array([1, 2, 3])) == 0
    assert levenshtein(np.array([1, 2, 3]), np.array([], dtype=np.int64)) == 3


def oracle_admission(lengths, arrivals, order, slots):
    """Event-driven oracle: at each slot-free instant, admit the first
    pending request in ranked order that has arrived."""
    free = [0] * slots
    starts = [-1] * len(lengths)
    pending = list(order)
    while pending:
        s = min(range(slots), key=lambda i: free[i])
        t = free[s]
        arrived = [r for r in pending if arrivals[r] <= t]
        if not arrived:
            free[s] = min(arrivals[r] for r in pending)
            continue
        r = arrived[0]
        starts[r] = max(t, arrivals[r])
        free[s] = starts[r] + lengths[r]
        pending.remove(r)
    return starts


@given(
    st.lists(st.integers(min_value=1, max_value=15), min_size=1, max_size=12),
    st.integers(min_value=1, max_value=5),
)
@settings(max_examples=150, deadline=None)
def test_admission_matches_oracle(lengths, slots):
    n = len(lengths)
    lengths_a = np.asarray(lengths, dtype=np.int64)
    arrivals = np.zeros(n, dtype=np.int64)
    order = np.arange(n, dtype=np.int64)
    starts, slot_of = continuous_admission(lengths_a, arrivals, order, slots)
    expected = oracle_admission(lengths, [0] * n, list(range(n)), slots)
    assert starts.tolist() == expected
    assert all(0 <= s < slots for s in slot_of.tolist())


def test_admission_paths_agree_with_arrivals():
    lengths = np.array([4, 2, 6, 3, 1], dtype=np.int64)
    arrivals = np.array([0, 3, 0, 5, 1], dtype=np.int64)
    order = np.array([2, 0, 4, 1, 3], dtype=np.int64)
    py = kernels._continuous_admission_py(lengths, arrivals, order, 2)
    npy = kernels._continuous_admission_numpy(lengths, arrivals, order, 2)
    assert py[0].tolist() == npy[0].tolist()
    if kernels.USE_NUMBA:
        jit = kernels._continuous_admission_jit(lengths, arrivals, order, 2)
        assert jit[0].tolist() == py[0].tolist()


def test_numba_env_flag(monkeypatch):
    # The env flag selects the fallback at import time.
    import importlib
    import os

    monkeypatch.setitem(os.environ, "ECOT_SCHED_NO_NUMBA", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.USE_NUMBA is False
        assert mod.levenshtein(np.array([1, 2]), np.array([2, 2])) == 1
    finally:
        monkeypatch.delitem(os.environ, "ECOT_SCHED_NO_NUMBA")
        importlib.reload(kernels)
