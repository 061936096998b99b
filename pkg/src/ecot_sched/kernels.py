"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Two inner loops dominate runtime when profiling long episodes: the
token-level edit distance behind the update-ratio metric, and the
iteration-by-iteration slot admission loop of the continuous batcher.
Both ship in two variants: an ``@njit`` version and a pure-numpy
fallback. Set ``ECOT_SCHED_NO_NUMBA=1`` to force the fallback path
(``benchmarks/bench_kernels.py`` compares the two).
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("ECOT_SCHED_NO_NUMBA", "") not in ("", "0")

if not NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:
        NUMBA_DISABLED = True

USE_NUMBA = not NUMBA_DISABLED


def _levenshtein_py(a: np.ndarray, b: np.ndarray) -> int:
    # Two-row DP; numba compiles this, the numpy variant below vectorizes it.
    n = a.shape[0]
    m = b.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            c = prev[j - 1] + cost
            d = prev[j] + 1
            if d < c:
                c = d
            e = cur[j - 1] + 1
            if e < c:
                c = e
            cur[j] = c
        prev, cur = cur, prev
    return int(prev[m])


def _levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Row-vectorized DP. The insertion recurrence cur[j] = min(cur[j],
    cur[j-1]+1) unrolls to a prefix minimum of (candidate[k] - k) + j.
    """
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    m = b.shape[0]
    if m == 0:
        return int(a.shape[0])
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, a.shape[0] + 1):
        cur[0] = i
        np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1, out=cur[1:])
        cur = np.minimum.accumulate(cur - idx) + idx
        prev, cur = cur, prev
    return int(prev[m])


if USE_NUMBA:
    _levenshtein_jit = njit(cache=True)(_levenshtein_py)


def levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    """Edit distance between two int64 token arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape[0] == b.shape[0] and (a.shape[0] == 0 or bool(np.array_equal(a, b))):
        return 0
    if a.shape[0] == 0:
        return int(b.shape[0])
    if b.shape[0] == 0:
        return int(a.shape[0])
    if USE_NUMBA:
        return int(_levenshtein_jit(a, b))
    return _levenshtein_numpy(a, b)


def _continuous_admission_py(
    lengths: np.ndarray,
    arrivals: np.ndarray,
    order: np.ndarray,
    slots: int,
) -> tuple[np.ndarray, np.ndarray]:
    # Iteration loop over the engine clock. A slot whose occupant emits its
    # last token at iteration k frees for admission at k+1. `order` ranks
    # requests by admission priority; arrivals gate when each may start.
    n = lengths.shape[0]
    starts = np.full(n, -1, dtype=np.int64)
    slot_of = np.full(n, -1, dtype=np.int64)
    remaining = lengths.copy()
    slot_busy = np.full(slots, -1, dtype=np.int64)  # request index or -1
    done = 0
    it = 0
    while done < n:
        for k in range(n):
            r = order[k]
            if starts[r] >= 0 or arrivals[r] > it:
                continue
            placed = False
            for s in range(slots):
                if slot_busy[s] < 0:
                    slot_busy[s] = r
                    slot_of[r] = s
                    starts[r] = it
                    placed = True
                    break
            if not placed:
                break
        for s in range(slots):
            r = slot_busy[s]
            if r >= 0:
                remaining[r] -= 1
                if remaining[r] == 0:
                    slot_busy[s] = -1
                    done += 1
        it += 1
    return starts, slot_of


def _continuous_admission_numpy(
    lengths: np.ndarray,
    arrivals: np.ndarray,
    order: np.ndarray,
    slots: int,
) -> tuple[np.ndarray, np.ndarray]:
    n = lengths.shape[0]
    starts = np.full(n, -1, dtype=np.int64)
    slot_of = np.full(n, -1, dtype=np.int64)
    # Per-slot first-free iteration; requests admitted in `order`, but a
    # request whose arrival is still in the future must not block one that
    # has already arrived, so the loop re-scans pending requests each round.
    free_at = np.zeros(slots, dtype=np.int64)
    pending = list(order)
    while pending:
        s = int(np.argmin(free_at))
        t_free = int(free_at[s])
        pick = None
        for r in pending:
            if arrivals[r] <= t_free:
                pick = r
                break
        if pick is None:
            # Nothing arrived yet: jump the slot clock to the next arrival.
            nxt = min(int(arrivals[r]) for r in pending)
            free_at[s] = nxt
            continue
        starts[pick] = max(t_free, int(arrivals[pick]))
        slot_of[pick] = s
        free_at[s] = starts[pick] + int(lengths[pick])
        pending.remove(pick)
    return starts, slot_of


if USE_NUMBA:
    _continuous_admission_jit = njit(cache=True)(_continuous_admission_py)


def continuous_admission(
    lengths: np.ndarray,
    arrivals: np.ndarray,
    order: np.ndarray,
    slots: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Start iteration and slot index for each request under continuous
    batching, given the admission priority ranking `order`.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    arrivals = np.asarray(arrivals, dtype=np.int64)
    order = np.asarray(order, dtype=np.int64)
    if lengths.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if USE_NUMBA:
        return _continuous_admission_jit(lengths, arrivals, order, slots)
    return _continuous_admission_numpy(lengths, arrivals, order, slots)
