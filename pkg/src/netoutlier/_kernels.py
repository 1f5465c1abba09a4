"""Hot numeric kernels, in two interchangeable backends.

Numba-compiled kernels are used when available; a pure-numpy fallback covers
environments without numba. Selection happens once at import time from the
``NETOUTLIER_BACKEND`` environment variable:

* unset          -> numba when importable, else numpy
* ``numba``      -> numba, raising if it cannot be imported
* ``numpy``      -> force the fallback

Both backends are exact for the order-statistic kernel and agree to floating
roundoff for the linear-algebra ones. ``IMPLEMENTATIONS`` always carries the
numpy fallback and adds the numba kernels when that backend is the one
selected, so tests and benchmarks can compare whatever is registered.
"""

from __future__ import annotations

import os

import numpy as np

ENV_VAR = "NETOUTLIER_BACKEND"

# Below this row count the all-pairs buffer is small enough that brute force
# beats the bisection, in either backend.
_BRUTE_FORCE_MAX_M = 1024


def _resolve_backend() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(
            f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _kth_diff_numpy(s: np.ndarray, k: int) -> float:
    """Exact k-th smallest difference s[b] - s[a] (a < b) of a sorted vector.

    Small inputs enumerate all pairs. Large inputs bisect on the value domain:
    count(t) = #{(a, b) : s[b] - s[a] <= t} is computed with searchsorted, the
    bracket [lo, hi] keeps count(lo) < k <= count(hi) and shrinks until lo and
    hi are adjacent floats, at which point hi is the k-th difference exactly
    (every difference in (lo, hi] can only be the single representable value
    hi).
    """
    m = s.shape[0]
    if m <= _BRUTE_FORCE_MAX_M:
        iu = np.triu_indices(m, 1)
        diffs = (s[None, :] - s[:, None])[iu]
        return float(np.partition(diffs, k - 1)[k - 1])

    base = np.arange(m)

    def count_leq(t: float) -> int:
        # The count must be taken over the rounded differences fl(s[b] - s[a])
        # that the brute-force path enumerates, not over s[b] <= fl(s[a] + t),
        # which can disagree by one ulp. The rounded difference is monotone in
        # b, so for every a the boundary is found by binary search on the
        # index domain, evaluating the same subtraction brute force would.
        lo = base.copy()           # predicate holds at b = lo (b = a: 0 <= t)
        hi = np.full(m, m)         # predicate fails at b = hi (b = m: sentinel)
        while True:
            gap = hi - lo
            active = gap > 1
            if not active.any():
                break
            mid = lo + gap // 2    # equals lo (in range) wherever inactive
            cond = (s[mid] - s) <= t
            lo = np.where(active & cond, mid, lo)
            hi = np.where(active & ~cond, mid, hi)
        return int(np.sum(lo - base))

    hi = float(s[-1] - s[0])
    if hi == 0.0 or count_leq(0.0) >= k:
        return 0.0
    lo = 0.0
    while True:
        mid = lo + 0.5 * (hi - lo)
        if mid <= lo or mid >= hi:
            break
        if count_leq(mid) >= k:
            hi = mid
        else:
            lo = mid
    return hi


def _row_quadforms_numpy(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-row quadratic forms r_i' A r_i for a stack of row vectors."""
    return np.einsum("ij,jk,ik->i", r, a, r)


def _subset_crossprod_numpy(a: np.ndarray, b: np.ndarray,
                            idx: np.ndarray) -> np.ndarray:
    """A[idx]' B[idx] without materializing more than the selected rows."""
    return a[idx].T @ b[idx]


_NUMPY_IMPL = {
    "kth_smallest_pairwise_diff": _kth_diff_numpy,
    "row_quadforms": _row_quadforms_numpy,
    "subset_crossprod": _subset_crossprod_numpy,
}

IMPLEMENTATIONS: dict[str, dict] = {"numpy": _NUMPY_IMPL}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    _jit = njit(cache=True, nogil=True)

    @_jit
    def _count_leq_sorted(s, t):
        # two-pointer sweep; the boundary index is nondecreasing in the row
        m = s.shape[0]
        total = 0
        j = 0
        for i in range(m):
            if j <= i:
                j = i + 1
            while j < m and s[j] - s[i] <= t:
                j += 1
            total += j - i - 1
        return total

    @_jit
    def _kth_diff_numba_impl(s, k):
        m = s.shape[0]
        if m <= _BRUTE_FORCE_MAX_M:
            n_pairs = m * (m - 1) // 2
            diffs = np.empty(n_pairs, dtype=np.float64)
            pos = 0
            for a in range(m):
                for b in range(a + 1, m):
                    diffs[pos] = s[b] - s[a]
                    pos += 1
            return np.partition(diffs, k - 1)[k - 1]
        hi = s[m - 1] - s[0]
        if hi == 0.0 or _count_leq_sorted(s, 0.0) >= k:
            return 0.0
        lo = 0.0
        while True:
            mid = lo + 0.5 * (hi - lo)
            if mid <= lo or mid >= hi:
                break
            if _count_leq_sorted(s, mid) >= k:
                hi = mid
            else:
                lo = mid
        return hi

    def _kth_diff_numba(s: np.ndarray, k: int) -> float:
        return float(_kth_diff_numba_impl(s, k))

    @_jit
    def _row_quadforms_numba_impl(r, a):
        m, p = r.shape
        out = np.empty(m, dtype=np.float64)
        for i in range(m):
            acc = 0.0
            for j in range(p):
                inner = 0.0
                for l in range(p):
                    inner += a[j, l] * r[i, l]
                acc += r[i, j] * inner
            out[i] = acc
        return out

    def _row_quadforms_numba(r: np.ndarray, a: np.ndarray) -> np.ndarray:
        return _row_quadforms_numba_impl(
            np.ascontiguousarray(r), np.ascontiguousarray(a)
        )

    @_jit
    def _subset_crossprod_numba_impl(a, b, idx):
        qa = a.shape[1]
        qb = b.shape[1]
        out = np.zeros((qa, qb), dtype=np.float64)
        for t in range(idx.shape[0]):
            row = idx[t]
            for i in range(qa):
                ai = a[row, i]
                for j in range(qb):
                    out[i, j] += ai * b[row, j]
        return out

    def _subset_crossprod_numba(a: np.ndarray, b: np.ndarray,
                                idx: np.ndarray) -> np.ndarray:
        if a.shape[1] == 0 or b.shape[1] == 0:
            return np.zeros((a.shape[1], b.shape[1]))
        return _subset_crossprod_numba_impl(
            np.ascontiguousarray(a),
            np.ascontiguousarray(b),
            np.asarray(idx, dtype=np.int64),
        )

    IMPLEMENTATIONS["numba"] = {
        "kth_smallest_pairwise_diff": _kth_diff_numba,
        "row_quadforms": _row_quadforms_numba,
        "subset_crossprod": _subset_crossprod_numba,
    }


_ACTIVE = IMPLEMENTATIONS[BACKEND]

kth_smallest_pairwise_diff = _ACTIVE["kth_smallest_pairwise_diff"]
row_quadforms = _ACTIVE["row_quadforms"]
subset_crossprod = _ACTIVE["subset_crossprod"]


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
