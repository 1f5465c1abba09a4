"""Robust scale and correlation primitives.

These are the building blocks behind the deterministic starting estimates of
the trimmed edgewise estimator: the Qn pairwise-difference scale, chi-squared
quantiles for cutoffs, four robust seed correlation flavours, and the SVD
scale adjustment that turns a seed correlation into a usable covariance
skeleton.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from . import _kernels
from .exceptions import DegenerateColumnError, DimensionMismatchError

__all__ = [
    "QN_CONSISTENCY",
    "SEED_METHODS",
    "qn_scale",
    "qn_scales",
    "chi2_quantile",
    "seed_correlation",
    "svd_adjust",
]

# Gaussian consistency factor for the Qn scale; no small-sample correction.
QN_CONSISTENCY = 2.2219

SEED_METHODS = ("tanh", "rank", "normal-scores", "spatial-sign")


def qn_scale(u) -> float:
    """Qn scale: a consistency constant times an order statistic of the
    pairwise absolute differences.

    For m observations, with h = floor(m/2) + 1 and k = C(h, 2), the
    estimate is 2.2219 times the k-th smallest |u_a - u_b| over pairs
    a < b. The k-th order statistic is computed exactly for any m (no
    subsampling); large m avoids the O(m^2) pair buffer entirely.

    Parameters
    ----------
    u : (m,) array_like
        Univariate sample, m >= 2, all entries finite.

    Returns
    -------
    float
        Nonnegative scale; exactly 0.0 for a constant sample.
    """
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 1:
        raise ValueError("u must be 1-d")
    m = arr.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 observations, got {m}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("u contains non-finite values")
    h = m // 2 + 1
    k = h * (h - 1) // 2
    s = np.sort(arr)
    if s[-1] == s[0]:
        return 0.0
    return QN_CONSISTENCY * float(_kernels.kth_smallest_pairwise_diff(s, k))


def qn_scales(mat) -> np.ndarray:
    """Columnwise Qn scales of a 2-d array."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError("mat must be 2-d")
    return np.array([qn_scale(mat[:, j]) for j in range(mat.shape[1])])


def chi2_quantile(dof: int, prob: float) -> float:
    """Quantile of the chi-squared distribution with ``dof`` degrees of
    freedom at probability ``prob`` in (0, 1)."""
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must be in (0, 1), got {prob}")
    return float(stats.chi2.ppf(prob, dof))


def _pearson_cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Correlation matrix between the columns of a and the columns of b."""
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na = np.linalg.norm(ac, axis=0)
    nb = np.linalg.norm(bc, axis=0)
    # A constant column does not center to exactly zero in floating point,
    # so degeneracy is judged relative to the uncentered column scale.
    for raw, norms, src in ((a, na, "first"), (b, nb, "second")):
        floor = 1e-12 * np.maximum(1.0, np.linalg.norm(raw, axis=0))
        bad = np.flatnonzero(norms <= floor)
        if bad.size:
            raise DegenerateColumnError(
                f"zero variance after transformation in column {bad[0]} "
                f"of the {src} matrix"
            )
    return (ac / na).T @ (bc / nb)


def _average_ranks(col: np.ndarray) -> np.ndarray:
    return stats.rankdata(col, method="average")


def seed_correlation(r, t, method: str) -> np.ndarray:
    """Robust seed correlation between two column-scaled data matrices.

    Both inputs must already be divided columnwise by their Qn scales; this
    function only applies the per-method transformation and correlates.

    Methods
    -------
    ``tanh``
        Pearson correlation of tanh-transformed entries.
    ``rank``
        Pearson correlation of columnwise ranks (ties get average ranks).
    ``normal-scores``
        Pearson correlation after mapping ranks through the standard normal
        CDF evaluated at (rank - 1/3) / (m + 1/3), with m the row count.
    ``spatial-sign``
        Rows normalized to unit Euclidean norm, then S = R'T / m without
        centering.

    Returns
    -------
    (a, b) ndarray
        Cross-correlation block between the columns of ``r`` and ``t``.
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if r.ndim != 2 or t.ndim != 2:
        raise ValueError("r and t must be 2-d")
    if r.shape[0] != t.shape[0]:
        raise DimensionMismatchError(
            f"row counts differ: {r.shape[0]} vs {t.shape[0]}"
        )
    m = r.shape[0]
    if method == "tanh":
        return _pearson_cross(np.tanh(r), np.tanh(t))
    if method == "rank":
        rr = np.column_stack([_average_ranks(r[:, j]) for j in range(r.shape[1])])
        tt = np.column_stack([_average_ranks(t[:, j]) for j in range(t.shape[1])])
        return _pearson_cross(rr, tt)
    if method == "normal-scores":
        def scores(mat):
            ranks = np.column_stack(
                [_average_ranks(mat[:, j]) for j in range(mat.shape[1])]
            )
            return special.ndtr((ranks - 1.0 / 3.0) / (m + 1.0 / 3.0))
        return _pearson_cross(scores(r), scores(t))
    if method == "spatial-sign":
        def unit_rows(mat):
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            zero = norms[:, 0] == 0.0
            if np.any(zero):
                # all-zero rows carry no direction; leave them at zero
                norms = norms.copy()
                norms[zero] = 1.0
            return mat / norms
        return (unit_rows(r).T @ unit_rows(t)) / m
    raise ValueError(f"unknown method {method!r}; expected one of {SEED_METHODS}")


def svd_adjust(s, r_scaled, t_scaled) -> np.ndarray:
    """Replace the singular values of a seed correlation with data-driven
    scales.

    With S = U diag(sigma) V', the columns of ``r_scaled @ U`` and
    ``t_scaled @ V`` are projections of the scaled data onto the singular
    directions; their Qn scales replace the singular values:
    S_adj = U diag(qn(RU) * qn(TV)) V'. Singular values at or below numerical
    rank tolerance keep a zero product so degenerate directions stay
    degenerate.

    Parameters
    ----------
    s : (a, b) array_like
        Seed correlation.
    r_scaled, t_scaled : array_like
        The Qn-scaled (untransformed) data matrices behind ``s``.

    Returns
    -------
    (a, b) ndarray
    """
    s = np.asarray(s, dtype=float)
    r_scaled = np.asarray(r_scaled, dtype=float)
    t_scaled = np.asarray(t_scaled, dtype=float)
    if s.shape != (r_scaled.shape[1], t_scaled.shape[1]):
        raise DimensionMismatchError(
            f"S has shape {s.shape}, expected "
            f"({r_scaled.shape[1]}, {t_scaled.shape[1]})"
        )
    u, sing, vt = np.linalg.svd(s, full_matrices=False)
    proj_r = r_scaled @ u
    proj_t = t_scaled @ vt.T
    prods = qn_scales(proj_r) * qn_scales(proj_t)
    if sing.size:
        tol = max(s.shape) * np.finfo(float).eps * sing[0]
        prods[sing <= tol] = 0.0
    return u @ np.diag(prods) @ vt
