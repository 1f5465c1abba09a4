"""Matrix-normal model on a graph: sampling and edgewise diagnostics.

The data model is an n x p observation matrix X = Z theta + E where the noise
E has matrix-normal law with row covariance L+ (the Laplacian pseudo-inverse)
and column covariance Sigma_V. Everything downstream rests on two facts:

* the total squared Mahalanobis norm of the residual decomposes into a sum of
  per-edge terms Delta_ij = (x_i - x_j)' Sigma_V^-1 (x_i - x_j) * w_ij, and
* each Delta_ij, standardized by w_ij * (l+_ii + l+_jj - 2 l+_ij), is
  chi-squared with p degrees of freedom under the model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .exceptions import DimensionMismatchError, NotPositiveDefiniteError
from .graph import LaplacianBundle, WeightedGraph
from .robust import chi2_quantile

__all__ = [
    "ModelParams",
    "Dataset",
    "EdgeDiagnostics",
    "sample_matrix_normal",
    "compose_sample",
    "total_mahalanobis",
    "edge_deltas",
    "edge_variance_factors",
    "flag_edge_outliers",
    "node_outlier_scores",
    "flag_node_outliers",
    "standardized_residuals",
]

_PD_EIG_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Regression coefficients theta (q x p) and column covariance
    Sigma_V (p x p, symmetric)."""

    theta: np.ndarray
    sigma_v: np.ndarray

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        sigma = np.asarray(self.sigma_v, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma_v must be square")
        if theta.shape[1] != sigma.shape[0]:
            raise DimensionMismatchError(
                f"theta has {theta.shape[1]} columns, sigma_v is "
                f"{sigma.shape[0]} x {sigma.shape[0]}"
            )
        if not np.allclose(sigma, sigma.T, atol=1e-8, rtol=1e-8):
            raise ValueError("sigma_v must be symmetric")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma_v", (sigma + sigma.T) / 2.0)

    @property
    def p(self) -> int:
        return self.sigma_v.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Observations x (n x p) with covariates z (n x q)."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim != 2 or z.ndim != 2:
            raise ValueError("x and z must be 2-d")
        if x.shape[0] != z.shape[0]:
            raise DimensionMismatchError(
                f"x has {x.shape[0]} rows, z has {z.shape[0]}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("x and z must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class EdgeDiagnostics:
    """Per-edge outlier diagnostics, aligned with the graph's edge list.

    ``delta`` is the weighted edgewise Mahalanobis term, ``var_factor`` its
    model variance multiplier w_ij (l+_ii + l+_jj - 2 l+_ij), and
    ``standardized`` their ratio, chi-squared(p) under the model.
    """

    edges: np.ndarray
    weights: np.ndarray
    delta: np.ndarray
    var_factor: np.ndarray
    standardized: np.ndarray
    is_outlier: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.delta.shape[0]


def sym_sqrt(mat: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Symmetric square root of a symmetric positive definite matrix."""
    evals, evecs = np.linalg.eigh(np.asarray(mat, dtype=float))
    if evals[0] <= _PD_EIG_TOL * max(abs(evals[-1]), 1.0):
        raise NotPositiveDefiniteError(
            f"{label} is not positive definite (min eigenvalue {evals[0]:.3e})"
        )
    root = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    return (root + root.T) / 2.0


def sym_inv(mat: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via eigh."""
    evals, evecs = np.linalg.eigh(np.asarray(mat, dtype=float))
    if evals[0] <= _PD_EIG_TOL * max(abs(evals[-1]), 1.0):
        raise NotPositiveDefiniteError(
            f"{label} is not positive definite (min eigenvalue {evals[0]:.3e})"
        )
    inv = evecs @ np.diag(1.0 / evals) @ evecs.T
    return (inv + inv.T) / 2.0


def sym_inv_sqrt(mat: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Inverse symmetric square root of a symmetric positive definite matrix."""
    evals, evecs = np.linalg.eigh(np.asarray(mat, dtype=float))
    if evals[0] <= _PD_EIG_TOL * max(abs(evals[-1]), 1.0):
        raise NotPositiveDefiniteError(
            f"{label} is not positive definite (min eigenvalue {evals[0]:.3e})"
        )
    inv_root = evecs @ np.diag(evals ** -0.5) @ evecs.T
    return (inv_root + inv_root.T) / 2.0


def compose_sample(params: ModelParams, bundle: LaplacianBundle, z,
                   noise: np.ndarray) -> np.ndarray:
    """Deterministic sampling transform X = Z theta + L^{+/2} Y Sigma_V^{1/2}
    for a given standard-normal draw Y.

    Split out from :func:`sample_matrix_normal` so tests can force Y (e.g.
    Y = 0 recovers the mean surface exactly).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != params.q:
        raise DimensionMismatchError(
            f"z has {z.shape[1]} columns, theta has {params.q} rows"
        )
    if z.shape[0] != bundle.n:
        raise DimensionMismatchError(
            f"z has {z.shape[0]} rows, graph has {bundle.n} nodes"
        )
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (bundle.n, params.p):
        raise DimensionMismatchError(
            f"noise has shape {noise.shape}, expected ({bundle.n}, {params.p})"
        )
    sig_half = sym_sqrt(params.sigma_v, "sigma_v")
    return z @ params.theta + bundle.pinv_half @ noise @ sig_half


def sample_matrix_normal(params: ModelParams, bundle: LaplacianBundle, z,
                         rng) -> np.ndarray:
    """Draw one n x p sample from the graph matrix-normal model.

    ``rng`` is an integer seed or a ``numpy.random.Generator``; a given seed
    always reproduces the same draw.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    noise = gen.standard_normal((bundle.n, params.p))
    return compose_sample(params, bundle, z, noise)


def _residual(data: Dataset, params: ModelParams) -> np.ndarray:
    if data.q != params.q:
        raise DimensionMismatchError(
            f"z has {data.q} columns, theta has {params.q} rows"
        )
    if data.p != params.p:
        raise DimensionMismatchError(
            f"x has {data.p} columns, sigma_v is {params.p} x {params.p}"
        )
    return data.x - data.z @ params.theta


def _edge_delta_values(resid: np.ndarray, params: ModelParams,
                       graph: WeightedGraph) -> np.ndarray:
    sig_inv = sym_inv(params.sigma_v, "sigma_v")
    diffs = resid[graph.edges[:, 0]] - resid[graph.edges[:, 1]]
    return _kernels.row_quadforms(diffs, sig_inv) * graph.weights


def total_mahalanobis(data: Dataset, params: ModelParams,
                      graph: WeightedGraph) -> float:
    """Total squared Mahalanobis norm of the residual under the model,
    evaluated through its edgewise decomposition (one term per edge)."""
    resid = _residual(data, params)
    if graph.n != data.n:
        raise DimensionMismatchError(
            f"graph has {graph.n} nodes, data has {data.n} rows"
        )
    return float(_edge_delta_values(resid, params, graph).sum())


def edge_variance_factors(graph: WeightedGraph,
                          bundle: LaplacianBundle) -> np.ndarray:
    """Model variance multiplier per edge: w_ij (l+_ii + l+_jj - 2 l+_ij)."""
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    diag = np.diag(bundle.pinv)
    return graph.weights * (diag[i] + diag[j] - 2.0 * bundle.pinv[i, j])


def edge_deltas(data: Dataset, params: ModelParams, bundle: LaplacianBundle,
                graph: WeightedGraph) -> EdgeDiagnostics:
    """Per-edge Mahalanobis terms with their standardization.

    Returns diagnostics with ``is_outlier`` all False; apply
    :func:`flag_edge_outliers` to threshold.
    """
    if graph.n != data.n or bundle.n != data.n:
        raise DimensionMismatchError("graph, bundle and data disagree on n")
    resid = _residual(data, params)
    delta = _edge_delta_values(resid, params, graph)
    var_factor = edge_variance_factors(graph, bundle)
    if np.any(var_factor <= 0):
        raise NotPositiveDefiniteError(
            "nonpositive edge variance factor; is the graph connected?"
        )
    return EdgeDiagnostics(
        edges=graph.edges,
        weights=graph.weights,
        delta=delta,
        var_factor=var_factor,
        standardized=delta / var_factor,
        is_outlier=np.zeros(delta.shape[0], dtype=bool),
    )


def flag_edge_outliers(diag: EdgeDiagnostics, p_dof: int,
                       level: float = 0.975) -> EdgeDiagnostics:
    """Threshold standardized edge scores at the chi-squared(p_dof) quantile."""
    cutoff = chi2_quantile(p_dof, level)
    return replace(diag, is_outlier=diag.standardized > cutoff)


def node_outlier_scores(data: Dataset, params: ModelParams,
                        bundle: LaplacianBundle) -> np.ndarray:
    """Per-node scores x'_i Sigma_V^-1 x_i / l+_ii on the centered residual.

    Model residuals have columns orthogonal to the all-ones vector (they live
    in the range of L), so each residual column is centered first; this
    removes mean-fit error that the score would otherwise absorb, and makes
    the score well defined when an intercept row of theta was pinned. Nodes
    with l+_ii ~ 0 get a NaN score and a warning.
    """
    if bundle.n != data.n:
        raise DimensionMismatchError("bundle and data disagree on n")
    resid = _residual(data, params)
    resid = resid - resid.mean(axis=0)
    sig_inv = sym_inv(params.sigma_v, "sigma_v")
    quad = _kernels.row_quadforms(resid, sig_inv)
    diag = np.diag(bundle.pinv).copy()
    tiny = diag <= 1e-12 * max(diag.max(initial=0.0), 1.0)
    if np.any(tiny):
        warnings.warn(
            f"{int(tiny.sum())} node(s) have numerically zero pseudo-inverse "
            "diagonal; their scores are undefined",
            RuntimeWarning,
            stacklevel=2,
        )
        diag[tiny] = np.nan
    return quad / diag


def flag_node_outliers(data: Dataset, params: ModelParams,
                       bundle: LaplacianBundle, p_dof: int,
                       level: float = 0.975) -> np.ndarray:
    """Boolean node-outlier flags; undefined scores are never flagged."""
    scores = node_outlier_scores(data, params, bundle)
    cutoff = chi2_quantile(p_dof, level)
    with np.errstate(invalid="ignore"):
        flags = scores > cutoff
    return np.where(np.isnan(scores), False, flags)


def standardized_residuals(data: Dataset, params: ModelParams,
                           bundle: LaplacianBundle) -> np.ndarray:
    """Whitened residual matrix L^{1/2} (X - Z theta) Sigma_V^{-1/2}.

    Entries are approximately iid standard normal under the model; large
    rows point at the nodes driving an outlying edge.
    """
    if bundle.n != data.n:
        raise DimensionMismatchError("bundle and data disagree on n")
    resid = _residual(data, params)
    return bundle.half @ resid @ sym_inv_sqrt(params.sigma_v, "sigma_v")
