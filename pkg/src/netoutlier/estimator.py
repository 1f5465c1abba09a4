"""Edgewise trimmed estimation of (theta, Sigma_V) on a graph.

The estimator works on the edgewise design: for every edge (i, j) with i < j,
one row (z_i - z_j) sqrt(w_ij) of covariate differences and one row
(x_i - x_j) sqrt(w_ij) of observation differences. The maximum-likelihood
estimator has a closed form in these rows; the robust version minimizes a
trimmed objective (the h smallest per-edge Mahalanobis terms plus a
log-determinant penalty) by concentration steps from four deterministic
starting estimates, then reweights once and rescales the covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import _kernels
from .exceptions import (
    DegenerateColumnError,
    DegenerateEstimateError,
    DimensionMismatchError,
    DisconnectedGraphError,
    RankDeficiencyError,
)
from .graph import LaplacianBundle, WeightedGraph
from .model import Dataset, ModelParams, edge_variance_factors
from .robust import SEED_METHODS, chi2_quantile, qn_scales, seed_correlation, svd_adjust

__all__ = [
    "EdgewiseDesign",
    "McdConfig",
    "FitResult",
    "build_edgewise_design",
    "mle_fit",
    "mle_fit_design",
    "trimmed_objective",
    "c_step",
    "deterministic_starts",
    "edgewise_mcd_fit",
    "default_h",
    "min_h",
]

_ZERO_COL_TOL = 1e-12
_PD_TOL = 1e-12


@dataclass(frozen=True)
class EdgewiseDesign:
    """Edgewise difference rows for a dataset on a graph.

    Attributes
    ----------
    z : (m, q) ndarray
        Rows (z_i - z_j) sqrt(w_ij), one per edge, i < j.
    x : (m, p) ndarray
        Rows (x_i - x_j) sqrt(w_ij).
    edges : (m, 2) ndarray
        Edge endpoints, aligned with the rows.
    weights : (m,) ndarray
        Edge weights.
    n_nodes : int
        Number of nodes n of the underlying graph (the estimating equations
        normalize by n, not by the number of edges).
    """

    z: np.ndarray
    x: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    n_nodes: int

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class McdConfig:
    """Tuning knobs for :func:`edgewise_mcd_fit`.

    ``h`` is the subset size; ``None`` selects ceil(0.75 m) clamped to the
    admissible range. ``reweight_dof`` overrides the chi-squared degrees of
    freedom used by the reweighting and rescaling cutoffs (default: the
    response dimension p).
    """

    h: int | None = None
    max_csteps: int = 100
    objective_tol: float = 1e-10
    reweight: bool = True
    reweight_level: float = 0.975
    rescale: bool = True
    reweight_dof: int | None = None


@dataclass(frozen=True)
class FitResult:
    """Outcome of the trimmed edgewise fit.

    ``objective`` is the trimmed objective at the converged pre-reweight
    estimate (the last entry of ``objective_trace``); ``theta`` and
    ``sigma_v`` include the reweighting and rescaling when enabled.
    ``active_set`` holds the h edge-row indices retained at convergence.
    """

    theta: np.ndarray
    sigma_v: np.ndarray
    objective: float
    active_set: np.ndarray
    n_csteps: int
    start_id: str
    reweighted: bool
    converged: bool
    h: int
    objective_trace: np.ndarray

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.theta, self.sigma_v)


def build_edgewise_design(data: Dataset, graph: WeightedGraph) -> EdgewiseDesign:
    """Assemble the edgewise difference rows for ``data`` on ``graph``."""
    if graph.n != data.n:
        raise DimensionMismatchError(
            f"graph has {graph.n} nodes, data has {data.n} rows"
        )
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    root_w = np.sqrt(graph.weights)[:, None]
    return EdgewiseDesign(
        z=(data.z[i] - data.z[j]) * root_w,
        x=(data.x[i] - data.x[j]) * root_w,
        edges=graph.edges,
        weights=graph.weights,
        n_nodes=data.n,
    )


def min_h(m: int, p: int) -> int:
    """Smallest admissible subset size, ceil((m + p + 1) / 2)."""
    return math.ceil((m + p + 1) / 2)


def default_h(m: int, p: int) -> int:
    """Default subset size ceil(0.75 m), clamped into the admissible range."""
    return min(max(math.ceil(0.75 * m), min_h(m, p)), m)


def _identifiable_columns(design: EdgewiseDesign) -> np.ndarray:
    """Mask of covariate columns with nonzero edgewise differences.

    A covariate that is constant across nodes contributes a zero column here
    (1'L = 0 makes its coefficient row unidentifiable); such rows of theta
    are pinned to zero by every fitting routine in this module.
    """
    norms = np.linalg.norm(design.z, axis=0)
    scale = max(float(np.abs(design.z).max(initial=0.0)), 1.0)
    return norms > _ZERO_COL_TOL * scale * np.sqrt(max(design.m, 1))


def _warn_pinned(mask: np.ndarray) -> None:
    dropped = np.flatnonzero(~mask)
    if dropped.size:
        warnings.warn(
            f"covariate column(s) {dropped.tolist()} are constant across "
            "nodes; the corresponding theta rows are unidentifiable and "
            "pinned to zero",
            RuntimeWarning,
            stacklevel=3,
        )


def _embed_theta(theta_red: np.ndarray, mask: np.ndarray, p: int) -> np.ndarray:
    theta = np.zeros((mask.shape[0], p))
    if theta_red.size:
        theta[mask] = theta_red
    return theta


def _solve_spd(a: np.ndarray, b: np.ndarray, context: str) -> np.ndarray:
    """Solve a x = b for symmetric positive definite a, or raise."""
    if a.shape[0] == 0:
        return np.zeros((0, b.shape[1] if b.ndim == 2 else 1))
    evals = np.linalg.eigvalsh(a)
    if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
        raise DegenerateEstimateError(
            f"{context}: singular system (min eigenvalue {evals[0]:.3e})"
        )
    c, low = sla.cho_factor(a, lower=True)
    return sla.cho_solve((c, low), b)


def _check_remaining_rank(gram: np.ndarray, mask: np.ndarray) -> None:
    """Raise RankDeficiencyError if the reduced Gram matrix is singular."""
    if gram.shape[0] == 0:
        return
    evals, evecs = np.linalg.eigh(gram)
    if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
        combo = evecs[:, 0]
        cols = np.flatnonzero(mask)
        loads = ", ".join(
            f"{c:+.3f}*z[{cols[k]}]" for k, c in enumerate(combo)
            if abs(c) > 1e-8
        )
        raise RankDeficiencyError(
            "covariates are collinear on the graph; the combination "
            f"{loads} has zero edgewise variation"
        )


def _design_deltas(design: EdgewiseDesign, params: ModelParams,
                   sig_inv: np.ndarray | None = None) -> np.ndarray:
    """Per-edge Mahalanobis terms Delta from the design rows."""
    if sig_inv is None:
        evals, evecs = np.linalg.eigh(params.sigma_v)
        if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
            raise DegenerateEstimateError(
                f"sigma_v not positive definite (min eigenvalue {evals[0]:.3e})"
            )
        sig_inv = evecs @ np.diag(1.0 / evals) @ evecs.T
    resid = design.x - design.z @ params.theta
    return _kernels.row_quadforms(resid, sig_inv)


def _subset_refit(design: EdgewiseDesign, rows: np.ndarray, divisor: float,
                  mask: np.ndarray) -> ModelParams:
    """Closed-form (theta, Sigma_V) on a row subset with a given divisor."""
    z_red = design.z[:, mask]
    gram = _kernels.subset_crossprod(z_red, z_red, rows)
    cross = _kernels.subset_crossprod(z_red, design.x, rows)
    theta_red = _solve_spd(gram, cross, "h-subset refit")
    theta = _embed_theta(theta_red, mask, design.p)
    resid = design.x - design.z @ theta
    sigma = _kernels.subset_crossprod(resid, resid, rows) / divisor
    sigma = (sigma + sigma.T) / 2.0
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
        raise DegenerateEstimateError(
            "subset covariance is singular "
            f"(min eigenvalue {evals[0]:.3e} on {rows.size} rows)"
        )
    return ModelParams(theta, sigma)


def mle_fit_design(design: EdgewiseDesign) -> ModelParams:
    """Maximum-likelihood fit written in edgewise matrix form.

    theta = (Z_E' Z_E)^-1 Z_E' X_E and
    Sigma_V = (X_E - Z_E theta)' (X_E - Z_E theta) / n. Constant covariate
    columns are pinned (see :func:`mle_fit`); a degenerate covariance is
    returned as-is with a warning.
    """
    mask = _identifiable_columns(design)
    _warn_pinned(mask)
    z_red = design.z[:, mask]
    gram = z_red.T @ z_red
    _check_remaining_rank(gram, mask)
    theta_red = _solve_spd(gram, z_red.T @ design.x, "MLE") if mask.any() \
        else np.zeros((0, design.p))
    theta = _embed_theta(theta_red, mask, design.p)
    resid = design.x - design.z @ theta
    sigma = resid.T @ resid / design.n_nodes
    sigma = (sigma + sigma.T) / 2.0
    _warn_if_degenerate(sigma)
    return ModelParams(theta, sigma)


def _warn_if_degenerate(sigma: np.ndarray) -> None:
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
        warnings.warn(
            "estimated covariance is numerically singular",
            RuntimeWarning,
            stacklevel=3,
        )


def mle_fit(data: Dataset, graph: WeightedGraph,
            bundle: LaplacianBundle) -> ModelParams:
    """Maximum-likelihood fit through the Laplacian normal equations.

    Solves theta = (Z'LZ)^-1 Z'LX and sets
    Sigma_V = (X - Z theta)' L (X - Z theta) / n. Covariate columns constant
    across nodes are annihilated by L (1'L = 0); their theta rows are pinned
    to zero with a warning. In particular an intercept-only fit returns
    theta = 0 and Sigma_V = X'LX / n. Collinearity beyond constant columns
    raises :class:`RankDeficiencyError`.
    """
    if graph.n != data.n or bundle.n != data.n:
        raise DimensionMismatchError("graph, bundle and data disagree on n")
    lap = bundle.laplacian
    col_range = np.ptp(data.z, axis=0)
    scale = np.maximum(np.abs(data.z).max(axis=0), 1.0)
    mask = col_range > _ZERO_COL_TOL * scale
    _warn_pinned(mask)
    z_red = data.z[:, mask]
    gram = z_red.T @ lap @ z_red
    gram = (gram + gram.T) / 2.0
    _check_remaining_rank(gram, mask)
    theta_red = _solve_spd(gram, z_red.T @ lap @ data.x, "MLE") if mask.any() \
        else np.zeros((0, data.p))
    theta = _embed_theta(theta_red, mask, data.p)
    resid = data.x - data.z @ theta
    sigma = resid.T @ lap @ resid / data.n
    sigma = (sigma + sigma.T) / 2.0
    _warn_if_degenerate(sigma)
    return ModelParams(theta, sigma)


def trimmed_objective(design: EdgewiseDesign, params: ModelParams,
                      h: int) -> float:
    """Sum of the h smallest per-edge Mahalanobis terms plus the penalty
    (n h / m) log det Sigma_V."""
    if not 1 <= h <= design.m:
        raise ValueError(f"h must be in [1, {design.m}], got {h}")
    sign, logdet = np.linalg.slogdet(params.sigma_v)
    if sign <= 0:
        raise DegenerateEstimateError("sigma_v must be positive definite")
    delta = _design_deltas(design, params)
    trimmed = np.partition(delta, h - 1)[:h].sum()
    return float(trimmed + design.n_nodes * h / design.m * logdet)


def c_step(design: EdgewiseDesign, params: ModelParams,
           h: int) -> tuple[ModelParams, np.ndarray]:
    """One concentration step.

    Orders the per-edge terms under ``params``, refits the closed-form
    estimate on the h smallest with divisor n h / m, and returns the new
    parameters together with the full ordering. The trimmed objective never
    increases along these steps.
    """
    if not 1 <= h <= design.m:
        raise ValueError(f"h must be in [1, {design.m}], got {h}")
    delta = _design_deltas(design, params)
    order = np.argsort(delta, kind="stable")
    mask = _identifiable_columns(design)
    divisor = design.n_nodes * h / design.m
    new_params = _subset_refit(design, order[:h], divisor, mask)
    return new_params, order


def _robust_covariance(mat: np.ndarray, method: str) -> np.ndarray:
    """Seed correlation + SVD adjustment + re-inflation by Qn scales."""
    scales = qn_scales(mat)
    bad = np.flatnonzero(scales == 0.0)
    if bad.size:
        raise DegenerateColumnError(
            f"column {bad[0]} has zero Qn scale"
        )
    scaled = mat / scales
    seed = seed_correlation(scaled, scaled, method)
    adjusted = svd_adjust(seed, scaled, scaled)
    return scales[:, None] * adjusted * scales[None, :]


def _robust_cross(za: np.ndarray, xb: np.ndarray, method: str
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Robust (Cov(Z,Z), Cov(Z,X)) blocks for the normal-equation analog."""
    sz = qn_scales(za)
    sx = qn_scales(xb)
    for name, sc in (("z", sz), ("x", sx)):
        bad = np.flatnonzero(sc == 0.0)
        if bad.size:
            raise DegenerateColumnError(
                f"{name} column {bad[0]} has zero Qn scale"
            )
    z_scaled = za / sz
    x_scaled = xb / sx
    s_zz = svd_adjust(seed_correlation(z_scaled, z_scaled, method),
                      z_scaled, z_scaled)
    s_zx = svd_adjust(seed_correlation(z_scaled, x_scaled, method),
                      z_scaled, x_scaled)
    c_zz = sz[:, None] * s_zz * sz[None, :]
    c_zx = sz[:, None] * s_zx * sx[None, :]
    return c_zz, c_zx


def deterministic_starts(design: EdgewiseDesign
                         ) -> list[tuple[str, ModelParams]]:
    """Four deterministic starting estimates (tanh, rank, normal-scores,
    spatial-sign seeds).

    Each start solves the robust analog of the edgewise normal equations for
    theta0, then estimates Sigma_V0 from the residual rows by the same
    covariance construction, scaled by m / n to match the n-normalized
    estimating equation. Starts whose pieces degenerate are dropped with a
    warning; at least one must survive.
    """
    mask = _identifiable_columns(design)
    q_eff = int(mask.sum())
    starts: list[tuple[str, ModelParams]] = []
    for method in SEED_METHODS:
        try:
            if q_eff:
                c_zz, c_zx = _robust_cross(design.z[:, mask], design.x, method)
                theta_red = _solve_spd(c_zz, c_zx, f"start {method!r}")
            else:
                theta_red = np.zeros((0, design.p))
            theta = _embed_theta(theta_red, mask, design.p)
            resid = design.x - design.z @ theta
            sigma = _robust_covariance(resid, method) * (design.m / design.n_nodes)
            sigma = (sigma + sigma.T) / 2.0
            evals = np.linalg.eigvalsh(sigma)
            if evals[0] <= _PD_TOL * max(abs(evals[-1]), 1.0):
                raise DegenerateEstimateError(
                    f"start {method!r}: covariance seed is singular"
                )
        except DegenerateEstimateError as exc:
            warnings.warn(
                f"dropping start {method!r}: {exc}",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        starts.append((method, ModelParams(theta, sigma)))
    if not starts:
        raise DegenerateEstimateError("all deterministic starts degenerate")
    return starts


def _concentrate(design: EdgewiseDesign, start: ModelParams, h: int,
                 mask: np.ndarray, max_csteps: int, objective_tol: float):
    """Iterate concentration steps from one start until the active subset
    repeats. Returns (params, objective trace, active set, n refits,
    converged flag)."""
    divisor = design.n_nodes * h / design.m
    params = start
    obj = trimmed_objective(design, params, h)
    trace = [obj]
    prev_subset = None
    n_csteps = 0
    converged = False
    while n_csteps < max_csteps:
        delta = _design_deltas(design, params)
        subset = np.sort(np.argsort(delta, kind="stable")[:h])
        if prev_subset is not None and np.array_equal(subset, prev_subset):
            converged = True
            break
        prev_subset = subset
        params = _subset_refit(design, subset, divisor, mask)
        n_csteps += 1
        new_obj = trimmed_objective(design, params, h)
        if new_obj > obj + 1e-8 * max(1.0, abs(obj)):
            raise DegenerateEstimateError(
                f"concentration step increased the objective "
                f"({obj:.6e} -> {new_obj:.6e}); numerical breakdown"
            )
        trace.append(new_obj)
        if abs(obj - new_obj) <= objective_tol:
            obj = new_obj
            converged = True
            break
        obj = new_obj
    if prev_subset is None:
        # h = m with a start already at the fixed point never refit; do so once
        prev_subset = np.arange(design.m)
    return params, trace, prev_subset, n_csteps, converged


def edgewise_mcd_fit(data: Dataset, graph: WeightedGraph,
                     bundle: LaplacianBundle,
                     config: McdConfig | None = None) -> FitResult:
    """Robust edgewise fit of (theta, Sigma_V) by trimmed concentration.

    Runs concentration steps from each surviving deterministic start, keeps
    the lowest trimmed objective, then (by default) refits once on all edges
    whose standardized term is below the chi-squared ``reweight_level``
    quantile and rescales Sigma_V so the median standardized term matches
    the chi-squared median.

    Parameters
    ----------
    data : Dataset
    graph : WeightedGraph
    bundle : LaplacianBundle
        Must describe a connected graph.
    config : McdConfig, optional

    Returns
    -------
    FitResult
    """
    cfg = config or McdConfig()
    if not bundle.is_connected:
        raise DisconnectedGraphError(
            f"graph has {bundle.n_components} components; the model requires "
            "a connected graph"
        )
    design = build_edgewise_design(data, graph)
    m, p = design.m, design.p
    lo = min_h(m, p)
    if cfg.h is None:
        h = default_h(m, p)
    else:
        h = int(cfg.h)
        if not lo <= h <= m:
            raise ValueError(f"h must be in [{lo}, {m}], got {h}")
    mask = _identifiable_columns(design)
    _warn_pinned(mask)
    gram = design.z[:, mask].T @ design.z[:, mask]
    _check_remaining_rank(gram, mask)

    candidates = []
    for method, start in deterministic_starts(design):
        try:
            candidates.append(
                (method,)
                + _concentrate(design, start, h, mask,
                               cfg.max_csteps, cfg.objective_tol)
            )
        except DegenerateEstimateError as exc:
            warnings.warn(
                f"start {method!r} broke down during concentration: {exc}",
                RuntimeWarning,
                stacklevel=2,
            )
    if not candidates:
        raise DegenerateEstimateError(
            "no deterministic start survived concentration"
        )
    method, params, trace, active, n_csteps, converged = min(
        candidates, key=lambda c: c[2][-1]
    )
    objective = trace[-1]

    var_factor = edge_variance_factors(graph, bundle)
    dof = cfg.reweight_dof if cfg.reweight_dof is not None else p
    reweighted = False
    if cfg.reweight:
        std = _design_deltas(design, params) / var_factor
        # The trimmed-subset covariance has a scale bias that depends on the
        # trimming fraction and the graph; calibrate it by the median before
        # thresholding, otherwise the chi-squared cut trims far more than
        # the nominal 1 - level fraction and the refit loses efficiency.
        med = float(np.median(std))
        if med > 0:
            scale = med / chi2_quantile(dof, 0.5)
            params = ModelParams(params.theta, params.sigma_v * scale)
            std = std / scale
        keep = np.flatnonzero(std <= chi2_quantile(dof, cfg.reweight_level))
        if keep.size >= max(int(mask.sum()) + p + 1, lo // 2):
            try:
                params = _subset_refit(
                    design, keep, design.n_nodes * keep.size / m, mask
                )
                reweighted = True
            except DegenerateEstimateError as exc:
                warnings.warn(
                    f"reweighting skipped: {exc}", RuntimeWarning, stacklevel=2
                )
        else:
            warnings.warn(
                f"reweighting skipped: only {keep.size} edges below the "
                "cutoff", RuntimeWarning, stacklevel=2,
            )
    if cfg.rescale:
        std = _design_deltas(design, params) / var_factor
        med = float(np.median(std))
        if med > 0:
            params = ModelParams(
                params.theta,
                params.sigma_v * (med / chi2_quantile(dof, 0.5)),
            )
        else:
            warnings.warn(
                "rescaling skipped: median standardized term is zero",
                RuntimeWarning, stacklevel=2,
            )

    return FitResult(
        theta=params.theta,
        sigma_v=params.sigma_v,
        objective=float(objective),
        active_set=np.asarray(active, dtype=np.int64),
        n_csteps=int(n_csteps),
        start_id=method,
        reweighted=reweighted,
        converged=bool(converged),
        h=h,
        objective_trace=np.asarray(trace, dtype=float),
    )
