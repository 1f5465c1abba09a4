"""Compositional data support: log-ratio geometry and a fitting front end.

Compositions (positive vectors carrying only relative information) are mapped
to ordinary Euclidean coordinates by the centered log-ratio (clr) and, with a
contrast matrix, the isometric log-ratio (ilr) transforms. The estimator then
runs unchanged in ilr space; coefficients and covariance are mapped back to
clr space for interpretation. Edge scores are invariant to the choice of
contrast matrix.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .estimator import FitResult, McdConfig, edgewise_mcd_fit
from .exceptions import DimensionMismatchError, ParseError
from .graph import LaplacianBundle, WeightedGraph, laplacian_bundle
from .model import (
    Dataset,
    EdgeDiagnostics,
    ModelParams,
    compose_sample,
    edge_deltas,
    flag_edge_outliers,
    flag_node_outliers,
    node_outlier_scores,
    sym_inv,
    sym_inv_sqrt,
)

__all__ = [
    "closure",
    "perturb",
    "power",
    "clr",
    "clr_inv",
    "ilr",
    "ilr_inv",
    "aitchison_inner",
    "aitchison_distance",
    "helmert_contrast",
    "random_contrast",
    "validate_contrast",
    "clr_precision",
    "CodaSchema",
    "CompositionalFit",
    "fit_compositional",
    "ReplicaData",
    "make_election_replica",
    "plant_compositional_outlier",
]

DEFAULT_CODA_LEVEL = 0.995


def _as_positive(x, name: str = "composition") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} parts must be finite and strictly positive")
    return arr


def closure(x) -> np.ndarray:
    """Rescale each composition to sum to 1 (rows of a 2-d input)."""
    arr = _as_positive(x)
    total = arr.sum(axis=-1, keepdims=True)
    return arr / total


def perturb(x, y) -> np.ndarray:
    """Aitchison perturbation: closure of the componentwise product."""
    return closure(_as_positive(x) * _as_positive(y))


def power(x, alpha: float) -> np.ndarray:
    """Aitchison powering: closure of componentwise powers."""
    return closure(_as_positive(x) ** float(alpha))


def clr(x) -> np.ndarray:
    """Centered log-ratio transform: log parts minus their row mean."""
    logs = np.log(_as_positive(x))
    return logs - logs.mean(axis=-1, keepdims=True)


def clr_inv(u) -> np.ndarray:
    """Inverse clr: closure of the exponentials."""
    return closure(np.exp(np.asarray(u, dtype=float)))


def validate_contrast(v: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Check contrast matrix properties: p x (p-1), V'V = I, 1'V = 0."""
    v = np.asarray(v, dtype=float)
    p = v.shape[0]
    if v.ndim != 2 or v.shape[1] != p - 1:
        raise ValueError(f"contrast matrix must be p x (p-1), got {v.shape}")
    if not np.allclose(v.T @ v, np.eye(p - 1), atol=atol):
        raise ValueError("contrast matrix columns are not orthonormal")
    if not np.allclose(v.sum(axis=0), 0.0, atol=atol):
        raise ValueError("contrast matrix columns do not sum to zero")
    return v


def helmert_contrast(p: int) -> np.ndarray:
    """Default contrast matrix of Helmert type.

    Column j (1-based) has j entries 1/sqrt(j (j+1)), then -j/sqrt(j (j+1)),
    then zeros: orthonormal and orthogonal to the all-ones vector.
    """
    if p < 2:
        raise ValueError("need at least 2 parts")
    v = np.zeros((p, p - 1))
    for j in range(1, p):
        scale = 1.0 / np.sqrt(j * (j + 1.0))
        v[:j, j - 1] = scale
        v[j, j - 1] = -j * scale
    return validate_contrast(v)


def random_contrast(p: int, rng) -> np.ndarray:
    """Random contrast matrix: a Haar-ish orthonormal basis of the zero-sum
    subspace, for invariance checks."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    raw = gen.standard_normal((p, p - 1))
    raw -= raw.mean(axis=0, keepdims=True)
    q, r = np.linalg.qr(raw)
    q *= np.sign(np.diag(r))
    return validate_contrast(q)


def ilr(x, v: np.ndarray) -> np.ndarray:
    """Isometric log-ratio coordinates clr(x) V for a contrast matrix V."""
    return clr(x) @ np.asarray(v, dtype=float)


def ilr_inv(u, v: np.ndarray) -> np.ndarray:
    """Inverse ilr: closure(exp(u V'))."""
    u = np.asarray(u, dtype=float)
    return clr_inv(u @ np.asarray(v, dtype=float).T)


def aitchison_inner(x, y) -> float:
    """Aitchison inner product via the displayed double log-ratio sum,
    (1 / 2p) sum_{k,l} log(x_k/x_l) log(y_k/y_l)."""
    xa = _as_positive(x)
    ya = _as_positive(y)
    if xa.ndim != 1 or ya.ndim != 1 or xa.shape != ya.shape:
        raise DimensionMismatchError("x and y must be 1-d with equal length")
    p = xa.shape[0]
    lx = np.log(xa)
    ly = np.log(ya)
    dx = lx[:, None] - lx[None, :]
    dy = ly[:, None] - ly[None, :]
    return float((dx * dy).sum() / (2.0 * p))


def aitchison_distance(x, y) -> float:
    """Aitchison distance: norm of the log-ratio difference."""
    diff = perturb(x, 1.0 / _as_positive(y))
    return float(np.sqrt(max(aitchison_inner(diff, diff), 0.0)))


def clr_precision(sigma_ilr: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Generalized inverse of the clr-space covariance, V Sigma_ilr^-1 V'.

    This is the matrix that makes clr-space Mahalanobis terms equal their
    ilr-space counterparts; it is singular in the all-ones direction by
    construction.
    """
    v = np.asarray(v, dtype=float)
    return v @ sym_inv(np.asarray(sigma_ilr, dtype=float), "sigma_ilr") @ v.T


# ---------------------------------------------------------------------------
# dataset schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CodaSchema:
    """Declares which columns of the covariate matrix form compositional
    groups, and whether the response matrix is compositional.

    ``groups`` maps a group name to the list of 0-based covariate column
    indices it spans; remaining columns pass through untransformed.
    """

    response_compositional: bool = True
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        seen: set[int] = set()
        for name, cols in self.groups.items():
            cols = list(cols)
            if len(cols) < 2:
                raise ValueError(f"group {name!r} needs at least 2 columns")
            for c in cols:
                if not isinstance(c, int) or c < 0:
                    raise ValueError(f"group {name!r}: bad column index {c!r}")
                if c in seen:
                    raise ValueError(f"column {c} appears in two groups")
                seen.add(c)

    @classmethod
    def from_json(cls, path) -> "CodaSchema":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read schema {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParseError(f"{path}: schema must be a JSON object")
        response = raw.get("response", "compositional")
        if response not in ("compositional", "euclidean"):
            raise ParseError(
                f"{path}: response must be 'compositional' or 'euclidean'"
            )
        groups = raw.get("covariate_groups", {})
        if not isinstance(groups, dict):
            raise ParseError(f"{path}: covariate_groups must be an object")
        try:
            return cls(
                response_compositional=response == "compositional",
                groups={k: [int(c) for c in v] for k, v in groups.items()},
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: {exc}") from exc

    def validate_against(self, q: int) -> None:
        for name, cols in self.groups.items():
            for c in cols:
                if c >= q:
                    raise DimensionMismatchError(
                        f"group {name!r} references column {c} but the "
                        f"covariate matrix has {q} columns"
                    )

    def passthrough(self, q: int) -> list[int]:
        grouped = {c for cols in self.groups.values() for c in cols}
        return [c for c in range(q) if c not in grouped]


def _close_with_warning(arr: np.ndarray, what: str) -> np.ndarray:
    """Apply closure, warning when rows were not already normalized."""
    arr = _as_positive(arr, what)
    totals = arr.sum(axis=-1, keepdims=True)
    dev = float(np.abs(totals - 1.0).max())
    if dev > 1e-6:
        warnings.warn(
            f"{what} rows renormalized to sum 1 "
            f"(largest deviation {dev:.3g})",
            RuntimeWarning,
            stacklevel=3,
        )
    return arr / totals


def _group_slices(schema: CodaSchema, q: int) -> tuple[list, list]:
    """ilr column layout: group blocks in schema order, then passthrough."""
    groups = []
    pos = 0
    for name, cols in schema.groups.items():
        cols = list(cols)
        groups.append((name, cols, slice(pos, pos + len(cols) - 1)))
        pos += len(cols) - 1
    passthrough = [(c, pos + k) for k, c in enumerate(schema.passthrough(q))]
    return groups, passthrough


def _covariate_transform(z: np.ndarray, schema: CodaSchema,
                         contrasts: dict) -> tuple[np.ndarray, np.ndarray]:
    """ilr-transform grouped covariate columns.

    Returns (z_ilr, v_z) where v_z maps the clr-space covariate vector (group
    columns clr-ed in place, scalars untouched) to the ilr coordinates:
    z_ilr = z_clr @ v_z.
    """
    q = z.shape[1]
    schema.validate_against(q)
    groups, passthrough = _group_slices(schema, q)
    q_ilr = sum(len(cols) - 1 for cols in schema.groups.values()) + len(passthrough)
    v_z = np.zeros((q, q_ilr))
    z_ilr = np.empty((z.shape[0], q_ilr))
    for name, cols, sl in groups:
        v_g = contrasts[name]
        z_ilr[:, sl] = ilr(_close_with_warning(z[:, cols], f"group {name!r}"), v_g)
        v_z[np.ix_(cols, range(sl.start, sl.stop))] = v_g
    for c, pos in passthrough:
        z_ilr[:, pos] = z[:, c]
        v_z[c, pos] = 1.0
    return z_ilr, v_z


def _covariate_clr(z: np.ndarray, schema: CodaSchema) -> np.ndarray:
    """clr-transform grouped covariate columns in place, pass the rest."""
    out = np.array(z, dtype=float, copy=True)
    for cols in schema.groups.values():
        out[:, list(cols)] = clr(z[:, list(cols)])
    return out


# ---------------------------------------------------------------------------
# fitting front end
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositionalFit:
    """Result of :func:`fit_compositional`.

    The robust fit itself lives in ilr coordinates (``fit``, expressed in the
    requested contrasts); ``theta_clr`` and ``sigma_clr`` are the back-mapped
    clr-space parameters (rows of ``theta_clr`` align with the original
    covariate columns). Edge and node diagnostics do not depend on the
    contrast matrices.
    """

    fit: FitResult
    schema: CodaSchema
    contrast_x: np.ndarray | None
    contrasts_z: dict
    v_z: np.ndarray
    theta_clr: np.ndarray
    sigma_clr: np.ndarray
    diagnostics: EdgeDiagnostics
    node_scores: np.ndarray
    node_flags: np.ndarray
    residuals_clr: np.ndarray
    dataset_ilr: Dataset
    level: float


def fit_compositional(x, z, graph: WeightedGraph, bundle: LaplacianBundle,
                      schema: CodaSchema, config: McdConfig | None = None,
                      level: float = DEFAULT_CODA_LEVEL,
                      contrast_rng=None) -> CompositionalFit:
    """Robust edgewise fit for compositional responses and/or covariates.

    The response (when compositional) and each covariate group are mapped to
    ilr coordinates; the trimmed edgewise estimator runs there; coefficients
    and covariance are mapped back to clr space. Contrast matrices default to
    the Helmert-type basis; pass ``contrast_rng`` (seed or Generator) to draw
    random ones, e.g. for invariance checks.

    The optimization itself always runs in a fixed internal (Helmert) basis
    and the result is rotated into the requested contrasts afterwards; two
    ilr bases differ only by an orthogonal map, under which every C-step
    refit is exactly equivariant, so this pins down one optimum instead of
    letting the non-equivariant robust starts pick basin by basis. Edge
    scores, flags, and clr-space outputs are therefore identical across
    contrast choices up to floating-point noise.

    Parameters
    ----------
    x : (n, p) array_like
        Response rows; strictly positive when the schema declares them
        compositional (closure is applied, with a warning if rows were not
        normalized).
    z : (n, q) array_like
        Covariates; columns listed in schema groups must be positive.
    level : float
        Chi-squared level for edge and node flags (dof = ilr dimension).

    Returns
    -------
    CompositionalFit
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("z must be 2-d")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be 2-d")
    if x.shape[0] != z.shape[0]:
        raise DimensionMismatchError("x and z must have equal row counts")
    gen = None
    if contrast_rng is not None:
        gen = (contrast_rng if isinstance(contrast_rng, np.random.Generator)
               else np.random.default_rng(contrast_rng))

    p = x.shape[1]
    if schema.response_compositional:
        contrast_x = (random_contrast(p, gen) if gen is not None
                      else helmert_contrast(p))
        base_x = helmert_contrast(p)
        x_comp = _close_with_warning(x, "response")
        x_fit = ilr(x_comp, base_x)
        dof = p - 1
    else:
        contrast_x = None
        base_x = None
        x_comp = x
        x_fit = x
        dof = p

    contrasts_z = {}
    base_z = {}
    for name, cols in schema.groups.items():
        size = len(list(cols))
        contrasts_z[name] = (random_contrast(size, gen) if gen is not None
                             else helmert_contrast(size))
        base_z[name] = helmert_contrast(size)
    z_fit, _ = _covariate_transform(z, schema, base_z)

    data_fit = Dataset(x_fit, z_fit)
    fit = edgewise_mcd_fit(data_fit, graph, bundle, config)
    params = ModelParams(fit.theta, fit.sigma_v)

    diag = edge_deltas(data_fit, params, bundle, graph)
    diag = flag_edge_outliers(diag, dof, level)
    n_scores = node_outlier_scores(data_fit, params, bundle)
    n_flags = flag_node_outliers(data_fit, params, bundle, dof, level)

    # Rotate the internal-basis fit into the requested contrasts. For a
    # covariate group, z_req = z_base q_g with q_g = V_base' V_req
    # orthogonal, so the matching coefficient rows pick up q_g'; the
    # response side multiplies on the right by q_x = V_base' V_req.
    theta_req = fit.theta.copy()
    groups, _ = _group_slices(schema, z.shape[1])
    for name, _cols, sl in groups:
        q_g = base_z[name].T @ contrasts_z[name]
        theta_req[sl] = q_g.T @ theta_req[sl]
    if schema.response_compositional:
        q_x = base_x.T @ contrast_x
        theta_req = theta_req @ q_x
        sigma_req = q_x.T @ fit.sigma_v @ q_x
    else:
        sigma_req = fit.sigma_v
    sigma_req = (sigma_req + sigma_req.T) / 2.0
    fit_req = dataclasses.replace(fit, theta=theta_req, sigma_v=sigma_req)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z_ilr, v_z = _covariate_transform(z, schema, contrasts_z)
        if schema.response_compositional:
            x_ilr = ilr(x_comp, contrast_x)
        else:
            x_ilr = x
    data_ilr = Dataset(x_ilr, z_ilr)

    if schema.response_compositional:
        theta_clr = v_z @ theta_req @ contrast_x.T
        sigma_clr = contrast_x @ sigma_req @ contrast_x.T
        x_clr = clr(x_comp)
        inv_root_clr = contrast_x @ sym_inv_sqrt(sigma_req, "sigma_ilr") @ contrast_x.T
    else:
        theta_clr = v_z @ theta_req
        sigma_clr = sigma_req
        x_clr = x
        inv_root_clr = sym_inv_sqrt(sigma_req, "sigma_v")
    z_clr = _covariate_clr(z, schema)
    residuals_clr = bundle.half @ (x_clr - z_clr @ theta_clr) @ inv_root_clr

    return CompositionalFit(
        fit=fit_req,
        schema=schema,
        contrast_x=contrast_x,
        contrasts_z=contrasts_z,
        v_z=v_z,
        theta_clr=theta_clr,
        sigma_clr=(sigma_clr + sigma_clr.T) / 2.0,
        diagnostics=diag,
        node_scores=n_scores,
        node_flags=n_flags,
        residuals_clr=residuals_clr,
        dataset_ilr=data_ilr,
        level=level,
    )


# ---------------------------------------------------------------------------
# synthetic replica of the election analysis shape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicaData:
    """Synthetic dataset shaped like the canton-level election analysis:
    95 nodes on a planar adjacency graph, 3-part compositional responses,
    19 covariates of which three blocks are compositional."""

    x: np.ndarray
    z: np.ndarray
    schema: CodaSchema
    graph: WeightedGraph


def _delaunay_graph(pts: np.ndarray) -> WeightedGraph:
    tri = Delaunay(pts)
    pairs = set()
    for simplex in tri.simplices:
        a, b, c = (int(v) for v in simplex)
        pairs.update({
            (min(a, b), max(a, b)),
            (min(a, c), max(a, c)),
            (min(b, c), max(b, c)),
        })
    return WeightedGraph.from_edge_list(
        pts.shape[0], [(i, j, 1.0) for i, j in sorted(pairs)]
    )


def make_election_replica(seed: int = 9, n: int = 95) -> ReplicaData:
    """Generate the synthetic replica dataset.

    Adjacency comes from a Delaunay triangulation of random plane points
    (connected by construction, unit weights). Covariates: three Dirichlet
    compositional groups of sizes 3, 5 and 3 plus 8 scalar columns, for 19
    raw columns; responses are 3-part compositions from the graph model in
    ilr coordinates.

    The default seed picks a draw whose clean fit flags no edges and no
    nodes at the default level, so planted anomalies stand out against a
    quiet background; node scores on a spatial graph are correlated enough
    that a fair share of draws carry a few false alarms.
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    graph = _delaunay_graph(pts)
    bundle = laplacian_bundle(graph)

    age = rng.dirichlet(np.full(3, 6.0), size=n)
    employment = rng.dirichlet(np.full(5, 6.0), size=n)
    education = rng.dirichlet(np.full(3, 6.0), size=n)
    scalars = rng.uniform(-1.0, 1.0, size=(n, 8))
    z = np.hstack([age, employment, education, scalars])
    schema = CodaSchema(
        response_compositional=True,
        groups={
            "age": [0, 1, 2],
            "employment": [3, 4, 5, 6, 7],
            "education": [8, 9, 10],
        },
    )

    contrasts = {name: helmert_contrast(len(cols))
                 for name, cols in schema.groups.items()}
    z_ilr, _ = _covariate_transform(z, schema, contrasts)
    q_ilr = z_ilr.shape[1]
    theta = rng.normal(0.0, 0.25, size=(q_ilr, 2))
    a = rng.standard_normal((2, 2))
    _, u = np.linalg.eigh(a.T @ a)
    sigma = u @ np.diag(rng.uniform(0.05, 0.15, size=2)) @ u.T
    params = ModelParams(theta, (sigma + sigma.T) / 2.0)
    noise = rng.standard_normal((n, 2))
    x_ilr = compose_sample(params, bundle, z_ilr, noise)
    x = ilr_inv(x_ilr, helmert_contrast(3))
    return ReplicaData(x=x, z=z, schema=schema, graph=graph)


def plant_compositional_outlier(x, edge: tuple[int, int],
                                strength: float = 3.0) -> np.ndarray:
    """Perturb the two endpoint compositions of an edge in opposite log-ratio
    directions, making the edge (and the endpoints' other edges) outlying."""
    x = closure(x)
    p = x.shape[1]
    direction = np.zeros(p)
    direction[0] = 1.0
    direction[-1] = -1.0
    direction /= np.linalg.norm(direction)
    shift = np.exp(strength * direction)
    i, j = int(edge[0]), int(edge[1])
    out = x.copy()
    out[i] = perturb(x[i], shift)
    out[j] = perturb(x[j], 1.0 / shift)
    return out
