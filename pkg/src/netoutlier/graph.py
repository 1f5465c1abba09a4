"""Weighted graphs, Laplacians and their spectral companions.

The estimators in this package index observations by the nodes of a connected,
undirected, positively weighted graph. This module owns the graph container,
the construction helpers (k-nearest-neighbour and distance-kernel graphs), and
the Laplacian bundle: L together with its Moore-Penrose pseudo-inverse, the
symmetric square roots of both, the rank, and the weighted incidence factor M
with M'M = L.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatchError, ParseError

__all__ = [
    "WeightedGraph",
    "LaplacianBundle",
    "build_knn_graph",
    "build_kernel_graph",
    "laplacian_bundle",
    "quadratic_form_identity_check",
    "read_edge_csv",
    "write_edge_csv",
    "read_coords_csv",
]


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected graph with strictly positive edge weights.

    Attributes
    ----------
    n : int
        Number of nodes, labelled 0 .. n-1.
    edges : (m, 2) ndarray of int64
        One row per edge with i < j, sorted lexicographically, no duplicates.
    weights : (m,) ndarray of float64
        Strictly positive finite weight per edge, aligned with ``edges``.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", _frozen_array(self.edges, np.int64))
        object.__setattr__(self, "weights",
                           _frozen_array(self.weights, np.float64))
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        e, w = self.edges, self.weights
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError("edges must be an (m, 2) array")
        if w.shape != (e.shape[0],):
            raise DimensionMismatchError(
                f"{e.shape[0]} edges but {w.shape[0]} weights"
            )
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if not np.all(e[:, 0] < e[:, 1]):
                raise ValueError("edges must satisfy i < j")
            order = np.lexsort((e[:, 1], e[:, 0]))
            if not np.array_equal(order, np.arange(e.shape[0])):
                raise ValueError("edges must be sorted lexicographically")
            if np.any(np.all(e[1:] == e[:-1], axis=1)):
                raise ValueError("duplicate edge")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and > 0")

    @classmethod
    def from_edge_list(cls, n: int, edge_list) -> "WeightedGraph":
        """Build a graph from an iterable of (i, j, w) triples.

        Endpoints may come in either order; rows are canonicalized to i < j
        and sorted. Self loops and duplicate edges raise ``ValueError``.
        """
        rows = []
        for i, j, w in edge_list:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self loop at node {i}")
            rows.append((min(i, j), max(i, j), float(w)))
        rows.sort()
        if not rows:
            return cls(n, np.empty((0, 2), np.int64), np.empty(0))
        edges = np.array([(r[0], r[1]) for r in rows], np.int64)
        weights = np.array([r[2] for r in rows])
        return cls(n, edges, weights)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def weight_matrix(self) -> np.ndarray:
        """Dense symmetric weight matrix W with zero diagonal."""
        w_mat = np.zeros((self.n, self.n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        w_mat[i, j] = self.weights
        w_mat[j, i] = self.weights
        return w_mat

    def degrees(self) -> np.ndarray:
        """Weighted degree of each node."""
        return self.weight_matrix().sum(axis=1)


@dataclass(frozen=True)
class LaplacianBundle:
    """Laplacian L = D - W with its spectral companions.

    Attributes
    ----------
    laplacian : (n, n) ndarray
        L itself.
    pinv : (n, n) ndarray
        Moore-Penrose pseudo-inverse L+.
    pinv_half : (n, n) ndarray
        Symmetric square root of L+.
    half : (n, n) ndarray
        Symmetric square root of L.
    rank : int
        Number of eigenvalues kept as nonzero.
    incidence : (m, n) ndarray
        Weighted incidence M, one row per edge (i, j) with +sqrt(w) in
        column i and -sqrt(w) in column j, so that M'M = L.
    """

    laplacian: np.ndarray
    pinv: np.ndarray
    pinv_half: np.ndarray
    half: np.ndarray
    rank: int
    incidence: np.ndarray

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    @property
    def n_components(self) -> int:
        """Number of connected components (dim of the Laplacian null space)."""
        return self.n - self.rank

    @property
    def is_connected(self) -> bool:
        return self.n_components == 1


def laplacian_bundle(graph: WeightedGraph, tol: float = 1e-10) -> LaplacianBundle:
    """Eigendecompose the graph Laplacian and assemble its companions.

    Eigenvalues at or below ``tol`` times the largest eigenvalue are treated
    as zero. All outputs are exactly symmetric (symmetrized after
    reconstruction to remove roundoff skew).

    Parameters
    ----------
    graph : WeightedGraph
    tol : float
        Relative eigenvalue cutoff separating the null space from the rest.

    Returns
    -------
    LaplacianBundle
    """
    w_mat = graph.weight_matrix()
    lap = np.diag(w_mat.sum(axis=1)) - w_mat
    evals, evecs = np.linalg.eigh(lap)
    cutoff = tol * max(evals.max(initial=0.0), 0.0)
    keep = evals > cutoff
    vee = evecs[:, keep]
    lam = evals[keep]

    def _sym(a):
        return (a + a.T) / 2.0

    pinv = _sym(vee @ np.diag(1.0 / lam) @ vee.T) if lam.size else np.zeros_like(lap)
    pinv_half = _sym(vee @ np.diag(lam ** -0.5) @ vee.T) if lam.size else np.zeros_like(lap)
    half = _sym(vee @ np.diag(np.sqrt(lam)) @ vee.T) if lam.size else np.zeros_like(lap)

    m = graph.n_edges
    incidence = np.zeros((m, graph.n))
    root_w = np.sqrt(graph.weights)
    rows = np.arange(m)
    incidence[rows, graph.edges[:, 0]] = root_w
    incidence[rows, graph.edges[:, 1]] = -root_w

    return LaplacianBundle(
        laplacian=lap,
        pinv=pinv,
        pinv_half=pinv_half,
        half=half,
        rank=int(keep.sum()),
        incidence=incidence,
    )


def build_knn_graph(coords, k: int) -> WeightedGraph:
    """k-nearest-neighbour graph with unit weights, symmetrized by union.

    Each node is connected to its ``k`` nearest neighbours in Euclidean
    distance (ties broken by lower node index); an undirected edge exists
    when either endpoint selects the other.

    Parameters
    ----------
    coords : (n, d) array_like
        Point coordinates.
    k : int
        Number of neighbours per node, 1 <= k <= n - 1.

    Returns
    -------
    WeightedGraph
        All weights equal to 1.
    """
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2:
        raise ValueError("coords must be a 2-d array")
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise ValueError(f"need at least k+1 = {k + 1} points, got {n}")
    sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(sq, np.inf)
    pairs = set()
    for i in range(n):
        # stable sort keeps equal distances in index order
        nearest = np.argsort(sq[i], kind="stable")[:k]
        for j in nearest:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return WeightedGraph.from_edge_list(n, [(i, j, 1.0) for i, j in sorted(pairs)])


def build_kernel_graph(coords, kernel: str = "gaussian",
                       sigma: float = 1.0) -> WeightedGraph:
    """Distance-kernel graph over all point pairs.

    ``gaussian`` connects every pair with weight exp(-d^2 / (2 sigma^2));
    ``box`` connects pairs with d <= sigma at weight 1.

    Parameters
    ----------
    coords : (n, d) array_like
    kernel : {"gaussian", "box"}
    sigma : float
        Bandwidth (gaussian) or radius (box); must be > 0.

    Returns
    -------
    WeightedGraph
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if kernel not in ("gaussian", "box"):
        raise ValueError(f"unknown kernel {kernel!r}")
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2:
        raise ValueError("coords must be a 2-d array")
    n = pts.shape[0]
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            d2 = float(((pts[i] - pts[j]) ** 2).sum())
            if kernel == "gaussian":
                rows.append((i, j, float(np.exp(-d2 / (2.0 * sigma ** 2)))))
            elif d2 <= sigma ** 2:
                rows.append((i, j, 1.0))
    return WeightedGraph.from_edge_list(n, rows)


def quadratic_form_identity_check(graph: WeightedGraph, y) -> tuple[float, float]:
    """Evaluate y'Ly twice: through L and through the weighted edge sum.

    Returns the pair (y'Ly, sum over edges of (y_i - y_j)^2 w_ij), computed
    by independent routes; they agree to floating roundoff for any y.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (graph.n,):
        raise DimensionMismatchError(
            f"y has shape {y.shape}, expected ({graph.n},)"
        )
    w_mat = graph.weight_matrix()
    lap = np.diag(w_mat.sum(axis=1)) - w_mat
    via_l = float(y @ lap @ y)
    diffs = y[graph.edges[:, 0]] - y[graph.edges[:, 1]]
    via_edges = float(np.sum(diffs * diffs * graph.weights))
    return via_l, via_edges


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_edge_csv(path, n: int | None = None) -> WeightedGraph:
    """Read an edge list CSV with header ``i,j,w`` (0-based endpoints).

    ``n`` fixes the node count; when omitted it is inferred as the largest
    endpoint plus one.
    """
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header[:3]] != ["i", "j", "w"]:
                raise ParseError(f"{path}: expected header 'i,j,w'")
            for lineno, rec in enumerate(reader, start=2):
                if not rec or (len(rec) == 1 and not rec[0].strip()):
                    continue
                if len(rec) != 3:
                    raise ParseError(f"{path}:{lineno}: expected 3 fields")
                try:
                    rows.append((int(rec[0]), int(rec[1]), float(rec[2])))
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no edges")
    inferred = max(max(i, j) for i, j, _ in rows) + 1
    return WeightedGraph.from_edge_list(n if n is not None else inferred, rows)


def write_edge_csv(path, graph: WeightedGraph) -> None:
    """Write the edge list as ``i,j,w`` with full float precision."""
    with open(path, "w", newline="") as fh:
        fh.write("i,j,w\n")
        for (i, j), w in zip(graph.edges, graph.weights):
            fh.write(f"{i},{j},{w:.17g}\n")


def read_coords_csv(path) -> np.ndarray:
    """Read point coordinates from a CSV with header ``x1,...,xd``."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or not all(
                c.strip() == f"x{k + 1}" for k, c in enumerate(header)
            ):
                raise ParseError(f"{path}: expected header 'x1,...,xd'")
            d = len(header)
            out = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec or (len(rec) == 1 and not rec[0].strip()):
                    continue
                if len(rec) != d:
                    raise ParseError(f"{path}:{lineno}: expected {d} fields")
                try:
                    out.append([float(v) for v in rec])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not out:
        raise ParseError(f"{path}: no rows")
    return np.asarray(out)
