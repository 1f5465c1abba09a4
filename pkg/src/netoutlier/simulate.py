"""Simulation benchmark: data generation, corruption, scoring, study driver.

One replication draws a random connected weighted graph, simulates the
matrix-normal model on it, corrupts a fraction of the nodes by swapping
extreme observation rows and randomizing their covariates, then fits three
estimators:

* ``edgemcd``  - the trimmed edgewise estimator of this package,
* ``mcd``      - a graph-blind robust baseline: LTS-style regression on the
                 edgewise rows followed by a plain deterministic-start MCD of
                 the residual rows,
* ``std``      - the maximum-likelihood estimator.

Each fit is scored by an F-score on recovered outlier edges, a KL-type
divergence between fitted and true parameters, and the relative coefficient
error.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .estimator import (
    McdConfig,
    _identifiable_columns,
    _robust_covariance,
    build_edgewise_design,
    default_h,
    edgewise_mcd_fit,
    min_h,
    mle_fit,
)
from .exceptions import (
    DegenerateEstimateError,
    DimensionMismatchError,
    DisconnectedGraphError,
)
from .graph import LaplacianBundle, WeightedGraph, laplacian_bundle
from .model import (
    Dataset,
    ModelParams,
    compose_sample,
    edge_deltas,
    sym_inv,
)
from .robust import chi2_quantile

__all__ = [
    "SimConfig",
    "ScoreRow",
    "Scores",
    "RepFailure",
    "StudyResult",
    "METHODS",
    "GRAPH_TYPES",
    "gen_covariance",
    "gen_graph",
    "gen_dataset",
    "corrupt",
    "score",
    "run_study",
    "write_scores_csv",
    "write_medians_csv",
]

METHODS = ("edgemcd", "mcd", "std")
GRAPH_TYPES = ("knn", "erdos", "scalefree")

_MAX_GRAPH_ATTEMPTS = 100
_KNN_K = 5
_ERDOS_P = 0.05


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell: graph/model shape plus replication control."""

    graph_type: str
    n: int
    p: int
    zeta: float
    reps: int
    seed: int
    q: int = 7
    h_fraction: float = 0.75

    def __post_init__(self):
        if self.graph_type not in GRAPH_TYPES:
            raise ValueError(
                f"graph_type must be one of {GRAPH_TYPES}, got {self.graph_type!r}"
            )
        if not 0.0 <= self.zeta < 1.0:
            raise ValueError(f"zeta must be in [0, 1), got {self.zeta}")
        if self.reps < 1 or self.n < 3 or self.p < 1 or self.q < 1:
            raise ValueError("reps, n, p, q must be positive (n >= 3)")
        if not 0.5 <= self.h_fraction <= 1.0:
            raise ValueError("h_fraction must be in [0.5, 1]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class Scores:
    """Raw scores of one fit against the truth."""

    fsc: float
    kl: float
    rd: float
    fsc_degenerate: bool


@dataclass(frozen=True)
class ScoreRow:
    """One CSV row of the study output."""

    graph_type: str
    n: int
    p: int
    q: int
    zeta: float
    rep: int
    method: str
    fsc: float
    kl: float
    rd: float
    fsc_degenerate: bool = False


@dataclass(frozen=True)
class RepFailure:
    """A replication/method pair that raised instead of scoring."""

    rep: int
    method: str
    message: str


@dataclass(frozen=True)
class StudyResult:
    rows: tuple
    failures: tuple
    config: SimConfig


def gen_covariance(p: int, rng: np.random.Generator) -> np.ndarray:
    """Random p x p covariance U diag(sigma) U' with U the eigenvectors of
    H'H for H iid standard normal and sigma_k uniform on [1, 50]."""
    h = rng.standard_normal((p, p))
    _, u = np.linalg.eigh(h.T @ h)
    sig = rng.uniform(1.0, 50.0, size=p)
    cov = u @ np.diag(sig) @ u.T
    return (cov + cov.T) / 2.0


def _connected(graph: WeightedGraph) -> bool:
    if graph.n == 1:
        return True
    adj = [[] for _ in range(graph.n)]
    for i, j in graph.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = np.zeros(graph.n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    return bool(seen.all())


def _knn_structure(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    pts = rng.random((n, 2))
    sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(sq, np.inf)
    pairs = set()
    for i in range(n):
        for j in np.argsort(sq[i], kind="stable")[:_KNN_K]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return sorted(pairs)


def _erdos_structure(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    iu = np.triu_indices(n, 1)
    hit = rng.random(iu[0].shape[0]) < _ERDOS_P
    return list(zip(iu[0][hit].tolist(), iu[1][hit].tolist()))


def _scalefree_structure(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential-attachment growth from a single seed node; the second
    node attaches once, every later node attaches to 2 distinct targets with
    probability proportional to degree. Edge count: 2(n - 2) + 1."""
    pairs = [(0, 1)]
    targets = [0, 1]  # one entry per unit of degree
    for t in range(2, n):
        chosen: set[int] = set()
        while len(chosen) < 2:
            chosen.add(targets[int(rng.integers(len(targets)))])
        for c in sorted(chosen):
            pairs.append((c, t))
            targets.extend((c, t))
    return sorted(pairs)


def gen_graph(graph_type: str, n: int, rng: np.random.Generator) -> WeightedGraph:
    """Random connected graph of the given family with U[0, 1] edge weights.

    The structure is resampled up to 100 times until connected; weights are
    drawn only for the accepted structure.
    """
    builders = {
        "knn": _knn_structure,
        "erdos": _erdos_structure,
        "scalefree": _scalefree_structure,
    }
    if graph_type not in builders:
        raise ValueError(f"unknown graph_type {graph_type!r}")
    build = builders[graph_type]
    for _ in range(_MAX_GRAPH_ATTEMPTS):
        pairs = build(n, rng)
        if not pairs:
            continue
        probe = WeightedGraph.from_edge_list(n, [(i, j, 1.0) for i, j in pairs])
        if _connected(probe):
            w = rng.uniform(0.0, 1.0, size=len(pairs))
            w[w == 0.0] = np.finfo(float).tiny  # weights must be > 0
            return WeightedGraph(
                probe.n, probe.edges, w
            )
    raise DisconnectedGraphError(
        f"no connected {graph_type!r} graph with n={n} in "
        f"{_MAX_GRAPH_ATTEMPTS} attempts"
    )


def gen_dataset(graph: WeightedGraph, bundle: LaplacianBundle, p: int, q: int,
                rng: np.random.Generator) -> tuple[Dataset, ModelParams]:
    """Draw (Sigma_V, Z, theta) and one sample X from the model.

    Draw order is fixed (covariance, covariates, coefficients, noise) so a
    given generator state always yields the same dataset.
    """
    sigma_v = gen_covariance(p, rng)
    z = rng.uniform(-1.0, 1.0, size=(graph.n, q))
    theta = rng.standard_normal((q, p))
    params = ModelParams(theta, sigma_v)
    noise = rng.standard_normal((graph.n, p))
    x = compose_sample(params, bundle, z, noise)
    return Dataset(x, z), params


def corrupt(data: Dataset, params: ModelParams, graph: WeightedGraph,
            zeta: float, rng: np.random.Generator
            ) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Swap extreme observation rows and randomize their covariates.

    Nodes are ordered by the projection of X onto the leading eigenvector of
    Sigma_V; the k lowest rows are swapped with the k highest, with k maximal
    subject to the number of edges touching a swapped node not exceeding
    zeta * m. Swapped nodes then get fresh covariates uniform on [-10, 10].

    Returns
    -------
    (Dataset, corrupted_nodes, affected_edge_indices)
        ``corrupted_nodes`` sorted node ids; ``affected_edge_indices``
        indices into the graph's edge list. Both empty when zeta = 0.
    """
    if not 0.0 <= zeta < 1.0:
        raise ValueError(f"zeta must be in [0, 1), got {zeta}")
    if graph.n != data.n:
        raise DimensionMismatchError("graph and data disagree on n")
    m = graph.n_edges
    budget = zeta * m
    evals, evecs = np.linalg.eigh(params.sigma_v)
    lead = evecs[:, -1]
    order = np.argsort(data.x @ lead, kind="stable")
    n = data.n
    incident = np.zeros(m, dtype=bool)
    in_set = np.zeros(n, dtype=bool)
    k = 0
    for t in range(n // 2):
        lo, hi = int(order[t]), int(order[n - 1 - t])
        if lo == hi:
            break
        trial = in_set.copy()
        trial[lo] = trial[hi] = True
        touched = trial[graph.edges[:, 0]] | trial[graph.edges[:, 1]]
        if touched.sum() > budget:
            break
        in_set = trial
        incident = touched
        k = t + 1
    if k == 0:
        return data, np.empty(0, np.int64), np.empty(0, np.int64)
    x = data.x.copy()
    z = data.z.copy()
    for t in range(k):
        lo, hi = int(order[t]), int(order[n - 1 - t])
        x[[lo, hi]] = x[[hi, lo]]
    nodes = np.flatnonzero(in_set)
    z[nodes] = rng.uniform(-10.0, 10.0, size=(nodes.size, data.q))
    return Dataset(x, z), nodes.astype(np.int64), np.flatnonzero(incident)


def score(fit: ModelParams, truth: ModelParams, data: Dataset,
          graph: WeightedGraph, bundle: LaplacianBundle,
          level: float = 0.95) -> Scores:
    """Score one fit against the truth on the analyzed dataset.

    The outlier F-score compares the edges flagged under the fitted
    parameters with those flagged under the true ones, both at the
    chi-squared ``level`` cutoff; an empty set on either side yields 0 with
    the degenerate flag set. The KL-type divergence combines the covariance
    terms with the mean-shift term averaged over the q covariates; the
    relative coefficient error is in Frobenius norm.
    """
    p = truth.p
    cutoff = chi2_quantile(p, level)
    true_out = edge_deltas(data, truth, bundle, graph).standardized > cutoff
    fit_out = edge_deltas(data, fit, bundle, graph).standardized > cutoff
    inter = float(np.sum(true_out & fit_out))
    n_true = float(true_out.sum())
    n_fit = float(fit_out.sum())
    degenerate = n_true == 0 or n_fit == 0
    if degenerate:
        fsc = 0.0
    else:
        pr = inter / n_true
        rec = inter / n_fit
        fsc = 0.0 if pr + rec == 0 else 2.0 * pr * rec / (pr + rec)

    sig_inv = sym_inv(truth.sigma_v, "true sigma_v")
    sign_f, ld_f = np.linalg.slogdet(fit.sigma_v)
    if sign_f <= 0:
        raise DegenerateEstimateError("fitted covariance is not positive definite")
    _, ld_t = np.linalg.slogdet(truth.sigma_v)
    mean_shift = data.z @ (truth.theta - fit.theta)
    mean_term = float(
        _kernels.row_quadforms(mean_shift, sig_inv).sum()
    ) / truth.q
    # Gaussian KL of the fitted law against the true one; the log-determinant
    # term carries the sign that keeps the whole expression nonnegative.
    kl = 0.5 * (
        float(np.trace(sig_inv @ fit.sigma_v)) - p + (ld_t - ld_f) + mean_term
    )

    denom = float(np.linalg.norm(truth.theta))
    if denom == 0.0:
        raise ValueError("relative coefficient error undefined for theta = 0")
    rd = float(np.linalg.norm(fit.theta - truth.theta)) / denom
    return Scores(fsc=float(fsc), kl=float(kl), rd=rd, fsc_degenerate=degenerate)


# ---------------------------------------------------------------------------
# graph-blind robust baseline ("mcd" arm)
# ---------------------------------------------------------------------------

def _lts_theta(design, h: int, max_iter: int = 100) -> np.ndarray:
    """LTS-style coefficient fit on the edgewise rows: iterate least squares
    on the h rows with smallest squared residual norm, from an LS start."""
    mask = _identifiable_columns(design)
    z_red = design.z[:, mask]
    if not mask.any():
        return np.zeros((design.q, design.p))
    theta_red, *_ = np.linalg.lstsq(z_red, design.x, rcond=None)
    prev = None
    for _ in range(max_iter):
        resid = design.x - z_red @ theta_red
        rss = np.einsum("ij,ij->i", resid, resid)
        subset = np.sort(np.argsort(rss, kind="stable")[:h])
        if prev is not None and np.array_equal(subset, prev):
            break
        prev = subset
        theta_red, *_ = np.linalg.lstsq(z_red[subset], design.x[subset],
                                        rcond=None)
    theta = np.zeros((design.q, design.p))
    theta[mask] = theta_red
    return theta


def _plain_mcd_cov(rows: np.ndarray, h: int, max_iter: int = 100) -> np.ndarray:
    """Deterministic-start MCD scatter of iid-style rows about the origin,
    with the classical 1/h subset covariance, one reweighting pass at the
    0.975 chi-squared cutoff and a median rescale."""
    m, p = rows.shape
    candidates = []
    for method in ("tanh", "rank", "normal-scores", "spatial-sign"):
        try:
            sigma = _robust_covariance(rows, method)
        except DegenerateEstimateError:
            continue
        evals = np.linalg.eigvalsh(sigma)
        if evals[0] <= 1e-12 * max(abs(evals[-1]), 1.0):
            continue
        candidates.append(sigma)
    if not candidates:
        raise DegenerateEstimateError("no usable start for the MCD baseline")

    def concentrate(sigma):
        prev = None
        obj = np.inf
        for _ in range(max_iter):
            dist = _kernels.row_quadforms(rows, sym_inv(sigma, "scatter"))
            subset = np.sort(np.argsort(dist, kind="stable")[:h])
            if prev is not None and np.array_equal(subset, prev):
                break
            prev = subset
            sel = rows[subset]
            sigma = sel.T @ sel / h
            sign, logdet = np.linalg.slogdet(sigma)
            if sign <= 0:
                raise DegenerateEstimateError("singular MCD subset scatter")
            dist = _kernels.row_quadforms(rows, sym_inv(sigma, "scatter"))
            obj = float(np.partition(dist, h - 1)[:h].sum() + h * logdet)
        return sigma, obj

    best_sigma, best_obj = None, np.inf
    for sigma0 in candidates:
        try:
            sigma, obj = concentrate(sigma0)
        except DegenerateEstimateError:
            continue
        if obj < best_obj:
            best_sigma, best_obj = sigma, obj
    if best_sigma is None:
        raise DegenerateEstimateError("MCD baseline failed to concentrate")
    dist = _kernels.row_quadforms(rows, sym_inv(best_sigma, "scatter"))
    med = float(np.median(dist))
    if med > 0:
        # same median calibration as the edgewise fit: the 1/h subset scatter
        # is biased low, which would turn the 0.975 cut into a harsher one
        best_sigma = best_sigma * (med / chi2_quantile(p, 0.5))
        dist = dist / (med / chi2_quantile(p, 0.5))
    keep = dist <= chi2_quantile(p, 0.975)
    if keep.sum() > p:
        sel = rows[keep]
        best_sigma = sel.T @ sel / keep.sum()
    dist = _kernels.row_quadforms(rows, sym_inv(best_sigma, "scatter"))
    med = float(np.median(dist))
    if med > 0:
        best_sigma = best_sigma * (med / chi2_quantile(p, 0.5))
    return best_sigma


def _mcd_arm(data: Dataset, graph: WeightedGraph, h: int) -> ModelParams:
    design = build_edgewise_design(data, graph)
    theta = _lts_theta(design, h)
    resid = design.x - design.z @ theta
    sigma = _plain_mcd_cov(resid, h)
    return ModelParams(theta, sigma)


# ---------------------------------------------------------------------------
# study driver
# ---------------------------------------------------------------------------

def _fit_method(method: str, data: Dataset, graph: WeightedGraph,
                bundle: LaplacianBundle, h: int) -> ModelParams:
    if method == "edgemcd":
        fit = edgewise_mcd_fit(data, graph, bundle, McdConfig(h=h))
        return ModelParams(fit.theta, fit.sigma_v)
    if method == "mcd":
        return _mcd_arm(data, graph, h)
    if method == "std":
        return mle_fit(data, graph, bundle)
    raise ValueError(f"unknown method {method!r}")


def _run_rep(config: SimConfig, rep: int) -> tuple[list, list]:
    rng = np.random.default_rng([config.seed, rep])
    graph = gen_graph(config.graph_type, config.n, rng)
    bundle = laplacian_bundle(graph)
    data, truth = gen_dataset(graph, bundle, config.p, config.q, rng)
    data_c, _, _ = corrupt(data, truth, graph, config.zeta, rng)
    m = graph.n_edges
    h = min(max(int(np.ceil(config.h_fraction * m)), min_h(m, config.p)), m)
    rows, failures = [], []
    for method in METHODS:
        try:
            fit = _fit_method(method, data_c, graph, bundle, h)
            sc = score(fit, truth, data_c, graph, bundle)
        except Exception as exc:  # noqa: BLE001 - record, do not kill the study
            failures.append(RepFailure(rep=rep, method=method, message=str(exc)))
            continue
        rows.append(ScoreRow(
            graph_type=config.graph_type, n=config.n, p=config.p, q=config.q,
            zeta=config.zeta, rep=rep, method=method,
            fsc=sc.fsc, kl=sc.kl, rd=sc.rd, fsc_degenerate=sc.fsc_degenerate,
        ))
    return rows, failures


def run_study(config: SimConfig, n_jobs: int = 1) -> StudyResult:
    """Run all replications of one simulation cell.

    Replication r uses its own generator seeded by (config.seed, r), so
    results are independent of execution order and ``n_jobs``; rows come
    back sorted by (rep, method). Failures of individual fits are recorded,
    not raised.
    """
    reps = range(config.reps)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(lambda r: _run_rep(config, r), reps))
    else:
        outcomes = [_run_rep(config, r) for r in reps]
    rows: list[ScoreRow] = []
    failures: list[RepFailure] = []
    for rep_rows, rep_failures in outcomes:
        rows.extend(rep_rows)
        failures.extend(rep_failures)
    return StudyResult(rows=tuple(rows), failures=tuple(failures), config=config)


def write_scores_csv(path, rows) -> None:
    """Long-format scores CSV, one row per (rep, method)."""
    with open(path, "w", newline="") as fh:
        fh.write("graph_type,n,p,q,zeta,rep,method,fsc,kl,rd\n")
        for r in rows:
            fh.write(
                f"{r.graph_type},{r.n},{r.p},{r.q},{r.zeta:.17g},{r.rep},"
                f"{r.method},{r.fsc:.17g},{r.kl:.17g},{r.rd:.17g}\n"
            )


def write_medians_csv(path, rows) -> None:
    """Per-cell medians of the three scores, ready for plotting."""
    cells: dict[tuple, list] = {}
    for r in rows:
        cells.setdefault(
            (r.graph_type, r.n, r.p, r.q, r.zeta, r.method), []
        ).append(r)
    with open(path, "w", newline="") as fh:
        fh.write("graph_type,n,p,q,zeta,method,med_fsc,med_kl,med_rd\n")
        for key in sorted(cells, key=str):
            graph_type, n, p, q, zeta, method = key
            grp = cells[key]
            med = lambda vals: float(np.median(np.asarray(vals)))  # noqa: E731
            fh.write(
                f"{graph_type},{n},{p},{q},{zeta:.17g},{method},"
                f"{med([g.fsc for g in grp]):.17g},"
                f"{med([g.kl for g in grp]):.17g},"
                f"{med([g.rd for g in grp]):.17g}\n"
            )
