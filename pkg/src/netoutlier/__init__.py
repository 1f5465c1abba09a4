"""Robust edgewise outlier detection for network-indexed multivariate data.

Observations live on the nodes of a weighted graph and are modelled jointly:
rows are coupled through the graph Laplacian, columns through an unknown
covariance. Because the Laplacian factorizes over edges, the Mahalanobis
distance of the whole data matrix is a sum of per-edge terms, and a trimmed
(MCD-style) fit of those edge terms yields estimates that tolerate a fraction
of contaminated edges and per-edge outlier scores with a chi-squared
reference distribution.
"""

from .coda import (
    CodaSchema,
    CompositionalFit,
    ReplicaData,
    aitchison_distance,
    aitchison_inner,
    closure,
    clr,
    clr_inv,
    clr_precision,
    fit_compositional,
    helmert_contrast,
    ilr,
    ilr_inv,
    make_election_replica,
    perturb,
    plant_compositional_outlier,
    power,
    random_contrast,
    validate_contrast,
)
from .estimator import (
    EdgewiseDesign,
    FitResult,
    McdConfig,
    build_edgewise_design,
    c_step,
    default_h,
    deterministic_starts,
    edgewise_mcd_fit,
    min_h,
    mle_fit,
    mle_fit_design,
    trimmed_objective,
)
from .exceptions import (
    DegenerateColumnError,
    DegenerateEstimateError,
    DimensionMismatchError,
    DisconnectedGraphError,
    NetOutlierError,
    NotPositiveDefiniteError,
    ParseError,
    RankDeficiencyError,
)
from .graph import (
    LaplacianBundle,
    WeightedGraph,
    build_kernel_graph,
    build_knn_graph,
    laplacian_bundle,
    quadratic_form_identity_check,
    read_coords_csv,
    read_edge_csv,
    write_edge_csv,
)
from .model import (
    Dataset,
    EdgeDiagnostics,
    ModelParams,
    compose_sample,
    edge_deltas,
    edge_variance_factors,
    flag_edge_outliers,
    flag_node_outliers,
    node_outlier_scores,
    sample_matrix_normal,
    standardized_residuals,
    total_mahalanobis,
)
from .robust import chi2_quantile, qn_scale, qn_scales, seed_correlation, svd_adjust
from .simulate import (
    GRAPH_TYPES,
    METHODS,
    Scores,
    SimConfig,
    StudyResult,
    corrupt,
    gen_covariance,
    gen_dataset,
    gen_graph,
    run_study,
    score,
    write_medians_csv,
    write_scores_csv,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "NetOutlierError",
    "ParseError",
    "DimensionMismatchError",
    "DisconnectedGraphError",
    "DegenerateEstimateError",
    "NotPositiveDefiniteError",
    "RankDeficiencyError",
    "DegenerateColumnError",
    # graph
    "WeightedGraph",
    "LaplacianBundle",
    "laplacian_bundle",
    "build_knn_graph",
    "build_kernel_graph",
    "quadratic_form_identity_check",
    "read_edge_csv",
    "write_edge_csv",
    "read_coords_csv",
    # model
    "ModelParams",
    "Dataset",
    "EdgeDiagnostics",
    "compose_sample",
    "sample_matrix_normal",
    "total_mahalanobis",
    "edge_variance_factors",
    "edge_deltas",
    "flag_edge_outliers",
    "node_outlier_scores",
    "flag_node_outliers",
    "standardized_residuals",
    # robust helpers
    "qn_scale",
    "qn_scales",
    "chi2_quantile",
    "seed_correlation",
    "svd_adjust",
    # estimator
    "EdgewiseDesign",
    "McdConfig",
    "FitResult",
    "build_edgewise_design",
    "min_h",
    "default_h",
    "mle_fit",
    "mle_fit_design",
    "trimmed_objective",
    "c_step",
    "deterministic_starts",
    "edgewise_mcd_fit",
    # simulation
    "METHODS",
    "GRAPH_TYPES",
    "SimConfig",
    "Scores",
    "StudyResult",
    "gen_covariance",
    "gen_graph",
    "gen_dataset",
    "corrupt",
    "score",
    "run_study",
    "write_scores_csv",
    "write_medians_csv",
    # compositional
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
