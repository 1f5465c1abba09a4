"""Batch command line interface.

Three subcommands:

``detect``
    Fit the robust edgewise estimator to a data/edge-list pair and write
    edge and node outlier reports, fitted parameters, standardized
    residuals, and a run manifest.
``sample``
    Draw one dataset from a fitted or hand-written model on a given graph.
``simulate``
    Run the simulation benchmark from a JSON config and write score tables.

Exit codes: 0 success, 2 unparseable input (bad CSV/JSON, unknown flags),
3 dimension mismatches or invalid values (missing/non-finite entries),
4 disconnected graph, 5 degenerate estimate.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from ._kernels import backend_name
from .coda import DEFAULT_CODA_LEVEL, CodaSchema, fit_compositional
from .estimator import McdConfig, edgewise_mcd_fit, min_h
from .exceptions import (
    DegenerateEstimateError,
    DimensionMismatchError,
    DisconnectedGraphError,
    ParseError,
)
from .graph import WeightedGraph, laplacian_bundle, read_edge_csv
from .model import (
    Dataset,
    ModelParams,
    edge_deltas,
    flag_edge_outliers,
    flag_node_outliers,
    node_outlier_scores,
    sample_matrix_normal,
    standardized_residuals,
)
from .simulate import SimConfig, run_study, write_medians_csv, write_scores_csv

DEFAULT_LEVEL = 0.975
SEED_ENV_VAR = "NETOUTLIER_SEED"

_NA_TOKENS = {"", "na", "nan"}


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _resolve_seed(flag_value):
    """Environment variable NETOUTLIER_SEED wins over the flag/config value."""
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ParseError(
                f"{SEED_ENV_VAR} must be an integer, got {env!r}"
            ) from None
    return flag_value


def _read_matrix_csv(path, what: str) -> np.ndarray:
    """Read a numeric matrix CSV with one header row.

    Missing values (empty, 'NA', 'NaN') and non-finite entries raise
    ``DimensionMismatchError`` naming the first offending line; anything
    that is not a number at all raises ``ParseError``.
    """
    rows = []
    na_lines = []
    try:
        with open(path, newline="") as fh:
            header = fh.readline()
            if not header.strip():
                raise ParseError(f"{path}: empty file")
            fields = [c.strip() for c in header.rstrip("\n").split(",")]
            try:
                float(fields[0])
            except ValueError:
                pass
            else:
                raise ParseError(f"{path}: expected a header row")
            width = len(fields)
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split(",")
                if len(parts) != width:
                    raise ParseError(
                        f"{path}:{lineno}: expected {width} fields, "
                        f"got {len(parts)}"
                    )
                row = np.empty(width)
                for k, token in enumerate(parts):
                    token = token.strip()
                    if token.lower() in _NA_TOKENS:
                        row[k] = np.nan
                        if lineno not in na_lines:
                            na_lines.append(lineno)
                        continue
                    try:
                        row[k] = float(token)
                    except ValueError:
                        raise ParseError(
                            f"{path}:{lineno}: not a number: {token!r}"
                        ) from None
                rows.append(row)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if na_lines:
        shown = ", ".join(str(ln) for ln in na_lines[:5])
        more = "" if len(na_lines) <= 5 else f" (+{len(na_lines) - 5} more)"
        raise DimensionMismatchError(
            f"{path}: missing values in {what} rows at line(s) {shown}{more}"
        )
    if not rows:
        raise ParseError(f"{path}: no data rows")
    mat = np.vstack(rows)
    if not np.all(np.isfinite(mat)):
        bad = int(np.where(~np.isfinite(mat).all(axis=1))[0][0]) + 2
        raise DimensionMismatchError(
            f"{path}: non-finite {what} value at line {bad}"
        )
    return mat


def _write_matrix_csv(path, mat: np.ndarray, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"{prefix}{k + 1}" for k in range(mat.shape[1])))
        fh.write("\n")
        for row in mat:
            fh.write(",".join(_fmt(v) for v in row))
            fh.write("\n")


def _write_edge_report(path, diag) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("i,j,w,delta,var_factor,standardized,flag\n")
        for k in range(diag.edges.shape[0]):
            i, j = diag.edges[k]
            fh.write(
                f"{i},{j},{_fmt(diag.weights[k])},{_fmt(diag.delta[k])},"
                f"{_fmt(diag.var_factor[k])},{_fmt(diag.standardized[k])},"
                f"{int(diag.is_outlier[k])}\n"
            )


def _write_node_report(path, scores: np.ndarray, flags: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("node,score,flag\n")
        for idx, (s, f) in enumerate(zip(scores, flags)):
            fh.write(f"{idx},{_fmt(s)},{int(f)}\n")


def _write_manifest(out_dir, command: str, argv, cfg: dict, inputs: dict,
                    seed, elapsed: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "backend": backend_name(),
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "seed": seed,
        "timing_seconds": elapsed,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_graph(edges_path, n_data: int) -> WeightedGraph:
    graph = read_edge_csv(edges_path)
    if graph.n > n_data:
        raise DimensionMismatchError(
            f"{edges_path} references node {graph.n - 1} but the data has "
            f"only {n_data} rows"
        )
    if graph.n < n_data:
        graph = WeightedGraph(n_data, graph.edges, graph.weights)
    return graph


def _cmd_detect(args, argv) -> int:
    t0 = time.perf_counter()
    x = _read_matrix_csv(args.data, "data")
    n = x.shape[0]
    if args.covariates:
        z = _read_matrix_csv(args.covariates, "covariate")
        if z.shape[0] != n:
            raise DimensionMismatchError(
                f"data has {n} rows but covariates have {z.shape[0]}"
            )
    else:
        z = np.ones((n, 1))

    graph = _load_graph(args.edges, n)
    bundle = laplacian_bundle(graph)
    if not bundle.is_connected:
        raise DisconnectedGraphError(
            f"graph has {bundle.n_components} connected components"
        )

    schema = CodaSchema.from_json(args.coda) if args.coda else None
    compositional_x = schema is not None and schema.response_compositional
    dof = x.shape[1] - 1 if compositional_x else x.shape[1]
    if dof < 1:
        raise DimensionMismatchError("response dimension too small")
    m = graph.n_edges
    h = min(m, max(min_h(m, dof), math.ceil(args.h_fraction * m)))
    level = args.level
    if level is None:
        level = DEFAULT_CODA_LEVEL if schema is not None else DEFAULT_LEVEL
    config = McdConfig(
        h=h,
        max_csteps=args.max_csteps,
        reweight=not args.no_reweight,
        rescale=not args.no_rescale,
    )

    os.makedirs(args.out, exist_ok=True)
    clr_section = None
    if schema is not None:
        cfit = fit_compositional(
            x, z, graph, bundle, schema, config,
            level=level, contrast_rng=args.contrast_seed,
        )
        fit = cfit.fit
        diag = cfit.diagnostics
        scores, flags = cfit.node_scores, cfit.node_flags
        residuals = cfit.residuals_clr
        clr_section = {
            "theta_clr": cfit.theta_clr.tolist(),
            "sigma_clr": cfit.sigma_clr.tolist(),
            "contrast_x": (None if cfit.contrast_x is None
                           else cfit.contrast_x.tolist()),
            "contrasts_z": {k: v.tolist() for k, v in cfit.contrasts_z.items()},
        }
    else:
        data = Dataset(x, z)
        fit = edgewise_mcd_fit(data, graph, bundle, config)
        params = fit.params
        diag = flag_edge_outliers(
            edge_deltas(data, params, bundle, graph), dof, level
        )
        scores = node_outlier_scores(data, params, bundle)
        flags = flag_node_outliers(data, params, bundle, dof, level)
        residuals = standardized_residuals(data, params, bundle)

    _write_edge_report(os.path.join(args.out, "edges.csv"), diag)
    _write_node_report(os.path.join(args.out, "nodes.csv"), scores, flags)
    _write_matrix_csv(os.path.join(args.out, "residuals.csv"), residuals, "r")

    params_doc = {
        "theta": fit.theta.tolist(),
        "sigma_v": fit.sigma_v.tolist(),
        "objective": fit.objective,
        "h": fit.h,
        "start_id": fit.start_id,
        "n_csteps": fit.n_csteps,
        "reweighted": fit.reweighted,
        "converged": fit.converged,
        "level": level,
        "dof": dof,
    }
    if clr_section is not None:
        params_doc["clr"] = clr_section
    with open(os.path.join(args.out, "params.json"), "w") as fh:
        json.dump(params_doc, fh, indent=2)
        fh.write("\n")

    cfg = {
        "command": "detect",
        "level": level,
        "h_fraction": args.h_fraction,
        "h": h,
        "max_csteps": args.max_csteps,
        "reweight": not args.no_reweight,
        "rescale": not args.no_rescale,
        "coda": args.coda is not None,
        "contrast_seed": args.contrast_seed,
    }
    inputs = [args.data, args.edges]
    if args.covariates:
        inputs.append(args.covariates)
    if args.coda:
        inputs.append(args.coda)
    _write_manifest(args.out, "detect", argv, cfg, inputs, None,
                    time.perf_counter() - t0)
    print(
        f"flagged {int(diag.is_outlier.sum())} of {m} edges and "
        f"{int(flags.sum())} of {n} nodes (level {level:g})"
    )
    return 0


def _cmd_sample(args, argv) -> int:
    t0 = time.perf_counter()
    try:
        with open(args.model) as fh:
            model = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {args.model}: {exc}") from exc
    if not isinstance(model, dict) or "sigma_v" not in model:
        raise ParseError(f"{args.model}: needs a 'sigma_v' matrix")
    sigma_v = np.asarray(model["sigma_v"], dtype=float)
    if sigma_v.ndim != 2 or sigma_v.shape[0] != sigma_v.shape[1]:
        raise ParseError(f"{args.model}: sigma_v must be a square matrix")
    p = sigma_v.shape[0]
    if "theta" in model and model["theta"] is not None:
        theta = np.atleast_2d(np.asarray(model["theta"], dtype=float))
        if theta.shape[1] != p:
            raise DimensionMismatchError(
                f"theta has {theta.shape[1]} columns, sigma_v is {p} x {p}"
            )
    else:
        theta = np.zeros((0, p))
    q = theta.shape[0]

    graph = read_edge_csv(args.edges)
    bundle = laplacian_bundle(graph)
    if not bundle.is_connected:
        raise DisconnectedGraphError(
            f"graph has {bundle.n_components} connected components"
        )

    seed = _resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(graph.n, q))
    params = ModelParams(theta, sigma_v)
    x = sample_matrix_normal(params, bundle, z, rng)

    os.makedirs(args.out, exist_ok=True)
    _write_matrix_csv(os.path.join(args.out, "data.csv"), x, "x")
    if q > 0:
        _write_matrix_csv(os.path.join(args.out, "covariates.csv"), z, "z")
    cfg = {"command": "sample", "n": graph.n, "p": p, "q": q, "seed": seed}
    _write_manifest(args.out, "sample", argv, cfg, [args.model, args.edges],
                    seed, time.perf_counter() - t0)
    print(f"sampled {graph.n} rows with p={p}, q={q} (seed {seed})")
    return 0


_SIM_REQUIRED = ("graph_type", "n", "p", "zeta", "reps", "seed")
_SIM_OPTIONAL = ("q", "h_fraction")


def _cmd_simulate(args, argv) -> int:
    t0 = time.perf_counter()
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {args.config}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{args.config}: config must be a JSON object")
    unknown = sorted(set(raw) - set(_SIM_REQUIRED) - set(_SIM_OPTIONAL))
    if unknown:
        raise ParseError(f"{args.config}: unknown keys {unknown}")
    missing = sorted(set(_SIM_REQUIRED) - set(raw))
    if missing:
        raise ParseError(f"{args.config}: missing keys {missing}")
    raw = dict(raw)
    raw["seed"] = _resolve_seed(raw["seed"])
    try:
        config = SimConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{args.config}: {exc}") from exc

    result = run_study(config, n_jobs=max(1, args.threads))

    os.makedirs(args.out, exist_ok=True)
    write_scores_csv(os.path.join(args.out, "scores.csv"), result.rows)
    write_medians_csv(os.path.join(args.out, "medians.csv"), result.rows)
    if result.failures:
        print(
            f"warning: {len(result.failures)} replication fits failed "
            f"(first: rep {result.failures[0].rep} "
            f"{result.failures[0].method}: {result.failures[0].message})",
            file=sys.stderr,
        )
    cfg = {
        "command": "simulate",
        "graph_type": config.graph_type,
        "n": config.n,
        "p": config.p,
        "q": config.q,
        "zeta": config.zeta,
        "reps": config.reps,
        "seed": config.seed,
        "h_fraction": config.h_fraction,
        "threads": max(1, args.threads),
    }
    _write_manifest(
        args.out, "simulate", argv, cfg, [args.config], config.seed,
        time.perf_counter() - t0,
        extra={"n_failures": len(result.failures)},
    )
    print(
        f"wrote {len(result.rows)} score rows "
        f"({config.reps} reps x {len(set(r.method for r in result.rows))} methods)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netoutlier",
        description="Robust edgewise outlier detection for network-indexed data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser(
        "detect", help="fit the robust estimator and write outlier reports"
    )
    det.add_argument("--data", required=True,
                     help="response CSV, one header row then one row per node")
    det.add_argument("--edges", required=True,
                     help="edge list CSV with header i,j,w")
    det.add_argument("--covariates", default=None,
                     help="covariate CSV (default: intercept only)")
    det.add_argument("--out", required=True, help="output directory")
    det.add_argument("--level", type=float, default=None,
                     help="chi-squared level for outlier flags "
                          "(default 0.975, or 0.995 with --coda)")
    det.add_argument("--h-fraction", type=float, default=0.75,
                     dest="h_fraction",
                     help="fraction of edges kept by the trimmed fit")
    det.add_argument("--max-csteps", type=int, default=100, dest="max_csteps")
    det.add_argument("--no-reweight", action="store_true",
                     help="skip the reweighting refit")
    det.add_argument("--no-rescale", action="store_true",
                     help="skip the consistency rescaling of sigma_v")
    det.add_argument("--coda", default=None, metavar="SCHEMA_JSON",
                     help="treat data as compositional per this schema")
    det.add_argument("--contrast-seed", type=int, default=None,
                     dest="contrast_seed",
                     help="draw random ilr contrasts from this seed "
                          "(default: Helmert-type)")

    smp = sub.add_parser("sample", help="draw one dataset from a model")
    smp.add_argument("--model", required=True,
                     help="JSON with sigma_v and optional theta")
    smp.add_argument("--edges", required=True)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="run the simulation benchmark")
    sim.add_argument("--config", required=True, help="JSON simulation config")
    sim.add_argument("--out", required=True)
    sim.add_argument("--threads", type=int, default=1,
                     help="parallel replications (default 1)")
    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        if args.command == "detect":
            return _cmd_detect(args, argv)
        if args.command == "sample":
            return _cmd_sample(args, argv)
        return _cmd_simulate(args, argv)
    except ParseError as exc:
        print(f"netoutlier: error: {exc}", file=sys.stderr)
        return 2
    except DimensionMismatchError as exc:
        print(f"netoutlier: error: {exc}", file=sys.stderr)
        return 3
    except DisconnectedGraphError as exc:
        print(f"netoutlier: error: {exc}", file=sys.stderr)
        return 4
    except DegenerateEstimateError as exc:
        print(f"netoutlier: error: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"netoutlier: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
