"""Tests for the simulation benchmark: generators, corruption, scoring,
and the study driver."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from netoutlier.exceptions import DegenerateEstimateError
from netoutlier.graph import laplacian_bundle
from netoutlier.model import ModelParams, compose_sample
from netoutlier.simulate import (
    METHODS,
    ScoreRow,
    SimConfig,
    _fit_method,
    corrupt,
    gen_covariance,
    gen_dataset,
    gen_graph,
    run_study,
    score,
    write_medians_csv,
    write_scores_csv,
)


def make_cell(graph_type="knn", n=60, p=3, q=5, seed=0):
    """One generated (graph, bundle, data, truth) tuple."""
    rng = np.random.default_rng(seed)
    g = gen_graph(graph_type, n, rng)
    b = laplacian_bundle(g)
    data, truth = gen_dataset(g, b, p, q, rng)
    return g, b, data, truth


class TestGenCovariance:
    def test_eigenvalues_in_sampling_range(self):
        rng = np.random.default_rng(3)
        for p in (3, 10):
            for _ in range(25):
                cov = gen_covariance(p, rng)
                eigs = np.linalg.eigvalsh(cov)
                assert eigs.min() >= 1.0 - 1e-9
                assert eigs.max() <= 50.0 + 1e-9

    def test_symmetric(self):
        cov = gen_covariance(7, np.random.default_rng(4))
        assert_allclose(cov, cov.T, atol=1e-12)

    def test_condition_number_bounded_by_eigenvalue_range(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            cov = gen_covariance(5, rng)
            assert np.linalg.cond(cov) <= 50.0 * (1.0 + 1e-8)


class TestGenGraph:
    def test_scalefree_edge_count_is_deterministic(self):
        # one seed node, the second node attaches once, every later node
        # attaches twice: |E| = 1 + 2 (n - 2)
        rng = np.random.default_rng(6)
        for n in (10, 50, 137):
            g = gen_graph("scalefree", n, rng)
            assert g.n_edges == 2 * (n - 2) + 1

    def test_erdos_edge_count_near_binomial_mean(self):
        g = gen_graph("erdos", 100, np.random.default_rng(7))
        n_pairs = 100 * 99 // 2
        mean = 0.05 * n_pairs
        sd = math.sqrt(n_pairs * 0.05 * 0.95)
        assert abs(g.n_edges - mean) <= 4.0 * sd

    def test_knn_degrees_at_least_k(self):
        g = gen_graph("knn", 60, np.random.default_rng(8))
        deg = np.zeros(60)
        for i, j in g.edges:
            deg[i] += 1
            deg[j] += 1
        assert deg.min() >= 5

    def test_weights_strictly_inside_unit_interval(self):
        # erdos needs ~100 nodes at edge probability 0.05 for the
        # resample-until-connected loop to succeed reliably
        for gt, n in (("knn", 40), ("erdos", 100), ("scalefree", 40)):
            g = gen_graph(gt, n, np.random.default_rng(9))
            assert np.all(g.weights > 0.0)
            assert np.all(g.weights < 1.0)

    def test_always_connected(self):
        for gt, n in (("knn", 50), ("erdos", 100), ("scalefree", 50)):
            for seed in range(5):
                g = gen_graph(gt, n, np.random.default_rng(seed))
                assert laplacian_bundle(g).is_connected

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            gen_graph("lattice", 20, np.random.default_rng(0))


class TestGenDataset:
    def test_reproducible_given_seed(self):
        g, b, data, truth = make_cell(seed=10)
        g2, b2, data2, truth2 = make_cell(seed=10)
        assert_array_equal(data.x, data2.x)
        assert_array_equal(data.z, data2.z)
        assert_array_equal(truth.theta, truth2.theta)

    def test_zero_coefficients_center_the_sample(self):
        g, b, data, truth = make_cell(n=200, seed=11)
        rng = np.random.default_rng(12)
        flat = ModelParams(np.zeros_like(truth.theta), truth.sigma_v)
        x = compose_sample(flat, b, data.z, rng.standard_normal((200, truth.p)))
        assert abs(x.mean()) < 0.5

    def test_config_covariate_default(self):
        cfg = SimConfig(graph_type="knn", n=50, p=3, zeta=0.0, reps=1, seed=0)
        assert cfg.q == 7


class TestSimConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(graph_type="ring"),
            dict(zeta=1.0),
            dict(zeta=-0.1),
            dict(reps=0),
            dict(n=2),
            dict(h_fraction=0.4),
            dict(h_fraction=1.1),
            dict(seed=-1),
        ],
    )
    def test_bad_fields_rejected(self, kwargs):
        base = dict(graph_type="knn", n=50, p=3, zeta=0.1, reps=2, seed=1)
        base.update(kwargs)
        with pytest.raises(ValueError):
            SimConfig(**base)


class TestCorrupt:
    def test_budget_is_a_hard_bound(self):
        for zeta in (0.05, 0.1, 0.2, 0.3):
            for gt in ("knn", "erdos", "scalefree"):
                g, b, data, truth = make_cell(graph_type=gt, n=80, seed=13)
                rng = np.random.default_rng(14)
                _, nodes, edges = corrupt(data, truth, g, zeta, rng)
                assert edges.size <= zeta * g.n_edges
        # and the budget is actually used once it allows a swap
        g, b, data, truth = make_cell(n=80, seed=13)
        _, nodes, _ = corrupt(data, truth, g, 0.2, np.random.default_rng(14))
        assert nodes.size > 0

    def test_swaps_permute_observation_rows(self):
        g, b, data, truth = make_cell(n=70, seed=15)
        data_c, nodes, _ = corrupt(data, truth, g, 0.3, np.random.default_rng(16))
        before = sorted(map(tuple, data.x))
        after = sorted(map(tuple, data_c.x))
        assert before == after
        assert not np.array_equal(data_c.x, data.x)

    def test_covariates_replaced_only_at_corrupted_nodes(self):
        g, b, data, truth = make_cell(n=70, seed=17)
        data_c, nodes, _ = corrupt(data, truth, g, 0.2, np.random.default_rng(18))
        assert nodes.size > 0
        others = np.setdiff1d(np.arange(70), nodes)
        assert_array_equal(data_c.z[others], data.z[others])
        assert np.all(np.abs(data_c.z[nodes]) <= 10.0)
        assert not np.array_equal(data_c.z[nodes], data.z[nodes])

    def test_zero_fraction_is_a_no_op(self):
        g, b, data, truth = make_cell(seed=19)
        data_c, nodes, edges = corrupt(data, truth, g, 0.0, np.random.default_rng(1))
        assert nodes.size == 0 and edges.size == 0
        assert_array_equal(data_c.x, data.x)
        assert_array_equal(data_c.z, data.z)

    def test_budget_too_small_for_any_swap(self):
        g, b, data, truth = make_cell(n=30, seed=20)
        # a single swap touches at least the edges of two nodes, so a budget
        # of one edge can never be honored
        data_c, nodes, edges = corrupt(
            data, truth, g, 1.0 / g.n_edges, np.random.default_rng(2)
        )
        assert nodes.size == 0 and edges.size == 0
        assert_array_equal(data_c.x, data.x)


class TestScore:
    def test_true_parameters_score_perfectly(self):
        g, b, data, truth = make_cell(n=100, seed=21)
        sc = score(truth, truth, data, g, b)
        assert not sc.fsc_degenerate
        assert sc.fsc == 1.0
        assert abs(sc.kl) < 1e-10
        assert sc.rd == 0.0

    def test_doubled_covariance_pins_the_divergence(self):
        g, b, data, truth = make_cell(p=3, seed=22)
        fit = ModelParams(truth.theta, 2.0 * truth.sigma_v)
        sc = score(fit, truth, data, g, b)
        # 0.5 * (2p - p - p log 2) at p = 3
        assert sc.kl == pytest.approx(1.5 - 1.5 * math.log(2.0), rel=1e-12)
        assert sc.rd == 0.0

    def test_doubled_coefficients_give_unit_relative_error(self):
        g, b, data, truth = make_cell(seed=23)
        fit = ModelParams(2.0 * truth.theta, truth.sigma_v)
        sc = score(fit, truth, data, g, b)
        assert sc.rd == pytest.approx(1.0, rel=1e-15)

    def test_divergence_nonnegative_under_random_misfits(self):
        g, b, data, truth = make_cell(seed=24)
        rng = np.random.default_rng(25)
        for _ in range(20):
            a = rng.normal(size=(truth.p, truth.p)) * 0.3 + np.eye(truth.p)
            fit = ModelParams(
                truth.theta + rng.normal(size=truth.theta.shape),
                a @ truth.sigma_v @ a.T,
            )
            assert score(fit, truth, data, g, b).kl >= -1e-12

    def test_nothing_flagged_is_degenerate(self):
        g, b, data, truth = make_cell(n=100, seed=26)
        fit = ModelParams(truth.theta, 1e6 * truth.sigma_v)
        sc = score(fit, truth, data, g, b)
        assert sc.fsc_degenerate
        assert sc.fsc == 0.0

    def test_indefinite_fitted_covariance_rejected(self):
        g, b, data, truth = make_cell(p=3, seed=27)
        fit = ModelParams(truth.theta, np.diag([1.0, -1.0, 1.0]))
        with pytest.raises(DegenerateEstimateError):
            score(fit, truth, data, g, b)

    def test_zero_truth_coefficients_rejected(self):
        g, b, data, truth = make_cell(seed=28)
        flat = ModelParams(np.zeros_like(truth.theta), truth.sigma_v)
        with pytest.raises(ValueError):
            score(truth, flat, data, g, b)


class TestRunStudy:
    def test_rows_are_bit_reproducible(self):
        cfg = SimConfig(graph_type="knn", n=40, p=3, zeta=0.1, reps=3, seed=77)
        first = run_study(cfg)
        second = run_study(cfg)
        assert first.rows == second.rows
        assert first.failures == second.failures

    def test_thread_count_does_not_change_results(self):
        cfg = SimConfig(graph_type="knn", n=40, p=3, zeta=0.1, reps=4, seed=78)
        assert run_study(cfg).rows == run_study(cfg, n_jobs=3).rows

    def test_row_schema_and_ranges(self):
        cfg = SimConfig(graph_type="erdos", n=50, p=3, zeta=0.2, reps=3, seed=79)
        res = run_study(cfg)
        assert res.failures == ()
        assert len(res.rows) == 3 * cfg.reps
        for row in res.rows:
            assert row.method in METHODS
            assert 0.0 <= row.fsc <= 1.0
            assert np.isfinite(row.kl) and row.kl >= 0.0
            assert np.isfinite(row.rd) and row.rd >= 0.0

    def test_methods_coincide_without_corruption_or_trimming(self):
        """With zeta = 0 and the subset forced to every edge, the three
        methods solve the same least-squares problem; their coefficient
        estimates should differ by far less than the Monte-Carlo spread of
        the MLE itself."""
        reps = 8
        devs = []
        spread = []
        for rep in range(reps):
            g, b, data, truth = make_cell(n=50, p=3, q=4, seed=100 + rep)
            fits = {
                m: _fit_method(m, data, g, b, h=g.n_edges) for m in METHODS
            }
            spread.append(np.linalg.norm(fits["std"].theta - truth.theta))
            for a in ("edgemcd", "mcd"):
                devs.append(
                    np.linalg.norm(fits[a].theta - fits["std"].theta)
                )
        se = float(np.mean(spread))
        assert max(devs) <= 3.0 * se

    def test_robust_fit_beats_plain_mle_under_corruption(self):
        # n = 100, 20 replications: the trimmed fit should win the
        # divergence comparison in nearly every one
        cfg = SimConfig(graph_type="knn", n=100, p=3, zeta=0.2, reps=20, seed=80)
        res = run_study(cfg)
        by_rep = {}
        for row in res.rows:
            by_rep.setdefault(row.rep, {})[row.method] = row
        wins = sum(
            1 for cell in by_rep.values()
            if cell["edgemcd"].kl < cell["std"].kl
        )
        assert wins >= 18


class TestCsvOutput:
    def make_rows(self):
        rng = np.random.default_rng(30)
        rows = []
        for rep in range(3):
            for method in METHODS:
                rows.append(ScoreRow(
                    graph_type="knn", n=50, p=3, q=7, zeta=0.1, rep=rep,
                    method=method, fsc=rng.uniform(), kl=rng.uniform(0, 5),
                    rd=rng.uniform(0, 2),
                ))
        return rows

    def test_scores_csv_round_trips_exactly(self, tmp_path):
        rows = self.make_rows()
        path = tmp_path / "scores.csv"
        write_scores_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "graph_type,n,p,q,zeta,rep,method,fsc,kl,rd"
        assert len(lines) == 1 + len(rows)
        for row, line in zip(rows, lines[1:]):
            fields = line.split(",")
            assert fields[0] == row.graph_type
            assert int(fields[1]) == row.n
            assert fields[6] == row.method
            # 17 significant digits reproduce the doubles bit for bit
            assert float(fields[7]) == row.fsc
            assert float(fields[8]) == row.kl
            assert float(fields[9]) == row.rd

    def test_medians_csv_aggregates_by_cell_and_method(self, tmp_path):
        rows = self.make_rows()
        path = tmp_path / "medians.csv"
        write_medians_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "graph_type,n,p,q,zeta,method,med_fsc,med_kl,med_rd"
        assert len(lines) == 1 + len(METHODS)
        for line in lines[1:]:
            fields = line.split(",")
            method = fields[5]
            expect = np.median([r.kl for r in rows if r.method == method])
            assert float(fields[7]) == pytest.approx(expect, rel=1e-15)
