"""Graph container, Laplacian bundle, and file format tests.

Analytic oracles: the two-node graph (L+ = L/4 at unit weight), path graphs
(effective resistance = hop count), and the Moore-Penrose conditions checked
directly on random graphs.
"""
import numpy as np
import pytest

from netoutlier.exceptions import DimensionMismatchError, ParseError
from netoutlier.graph import (
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


def path_graph(n, w=1.0):
    return WeightedGraph.from_edge_list(n, [(i, i + 1, w) for i in range(n - 1)])


def random_graph(n, rng, extra=2.0):
    """Connected random graph: a spanning path plus random chords."""
    rows = [(i, i + 1, rng.uniform(0.5, 2.0)) for i in range(n - 1)]
    have = {(i, i + 1) for i in range(n - 1)}
    for _ in range(int(extra * n)):
        i, j = sorted(rng.choice(n, size=2, replace=False))
        if (int(i), int(j)) not in have:
            have.add((int(i), int(j)))
            rows.append((int(i), int(j), rng.uniform(0.5, 2.0)))
    return WeightedGraph.from_edge_list(n, rows)


class TestWeightedGraph:
    def test_from_edge_list_canonicalizes(self):
        g = WeightedGraph.from_edge_list(4, [(2, 0, 1.5), (3, 1, 0.5)])
        np.testing.assert_array_equal(g.edges, [[0, 2], [1, 3]])
        np.testing.assert_array_equal(g.weights, [1.5, 0.5])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self loop"):
            WeightedGraph.from_edge_list(3, [(1, 1, 1.0)])

    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            WeightedGraph.from_edge_list(3, [(0, 1, 1.0), (1, 0, 2.0)])

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            WeightedGraph.from_edge_list(3, [(0, 1, 0.0)])
        with pytest.raises(ValueError):
            WeightedGraph.from_edge_list(3, [(0, 1, -1.0)])

    def test_weight_count_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            WeightedGraph(3, np.array([[0, 1], [1, 2]]), np.array([1.0]))

    def test_endpoint_out_of_range(self):
        with pytest.raises(ValueError):
            WeightedGraph.from_edge_list(2, [(0, 5, 1.0)])

    def test_degrees_and_weight_matrix(self):
        g = WeightedGraph.from_edge_list(3, [(0, 1, 2.0), (1, 2, 3.0)])
        w = g.weight_matrix()
        assert w[0, 1] == w[1, 0] == 2.0
        assert np.all(np.diag(w) == 0.0)
        np.testing.assert_allclose(g.degrees(), [2.0, 5.0, 3.0])

    def test_arrays_frozen(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            g.edges[0, 0] = 7


class TestLaplacianBundle:
    def test_two_node_pinv_is_quarter_laplacian(self):
        """Single unit edge: L = [[1,-1],[-1,1]] has L+ = L/4 exactly."""
        g = WeightedGraph.from_edge_list(2, [(0, 1, 1.0)])
        b = laplacian_bundle(g)
        np.testing.assert_allclose(b.pinv, b.laplacian / 4.0, atol=1e-12)
        assert b.rank == 1
        assert b.is_connected

    def test_path_effective_resistance_is_hop_count(self):
        g = path_graph(5)
        b = laplacian_bundle(g)
        d = np.diag(b.pinv)
        # resistance between the ends of a unit-weight path = its length
        r_ends = d[0] + d[4] - 2.0 * b.pinv[0, 4]
        np.testing.assert_allclose(r_ends, 4.0, atol=1e-9)
        for i, j in g.edges:
            r = d[i] + d[j] - 2.0 * b.pinv[i, j]
            np.testing.assert_allclose(r, 1.0, atol=1e-9)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(0)
        g = random_graph(40, rng)
        b = laplacian_bundle(g)
        norm = np.linalg.norm(b.laplacian)
        assert np.abs(b.laplacian @ np.ones(40)).max() <= 1e-12 * norm

    @pytest.mark.parametrize("n", [5, 50, 200])
    def test_penrose_conditions(self, n):
        rng = np.random.default_rng(n)
        g = random_graph(n, rng)
        b = laplacian_bundle(g)
        lap, pinv = b.laplacian, b.pinv
        scale = np.linalg.norm(lap)
        assert np.linalg.norm(lap @ pinv @ lap - lap) <= 1e-8 * scale
        assert np.linalg.norm(pinv @ lap @ pinv - pinv) <= 1e-8 * np.linalg.norm(pinv)
        np.testing.assert_allclose(lap @ pinv, (lap @ pinv).T, atol=1e-8 * scale)

    def test_square_roots_square_back(self):
        rng = np.random.default_rng(3)
        g = random_graph(30, rng)
        b = laplacian_bundle(g)
        np.testing.assert_allclose(
            b.half @ b.half, b.laplacian,
            atol=1e-8 * np.linalg.norm(b.laplacian),
        )
        np.testing.assert_allclose(
            b.pinv_half @ b.pinv_half, b.pinv,
            atol=1e-8 * np.linalg.norm(b.pinv),
        )

    def test_incidence_factorization_exact(self):
        rng = np.random.default_rng(4)
        g = random_graph(25, rng)
        b = laplacian_bundle(g)
        np.testing.assert_allclose(
            b.incidence.T @ b.incidence, b.laplacian,
            atol=1e-12 * max(np.linalg.norm(b.laplacian), 1.0),
        )
        assert b.incidence.shape == (g.n_edges, g.n)

    def test_connected_rank_is_n_minus_1(self):
        rng = np.random.default_rng(5)
        g = random_graph(60, rng)
        assert laplacian_bundle(g).rank == 59

    def test_disconnected_components_counted(self):
        g = WeightedGraph.from_edge_list(
            5, [(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0)]
        )
        b = laplacian_bundle(g)
        assert b.rank == 3
        assert b.n_components == 2
        assert not b.is_connected


def test_quadratic_form_identity_on_random_pairs():
    rng = np.random.default_rng(17)
    for trial in range(100):
        n = int(rng.integers(3, 25))
        g = random_graph(n, rng, extra=1.0)
        y = rng.normal(size=n)
        via_l, via_edges = quadratic_form_identity_check(g, y)
        np.testing.assert_allclose(via_l, via_edges,
                                   rtol=1e-10, atol=1e-10)


def test_quadratic_form_identity_shape_check():
    g = path_graph(4)
    with pytest.raises(DimensionMismatchError):
        quadratic_form_identity_check(g, np.zeros(5))


class TestKnnGraph:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        pts = rng.uniform(size=(30, 2))
        k = 3
        g = build_knn_graph(pts, k)
        expected = set()
        for i in range(30):
            d = np.sqrt(((pts - pts[i]) ** 2).sum(axis=1))
            d[i] = np.inf
            order = np.argsort(d, kind="stable")[:k]
            for j in order:
                expected.add((min(i, int(j)), max(i, int(j))))
        got = {tuple(e) for e in g.edges.tolist()}
        assert got == expected
        assert np.all(g.weights == 1.0)

    def test_tie_break_prefers_lower_index(self):
        # nodes 1 and 2 are equidistant from node 0, and no other node picks
        # node 0, so any (0, .) edge comes from node 0's own tie-broken choice
        pts = np.array([
            [0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [1.2, 0.0], [-1.2, 0.0],
        ])
        g = build_knn_graph(pts, 1)
        got = {tuple(e) for e in g.edges.tolist()}
        assert (0, 1) in got
        assert (0, 2) not in got

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            build_knn_graph(np.zeros((3, 2)), 3)


class TestKernelGraph:
    def test_gaussian_weights_formula(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        g = build_kernel_graph(pts, kernel="gaussian", sigma=1.0)
        assert g.n_edges == 3  # complete graph
        w = {tuple(e): wt for e, wt in zip(g.edges.tolist(), g.weights)}
        np.testing.assert_allclose(w[(0, 1)], np.exp(-0.5))
        np.testing.assert_allclose(w[(0, 2)], np.exp(-2.0))
        np.testing.assert_allclose(w[(1, 2)], np.exp(-2.5))

    def test_box_kernel_thresholds(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        g = build_kernel_graph(pts, kernel="box", sigma=1.5)
        got = {tuple(e) for e in g.edges.tolist()}
        assert got == {(0, 1)}

    def test_bad_kernel_and_sigma(self):
        pts = np.zeros((3, 1))
        with pytest.raises(ValueError):
            build_kernel_graph(pts, kernel="triangle")
        with pytest.raises(ValueError):
            build_kernel_graph(pts, sigma=0.0)


class TestCsvFormats:
    def test_edge_csv_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        g = random_graph(12, rng)
        path = tmp_path / "edges.csv"
        write_edge_csv(path, g)
        back = read_edge_csv(path)
        assert back.n == g.n
        np.testing.assert_array_equal(back.edges, g.edges)
        np.testing.assert_array_equal(back.weights, g.weights)

    def test_edge_csv_n_override(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("i,j,w\n0,1,1.0\n")
        g = read_edge_csv(path, n=10)
        assert g.n == 10

    def test_edge_csv_rejects_bad_header(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("a,b,c\n0,1,1.0\n")
        with pytest.raises(ParseError):
            read_edge_csv(path)

    def test_edge_csv_rejects_bad_field(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("i,j,w\n0,one,1.0\n")
        with pytest.raises(ParseError, match="2"):
            read_edge_csv(path)

    def test_edge_csv_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            read_edge_csv(tmp_path / "nope.csv")

    def test_coords_csv_round_trip(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("x1,x2\n0.25,1.5\n-3.0,0.125\n")
        pts = read_coords_csv(path)
        np.testing.assert_array_equal(pts, [[0.25, 1.5], [-3.0, 0.125]])

    def test_coords_csv_header_checked(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("lon,lat\n0.0,0.0\n")
        with pytest.raises(ParseError):
            read_coords_csv(path)
