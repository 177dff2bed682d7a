import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphgda.errors import InvalidArgument
from graphgda.graph import (Graph, attribute_distance_matrix, load_graph, load_graph_dir,
                            save_graph, uniform_marginal)

from conftest import random_graph


def write(path, text):
    path.write_text(text)
    return path


class TestUniformMarginal:
    def test_four(self):
        assert np.array_equal(uniform_marginal(4), [0.25] * 4)

    def test_one(self):
        assert np.array_equal(uniform_marginal(1), [1.0])

    def test_three_sums_to_one(self):
        mu = uniform_marginal(3)
        assert np.allclose(mu, 1 / 3, rtol=0, atol=1e-16)
        assert abs(mu.sum() - 1.0) <= 1e-15

    def test_zero_rejected(self):
        with pytest.raises(InvalidArgument):
            uniform_marginal(0)


class TestGraphValidation:
    def test_default_marginal_uniform(self):
        g = Graph(np.zeros((3, 3)), np.zeros((3, 2)))
        assert np.allclose(g.marginal, 1 / 3)
        assert g.n == 3 and g.d == 2

    @pytest.mark.parametrize("A", [
        np.array([[0, 1], [0, 0]], float),          # asymmetric
        np.array([[0, -1], [-1, 0]], float),        # negative
        np.array([[0, np.nan], [np.nan, 0]]),       # NaN
        np.zeros((2, 3)),                           # not square
    ])
    def test_bad_adjacency(self, A):
        with pytest.raises(InvalidArgument):
            Graph(A, np.zeros((A.shape[0], 1)))

    def test_symmetry_tolerance(self):
        A = np.array([[0, 1], [1 + 5e-10, 0]])
        Graph(A, np.zeros((2, 1)))
        with pytest.raises(InvalidArgument):
            Graph(np.array([[0, 1], [1 + 1e-8, 0]]), np.zeros((2, 1)))

    def test_bad_marginal(self):
        with pytest.raises(InvalidArgument):
            Graph(np.zeros((2, 2)), np.zeros((2, 1)), [0.6, 0.6])
        with pytest.raises(InvalidArgument):
            Graph(np.zeros((2, 2)), np.zeros((2, 1)), [1.5, -0.5])

    def test_inf_features(self):
        with pytest.raises(InvalidArgument):
            Graph(np.zeros((2, 2)), np.array([[np.inf], [0.0]]))

    def test_labels(self):
        g = Graph(np.zeros((3, 3)), np.zeros((3, 1)), labels=[0, 2, 1])
        assert g.num_classes == 3
        with pytest.raises(InvalidArgument):
            Graph(np.zeros((3, 3)), np.zeros((3, 1)), labels=[0, -1, 1])
        with pytest.raises(InvalidArgument):
            Graph(np.zeros((3, 3)), np.zeros((3, 1)), labels=[0, 1])

    def test_immutable(self):
        g = Graph(np.zeros((2, 2)), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            g.adjacency[0, 1] = 1.0

    def test_input_not_aliased(self):
        A = np.zeros((2, 2))
        g = Graph(A, np.zeros((2, 1)))
        A[0, 1] = A[1, 0] = 5.0
        assert g.adjacency[0, 1] == 0.0

    def test_permuted(self, rng):
        g = random_graph(rng, 5, labels=[0, 1, 0, 1, 1])
        perm = np.array([3, 1, 4, 0, 2])
        h = g.permuted(perm)
        assert np.array_equal(h.adjacency, g.adjacency[np.ix_(perm, perm)])
        assert np.array_equal(h.labels, g.labels[perm])


class TestAttributeDistance:
    def test_identical_single_node(self):
        g = Graph(np.zeros((1, 1)), [[1.0, 2.0]])
        assert np.array_equal(attribute_distance_matrix(g, g), [[0.0]])

    def test_three_four_five(self):
        g0 = Graph(np.zeros((1, 1)), [[0.0, 0.0]])
        g1 = Graph(np.zeros((1, 1)), [[3.0, 4.0]])
        assert attribute_distance_matrix(g0, g1)[0, 0] == pytest.approx(5.0, abs=1e-15)

    def test_loop_oracle(self, rng):
        X0, X1 = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
        g0 = Graph(np.zeros((3, 3)), X0)
        g1 = Graph(np.zeros((4, 4)), X1)
        M = attribute_distance_matrix(g0, g1)
        for u in range(3):
            for v in range(4):
                ref = np.sqrt(sum((X0[u, k] - X1[v, k]) ** 2 for k in range(2)))
                assert abs(M[u, v] - ref) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            attribute_distance_matrix(Graph(np.zeros((1, 1)), [[1.0]]),
                                      Graph(np.zeros((1, 1)), [[1.0, 2.0]]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2 ** 31))
    def test_self_distance_symmetric_zero_diagonal(self, n, d, seed):
        g = random_graph(np.random.default_rng(seed), n, d)
        M = attribute_distance_matrix(g, g)
        assert np.allclose(np.diag(M), 0.0, atol=1e-7)
        assert np.allclose(M, M.T, atol=1e-12)
        assert np.all(M >= 0)


class TestLoading:
    def test_single_edge(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 2\n0 1\n")
        f = write(tmp_path / "f.csv", "0.0\n1.0\n")
        g = load_graph(a, f)
        assert np.array_equal(g.adjacency, [[0, 1], [1, 0]])
        assert np.array_equal(g.marginal, [0.5, 0.5])

    def test_empty_edge_list(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 3\n")
        f = write(tmp_path / "f.csv", "0\n1\n2\n")
        assert np.array_equal(load_graph(a, f).adjacency, np.zeros((3, 3)))

    def test_asymmetric_averaged(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 2\n0 1 2\n1 0 0\n")
        f = write(tmp_path / "f.csv", "0\n1\n")
        A = load_graph(a, f).adjacency
        assert A[0, 1] == 1.0 and A[1, 0] == 1.0

    def test_weighted_single_direction(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 3\n0 2 0.25\n")
        f = write(tmp_path / "f.csv", "0\n1\n2\n")
        A = load_graph(a, f).adjacency
        assert A[0, 2] == A[2, 0] == 0.25

    def test_labels_and_marginal(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 2\n0 1\n")
        f = write(tmp_path / "f.csv", "0,1\n1,0\n")
        y = write(tmp_path / "y.txt", "1\n0\n")
        m = write(tmp_path / "m.txt", "0.2500001\n0.75\n")
        g = load_graph(a, f, y, m)
        assert np.array_equal(g.labels, [1, 0])
        assert abs(g.marginal.sum() - 1.0) <= 1e-12

    @pytest.mark.parametrize("adj,feat,msg", [
        ("0 1\n", "0\n1\n", "header"),
        ("#nodes 2\n0 5\n", "0\n1\n", "outside"),
        ("#nodes 2\n0 x\n", "0\n1\n", "parse"),
        ("#nodes 3\n0 1\n", "0\n1\n", "mismatch"),
    ])
    def test_bad_files(self, tmp_path, adj, feat, msg):
        a = write(tmp_path / "a.txt", adj)
        f = write(tmp_path / "f.csv", feat)
        with pytest.raises(InvalidArgument):
            load_graph(a, f)

    def test_label_out_of_range(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 2\n0 1\n")
        f = write(tmp_path / "f.csv", "0\n1\n")
        y = write(tmp_path / "y.txt", "0\n3\n")
        with pytest.raises(InvalidArgument):
            load_graph(a, f, y, num_classes=2)

    def test_marginal_file_not_normalized(self, tmp_path):
        a = write(tmp_path / "a.txt", "#nodes 2\n0 1\n")
        f = write(tmp_path / "f.csv", "0\n1\n")
        m = write(tmp_path / "m.txt", "0.3\n0.3\n")
        with pytest.raises(InvalidArgument):
            load_graph(a, f, marginal_path=m)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_graph(tmp_path / "nope.txt", tmp_path / "nope.csv")

    def test_roundtrip_bit_identical(self, tmp_path, rng):
        g = random_graph(rng, 7, 3, weighted=True, labels=rng.integers(0, 3, 7))
        save_graph(g, tmp_path / "g")
        h = load_graph_dir(tmp_path / "g")
        assert np.array_equal(g.adjacency, h.adjacency)
        assert np.array_equal(g.features, h.features)
        assert np.array_equal(g.labels, h.labels)
        again = load_graph_dir(tmp_path / "g")
        assert np.array_equal(h.adjacency, again.adjacency)
        assert np.array_equal(h.features, again.features)

    def test_roundtrip_marginal(self, tmp_path, rng):
        mu = rng.random(4)
        g = random_graph(rng, 4, 2, marginal=mu / mu.sum())
        save_graph(g, tmp_path / "g", write_marginal=True)
        h = load_graph_dir(tmp_path / "g")
        assert np.allclose(h.marginal, g.marginal, rtol=0, atol=1e-15)
