import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perseus.errors import DimensionError, ParseError, ValidationError
from perseus.graph import (
    Graph,
    SplitMasks,
    WeightedAdjacency,
    canonical_edges,
    largest_connected_component,
    load_graph,
    normalize_adjacency,
    random_split,
    round_half_up,
    save_graph,
)


def write_inputs(tmp_path, edge_lines, features, labels=None):
    edges = tmp_path / "edges.tsv"
    edges.write_text("".join(line + "\n" for line in edge_lines))
    feats = tmp_path / "features.csv"
    n, d = np.shape(features)
    feats.write_text(f"{n},{d}\n" + "".join(",".join(str(x) for x in row) + "\n" for row in features))
    lab = None
    if labels is not None:
        lab = tmp_path / "labels.csv"
        lab.write_text("node_id,label\n" + "".join(f"{i},{c}\n" for i, c in enumerate(labels)))
    return edges, feats, lab


class TestLoadGraph:
    def test_dedup_and_self_loop(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, ["0\t1", "1\t0", "2\t2"], np.zeros((3, 2)))
        with pytest.warns(UserWarning, match="dropped 1 self-loop"):
            g = load_graph(e, f)
        assert g.n == 3
        assert g.edge_set() == {(0, 1)}

    def test_empty_edge_file(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, [], np.ones((4, 3)))
        g = load_graph(e, f)
        assert (g.n, g.m) == (4, 0)

    def test_malformed_line_reports_line_number(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, ["0\t1", "1 2"], np.zeros((3, 1)))
        with pytest.raises(ParseError, match=":2:"):
            load_graph(e, f)

    def test_non_integer_id(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, ["0\tx"], np.zeros((3, 1)))
        with pytest.raises(ParseError, match=":1:"):
            load_graph(e, f)

    def test_feature_row_count_mismatch(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, ["0\t1"], np.zeros((3, 2)))
        f.write_text("4,2\n0,0\n0,0\n0,0\n")
        with pytest.raises(DimensionError):
            load_graph(e, f)

    def test_edge_endpoint_out_of_range(self, tmp_path):
        e, f, _ = write_inputs(tmp_path, ["0\t3"], np.zeros((3, 1)))
        with pytest.raises(ValidationError):
            load_graph(e, f)

    def test_label_node_out_of_range(self, tmp_path):
        e, f, lab = write_inputs(tmp_path, ["0\t1"], np.zeros((2, 1)), labels=[0, 1])
        lab.write_text("node_id,label\n0,0\n1,1\n5,0\n")
        with pytest.raises(ValidationError, match="outside"):
            load_graph(e, f, lab)

    def test_negative_label(self, tmp_path):
        e, f, lab = write_inputs(tmp_path, ["0\t1"], np.zeros((2, 1)), labels=[0, -1])
        with pytest.raises(ValidationError):
            load_graph(e, f, lab)

    def test_labels_set_class_count(self, tmp_path):
        e, f, lab = write_inputs(tmp_path, ["0\t1"], np.zeros((3, 1)), labels=[0, 2, 1])
        g = load_graph(e, f, lab)
        assert g.C == 3
        assert g.y.tolist() == [0, 2, 1]

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        n = 30
        edges = np.argwhere(np.triu(rng.random((n, n)) < 0.1, k=1))
        g = Graph(n, edges, rng.normal(size=(n, 4)) * 10.0 ** rng.integers(-8, 8, size=(n, 4)), rng.integers(0, 3, n))
        paths = [tmp_path / "e.tsv", tmp_path / "f.csv", tmp_path / "l.csv"]
        save_graph(g, *paths)
        g2 = load_graph(*paths)
        save_graph(g2, *(p.with_suffix(".2") for p in paths))
        g3 = load_graph(*(p.with_suffix(".2") for p in paths))
        assert g3.edge_set() == g.edge_set()
        np.testing.assert_allclose(g3.X, g.X, rtol=1e-12, atol=0)
        np.testing.assert_array_equal(g3.y, g.y)

    @pytest.mark.skipif("PERSEUS_CORA_DIR" not in os.environ, reason="Cora export not supplied")
    def test_cora_export_counts(self):
        d = Path(os.environ["PERSEUS_CORA_DIR"])
        g = load_graph(d / "edges.tsv", d / "features.csv", d / "labels.csv")
        # 5429 citation lines; reversed duplicates collapse on load
        assert g.n == 2708
        assert g.m <= 5429


class TestGraphInvariants:
    def test_canonical_storage(self):
        g = Graph(4, [(3, 1), (1, 3), (0, 2), (2, 2)], np.zeros((4, 1)))
        assert g.edges.tolist() == [[0, 2], [1, 3]]

    def test_feature_rows_must_match(self):
        with pytest.raises(DimensionError):
            Graph(3, [], np.zeros((2, 1)))

    def test_immutable(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        with pytest.raises(ValueError):
            g.edges[0, 0] = 1


def union_find_largest(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    sizes = {}
    for i in range(n):
        sizes.setdefault(find(i), []).append(i)
    return max(sizes.values(), key=lambda members: (len(members), -min(members)))


class TestLargestComponent:
    def test_picks_bigger_component(self):
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (5, 6), (6, 7)]
        sub, old = largest_connected_component(Graph(8, edges, np.zeros((8, 1))))
        assert sub.n == 5
        assert old.tolist() == [0, 1, 2, 3, 4]

    def test_connected_graph_is_fixed_point(self):
        g = Graph(4, [(0, 1), (1, 2), (2, 3)], np.arange(8.0).reshape(4, 2), np.array([0, 1, 0, 1]))
        sub, old = largest_connected_component(g)
        assert old.tolist() == [0, 1, 2, 3]
        assert sub.edge_set() == g.edge_set()
        np.testing.assert_array_equal(sub.X, g.X)

    def test_tie_goes_to_smallest_id(self):
        # components {1,3,5,7} and {0,2,4,6}: equal size, second holds node 0
        edges = [(1, 3), (3, 5), (5, 7), (0, 2), (2, 4), (4, 6)]
        sub, old = largest_connected_component(Graph(8, edges, np.zeros((8, 1))))
        assert old.tolist() == [0, 2, 4, 6]
        assert sub.edge_set() == {(0, 1), (1, 2), (2, 3)}

    def test_relabels_features_and_labels(self):
        X = np.arange(10.0).reshape(5, 2)
        g = Graph(5, [(3, 4), (2, 3)], X, np.array([0, 1, 2, 0, 1]))
        sub, old = largest_connected_component(g)
        np.testing.assert_array_equal(sub.X, X[[2, 3, 4]])
        assert sub.y.tolist() == [2, 0, 1]

    def test_empty_graph(self):
        with pytest.raises(ValidationError):
            largest_connected_component(Graph(0, [], np.zeros((0, 1))))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 25), st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)), max_size=40))
    def test_matches_union_find(self, n, pairs):
        pairs = [(u % n, v % n) for u, v in pairs]
        g = Graph(n, pairs, np.zeros((n, 1)))
        sub, old = largest_connected_component(g)
        expected = union_find_largest(n, g.edges.tolist())
        assert sub.n == len(expected)
        assert old.tolist() == sorted(expected)


class TestRandomSplit:
    def test_sizes(self):
        s = random_split(100, (0.1, 0.1, 0.8), seed=7)
        assert (s.train.size, s.val.size, s.test.size) == (10, 10, 80)

    def test_deterministic(self):
        a = random_split(100, (0.1, 0.1, 0.8), seed=7)
        b = random_split(100, (0.1, 0.1, 0.8), seed=7)
        for name in ("train", "val", "test"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_floor_rule(self):
        s = random_split(10, (0.1, 0.1, 0.8), seed=0)
        assert (s.train.size, s.val.size, s.test.size) == (1, 1, 8)

    def test_remainder_goes_to_test(self):
        s = random_split(17, (0.3, 0.3, 0.4), seed=0)
        assert (s.train.size, s.val.size, s.test.size) == (5, 5, 7)

    @pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.5), (-0.1, 0.3, 0.8), (0.5, 0.5)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ValidationError):
            random_split(50, ratios)

    def test_too_few_nodes(self):
        with pytest.raises(ValidationError):
            random_split(2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(3, 500), st.integers(0, 2**32 - 1))
    def test_disjoint_and_within_range(self, n, seed):
        s = random_split(n, (0.1, 0.1, 0.8), seed)
        allidx = np.concatenate([s.train, s.val, s.test])
        assert np.unique(allidx).size == allidx.size == n
        assert abs(s.train.size - 0.1 * n) <= 1 and abs(s.val.size - 0.1 * n) <= 1

    def test_json_round_trip(self, tmp_path):
        s = random_split(20, seed=1)
        s.to_json(tmp_path / "split.json")
        data = json.loads((tmp_path / "split.json").read_text())
        assert set(data) == {"train", "val", "test"}
        t = SplitMasks.from_json(tmp_path / "split.json", 20)
        np.testing.assert_array_equal(t.test, s.test)

    def test_overlapping_masks_rejected(self):
        with pytest.raises(ValidationError):
            SplitMasks([0, 1], [1], [2])


class TestNormalizeAdjacency:
    def test_no_edges_is_identity(self):
        A = normalize_adjacency(WeightedAdjacency(2, np.zeros((0, 2)), []))
        np.testing.assert_array_equal(A.toarray(), np.eye(2))

    def test_single_edge(self):
        A = normalize_adjacency(WeightedAdjacency(2, [(0, 1)], [1.0]))
        np.testing.assert_allclose(A.toarray(), np.full((2, 2), 0.5))

    def test_weighted_edge(self):
        # D = diag(1.5, 1.5): diagonal 1/1.5, off-diagonal 0.5/1.5
        A = normalize_adjacency(WeightedAdjacency(2, [(0, 1)], [0.5])).toarray()
        np.testing.assert_allclose(A, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])

    def test_isolated_node_keeps_self_loop(self):
        A = normalize_adjacency(WeightedAdjacency(3, [(0, 1)], [1.0])).toarray()
        assert A[2, 2] == 1.0
        assert A[2, :2].tolist() == [0.0, 0.0]

    @pytest.mark.parametrize("seed", range(10))
    def test_symmetric_with_spectral_radius_at_most_one(self, seed):
        rng = np.random.default_rng(seed)
        n = 25
        edges = np.argwhere(np.triu(rng.random((n, n)) < 0.2, k=1))
        A = normalize_adjacency(WeightedAdjacency(n, edges, rng.uniform(0.05, 1, len(edges)))).toarray()
        np.testing.assert_allclose(A, A.T, atol=1e-15)
        # power iteration on A^2 (PSD) gives rho(A)^2
        v = rng.normal(size=n)
        for _ in range(500):
            v = A @ (A @ v)
            v /= np.linalg.norm(v)
        rho = np.sqrt(v @ A @ A @ v)
        assert rho <= 1 + 1e-9

    def test_rejects_bad_weights(self):
        with pytest.raises(ValidationError):
            WeightedAdjacency(2, [(0, 1)], [1.5])
        with pytest.raises(ValidationError):
            WeightedAdjacency(2, [(0, 1)], [0.0])


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, 0.0)] == [1, 2, 3, 2, 0]


def test_canonical_edges_rejects_out_of_range():
    with pytest.raises(ValidationError):
        canonical_edges([(0, 5)], n=3)
