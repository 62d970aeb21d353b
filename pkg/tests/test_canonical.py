from itertools import permutations

import numpy as np
import pytest

from deepgraph.canonical import (
    canonicalize,
    canonicalize_pooled,
    dfs_order,
    flatten_permuted,
    order_distribution,
    reconstruct,
)
from deepgraph.graph import Graph
from deepgraph.substructures import Substructure, induced


def adj_from_edges(n, edges):
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in edges:
        a[u, v] = a[v, u] = 1
    return a


def sub_from_edges(n, edges, kind="path"):
    g = Graph(n, edges, [0] * n, [0] * len(edges))
    return induced(g, range(n), kind)


PATH3 = adj_from_edges(3, [(0, 1), (1, 2)])
TRIANGLE = adj_from_edges(3, [(0, 1), (1, 2), (0, 2)])
STAR3 = adj_from_edges(4, [(0, 1), (0, 2), (0, 3)])


def graphs_isomorphic(a, b):
    # brute-force isomorphism for tiny graphs
    n = a.shape[0]
    if b.shape[0] != n or a.sum() != b.sum():
        return False
    for perm in permutations(range(n)):
        p = list(perm)
        if np.array_equal(a[np.ix_(p, p)], b):
            return True
    return False


class TestDfsOrder:
    def test_path_starts_at_an_end(self):
        seen = set()
        for seed in range(40):
            order = dfs_order(PATH3, np.random.default_rng(seed))
            assert order in ((0, 1, 2), (2, 1, 0))
            seen.add(order)
        assert seen == {(0, 1, 2), (2, 1, 0)}

    def test_path_start_probabilities(self):
        dist = order_distribution(PATH3)
        assert dist == {(0, 1, 2): 0.5, (2, 1, 0): 0.5}

    def test_triangle_uniform_over_rotations(self):
        dist = order_distribution(TRIANGLE)
        assert len(dist) == 6
        assert all(abs(p - 1 / 6) < 1e-12 for p in dist.values())
        # symmetry: every order yields the same permuted adjacency
        flats = {flatten_permuted(TRIANGLE, perm, 4).tobytes() for perm in dist}
        assert len(flats) == 1

    def test_star_visits_center_second(self):
        dist = order_distribution(STAR3)
        for perm in dist:
            assert perm[0] in (1, 2, 3)
            assert perm[1] == 0

    def test_disconnected_restarts_at_min_degree(self):
        adj = adj_from_edges(4, [(0, 1)])  # plus isolated nodes 2, 3
        for seed in range(10):
            order = dfs_order(adj, np.random.default_rng(seed))
            assert set(order) == {0, 1, 2, 3}
            # isolated nodes have degree 0 and are always picked first
            assert {order[0], order[1]} == {2, 3}

    def test_rejects_bad_adjacency(self):
        with pytest.raises(ValueError):
            dfs_order(np.ones((2, 3)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            dfs_order(np.array([[1, 0], [0, 0]]), np.random.default_rng(0))


class TestCanonicalize:
    def test_p3_flat_layout(self):
        # ordering (0,1,2) on a 3-path padded to 4 nodes fills pair slots
        # (01,02,03,12,13,23) as (1,0,0,1,0,0)
        flat = flatten_permuted(PATH3, (0, 1, 2), 4)
        assert flat.tolist() == [1, 0, 0, 1, 0, 0]

    def test_single_edge_flat(self):
        sub = sub_from_edges(2, [(0, 1)])
        form = canonicalize(sub, np.random.default_rng(0), s_max=4)
        assert form.flat_adj.tolist() == [1, 0, 0, 0, 0, 0]

    def test_size_overflow_rejected(self):
        sub = sub_from_edges(5, [(i, i + 1) for i in range(4)])
        with pytest.raises(ValueError, match="s_max"):
            canonicalize(sub, np.random.default_rng(0), s_max=4)

    def test_pooled_singleton_matches_contract(self):
        sub = sub_from_edges(3, [(0, 1), (1, 2)])
        forms = canonicalize_pooled(sub, 1, np.random.default_rng(3))
        assert len(forms) == 1
        assert forms[0].size == 3

    def test_pooled_triangle_all_identical(self):
        sub = sub_from_edges(3, [(0, 1), (1, 2), (0, 2)], kind="cycle")
        forms = canonicalize_pooled(sub, 20, np.random.default_rng(4))
        flats = {f.flat_adj.tobytes() for f in forms}
        assert len(flats) == 1

    def test_pooled_p3_both_orders_same_flat(self):
        sub = sub_from_edges(3, [(0, 1), (1, 2)])
        forms = canonicalize_pooled(sub, 100, np.random.default_rng(5))
        starts = {f.perm[0] for f in forms}
        assert len(starts) > 1  # both ends show up
        flats = {f.flat_adj.tobytes() for f in forms}
        assert len(flats) == 1  # reversal symmetry collapses the encoding

    def test_reconstruct_isomorphic(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(2, 6))
            adj = np.triu((rng.random((n, n)) < 0.5).astype(np.int8), 1)
            adj = adj + adj.T
            sub = Substructure(nodes=tuple(range(n)), adj=adj, kind="path")
            form = canonicalize(sub, rng)
            rebuilt = reconstruct(form.flat_adj, form.size)
            assert graphs_isomorphic(adj, rebuilt)


def flat_distribution(adj, s_max=6):
    dist = {}
    for perm, p in order_distribution(adj).items():
        key = flatten_permuted(adj, perm, s_max).tobytes()
        dist[key] = dist.get(key, 0.0) + p
    return dist


class TestPermutationInvariance:
    def test_distribution_invariant_under_relabeling(self):
        # for every substructure up to 5 nodes tried here, the exact encoding
        # distribution (over all rng branches) is unchanged by any relabeling
        rng = np.random.default_rng(7)
        cases = [PATH3, TRIANGLE, STAR3,
                 adj_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
                 adj_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]),
                 adj_from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]),
                 adj_from_edges(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)])]
        for _ in range(3):
            n = int(rng.integers(3, 6))
            a = np.triu((rng.random((n, n)) < 0.5).astype(np.int8), 1)
            cases.append(a + a.T)
        for adj in cases:
            base = flat_distribution(adj)
            n = adj.shape[0]
            rels = list(permutations(range(n)))
            picks = [rels[i] for i in np.random.default_rng(0).choice(len(rels), 4, replace=False)]
            for sigma in picks:
                p = list(sigma)
                relabeled = adj[np.ix_(p, p)]
                other = flat_distribution(relabeled)
                assert set(base) == set(other)
                for key in base:
                    assert abs(base[key] - other[key]) < 1e-9

    def test_probabilities_sum_to_one(self):
        for adj in (PATH3, TRIANGLE, STAR3):
            dist = order_distribution(adj)
            assert abs(sum(dist.values()) - 1.0) < 1e-12

    def test_sampling_matches_enumeration(self):
        # frequency check of the rng path against exact branch probabilities
        adj = adj_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        exact = order_distribution(adj)
        rng = np.random.default_rng(8)
        counts = {}
        trials = 4000
        for _ in range(trials):
            perm = dfs_order(adj, rng)
            counts[perm] = counts.get(perm, 0) + 1
        assert set(counts) <= set(exact)
        for perm, p in exact.items():
            freq = counts.get(perm, 0) / trials
            assert abs(freq - p) < 0.04
