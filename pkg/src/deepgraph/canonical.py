"""Degree-guided randomized DFS ordering and flattened adjacency encoding.

A substructure's adjacency is permuted by a DFS that starts at a random
minimum-degree node and visits low-degree neighbors first, breaking degree
ties uniformly at random. Because every random choice depends only on
degrees, the distribution over encodings is invariant under relabeling of
the input, which is what makes a single sample per step a valid encoder.

All randomness flows through a chooser object, so the same traversal code
serves both production sampling (rng-backed) and exhaustive enumeration of
every random branch with exact probabilities (used to test invariance).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .substructures import Substructure

DEFAULT_S_MAX = 10


@dataclass
class CanonicalForm:
    """A DFS node ordering plus the permuted, padded, flattened adjacency.

    ``flat_adj`` is the row-major upper triangle of the permuted adjacency
    embedded in an s_max x s_max zero matrix, giving every node-pair slot a
    fixed position regardless of substructure size.
    """

    perm: tuple
    flat_adj: np.ndarray
    size: int


class _RngChooser:
    def __init__(self, rng):
        self.rng = rng

    def pick(self, n):
        return int(self.rng.integers(n))

    def arrange(self, group):
        if len(group) <= 1:
            return list(group)
        return [group[i] for i in self.rng.permutation(len(group))]


class _ScriptedChooser:
    """Replays a fixed choice script; flags the first unscripted branch.

    Runs whose script covers every choice report the exact probability of
    that branch (product of one-over-options at each choice).
    """

    def __init__(self, script):
        self.script = script
        self.pos = 0
        self.pending = None
        self.prob = 1.0

    def _next(self, n_options):
        if n_options == 1:
            return 0
        if self.pending is not None:
            return 0
        if self.pos < len(self.script):
            choice = self.script[self.pos]
            self.pos += 1
            self.prob /= n_options
            return choice
        self.pending = n_options
        return 0

    def pick(self, n):
        return self._next(n)

    def arrange(self, group):
        if len(group) <= 1:
            return list(group)
        perms = list(itertools.permutations(group))
        return list(perms[self._next(len(perms))])


def _check_adjacency(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if np.any(adj != adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency must have zero diagonal")
    return adj


def _dfs_order_core(adj: np.ndarray, chooser) -> tuple:
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    visited = [False] * n
    order = []
    stack = []
    while len(order) < n:
        if not stack:
            unvisited = [v for v in range(n) if not visited[v]]
            min_deg = min(deg[v] for v in unvisited)
            candidates = [v for v in unvisited if deg[v] == min_deg]
            stack.append(candidates[chooser.pick(len(candidates))])
        v = stack.pop()
        if visited[v]:
            continue
        visited[v] = True
        order.append(v)
        nbrs = [w for w in range(n) if adj[v, w] and not visited[w]]
        # visit lowest-degree neighbors first: group by degree, push the
        # high-degree groups deepest so ascending degree pops first
        by_deg = {}
        for w in nbrs:
            by_deg.setdefault(int(deg[w]), []).append(w)
        for d in sorted(by_deg, reverse=True):
            stack.extend(chooser.arrange(by_deg[d]))
    return tuple(order)


def dfs_order(adj: np.ndarray, rng) -> tuple:
    """One random degree-guided DFS ordering of the adjacency's nodes."""
    return _dfs_order_core(_check_adjacency(adj), _RngChooser(rng))


def order_distribution(adj: np.ndarray) -> dict:
    """Exact distribution over DFS orderings, enumerating all rng branches.

    Feasible for small substructures only; branch count grows with the
    factorial of degree-tie group sizes.
    """
    adj = _check_adjacency(adj)
    dist = {}
    pending_scripts = [()]
    while pending_scripts:
        script = pending_scripts.pop()
        chooser = _ScriptedChooser(script)
        perm = _dfs_order_core(adj, chooser)
        if chooser.pending is None:
            dist[perm] = dist.get(perm, 0.0) + chooser.prob
        else:
            pending_scripts.extend(script + (i,) for i in range(chooser.pending))
    return dist


def flatten_permuted(adj: np.ndarray, perm, s_max: int) -> np.ndarray:
    size = len(perm)
    padded = np.zeros((s_max, s_max), dtype=np.int8)
    perm = list(perm)
    padded[:size, :size] = np.asarray(adj)[np.ix_(perm, perm)]
    iu, ju = np.triu_indices(s_max, k=1)
    return padded[iu, ju]


def canonicalize(s: Substructure, rng, s_max: int = DEFAULT_S_MAX) -> CanonicalForm:
    """Sample one canonical form: DFS-permute, pad to s_max, flatten."""
    if s.size > s_max:
        raise ValueError(f"substructure of size {s.size} exceeds s_max={s_max}")
    perm = dfs_order(s.adj, rng)
    return CanonicalForm(perm=perm, flat_adj=flatten_permuted(s.adj, perm, s_max), size=s.size)


def canonicalize_pooled(s: Substructure, num_samples: int, rng, s_max: int = DEFAULT_S_MAX) -> list:
    """Independent canonical samples for pooling at evaluation time."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    return [canonicalize(s, rng, s_max) for _ in range(num_samples)]


def reconstruct(flat_adj: np.ndarray, size: int, s_max: int = DEFAULT_S_MAX) -> np.ndarray:
    """Invert :func:`flatten_permuted` back to a size x size adjacency."""
    full = np.zeros((s_max, s_max), dtype=np.int8)
    iu, ju = np.triu_indices(s_max, k=1)
    full[iu, ju] = flat_adj
    full = full + full.T
    return full[:size, :size]
