"""Exact enumeration of graph substructures (induced subgraphs).

The vocabulary covers geometric patterns (induced cycles, stars, paths) and
per-node neighborhoods (k-hop balls, random-walk visit sets). Geometric
enumeration walks chordless paths with pruning instead of scanning node
subsets, so it stays fast on graphs where brute force would blow up; a
brute-force subset scan is kept in the test suite as the oracle.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph import Graph

GEOMETRIC_KINDS = ("cycle", "star", "path")
NEIGHBORHOOD_KINDS = ("khop", "rwalk")
ALL_KINDS = GEOMETRIC_KINDS + NEIGHBORHOOD_KINDS


@dataclass
class Substructure:
    """An induced subgraph: sorted node tuple plus its induced adjacency.

    ``adj[i, j]`` refers to the pair ``(nodes[i], nodes[j])`` and is 1 iff
    that pair is an edge of the parent graph. ``center`` distinguishes
    stars and neighborhoods that share a node set.
    """

    nodes: tuple
    adj: np.ndarray
    kind: str
    center: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.nodes)

    def key(self):
        return (self.kind, self.nodes, self.center)


def induced(g: Graph, nodes: Iterable[int], kind: str, center: Optional[int] = None) -> Substructure:
    """Build a Substructure for ``nodes``, reading edges off the parent graph."""
    nodes = tuple(sorted(set(int(v) for v in nodes)))
    for v in nodes:
        if not 0 <= v < g.num_nodes:
            raise ValueError(f"substructure node {v} outside graph with {g.num_nodes} nodes")
    pos = {v: i for i, v in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)), dtype=np.int8)
    for u, v in g.edges:
        if u in pos and v in pos:
            adj[pos[u], pos[v]] = 1
            adj[pos[v], pos[u]] = 1
    return Substructure(nodes=nodes, adj=adj, kind=kind, center=center)


def _adj_sets(g: Graph) -> list:
    sets = [set() for _ in range(g.num_nodes)]
    for u, v in g.edges:
        sets[u].add(v)
        sets[v].add(u)
    return sets


def enumerate_cycles(g: Graph, k_min: int = 3, k_max: int = 8) -> list:
    """All node sets whose induced subgraph is a simple cycle of length in range.

    Walks chordless paths anchored at their smallest node; a path closes
    into a cycle exactly when the frontier node is adjacent to the anchor,
    and may never be extended past such a node (the closing edge would
    become a chord). Each cycle is found once per traversal direction, so
    enforcing second-node < last-node reports it exactly once.
    """
    if not 3 <= k_min <= k_max:
        raise ValueError("need 3 <= k_min <= k_max")
    adj = _adj_sets(g)
    found = []

    def extend(anchor, path, members):
        u = path[-1]
        for w in sorted(adj[u]):
            if w <= anchor or w in members:
                continue
            if any(w in adj[x] for x in path[1:-1]):
                continue
            if anchor in adj[w]:
                size = len(path) + 1
                if k_min <= size <= k_max and path[1] < w:
                    found.append(tuple(sorted(members | {w})))
                continue
            if len(path) + 1 < k_max:
                extend(anchor, path + [w], members | {w})

    for s in range(g.num_nodes):
        for v in sorted(adj[s]):
            if v > s:
                extend(s, [s, v], {s, v})

    seen = set()
    out = []
    for nodes in found:
        if nodes not in seen:
            seen.add(nodes)
            out.append(induced(g, nodes, "cycle"))
    return out


def enumerate_stars(g: Graph, leaves_min: int = 2, leaves_max: int = 6) -> list:
    """All induced stars: a center plus 2..k mutually non-adjacent neighbors.

    Size counts leaves. Stars sharing a node set but having different
    centers are distinct items.
    """
    if leaves_min < 2:
        raise ValueError("a star needs at least 2 leaves")
    adj = _adj_sets(g)
    out = []

    def grow(center, nbrs, start, chosen):
        if len(chosen) >= leaves_min:
            out.append(induced(g, [center] + chosen, "star", center=center))
        if len(chosen) == leaves_max:
            return
        for i in range(start, len(nbrs)):
            w = nbrs[i]
            if any(w in adj[c] for c in chosen):
                continue
            grow(center, nbrs, i + 1, chosen + [w])

    for center in range(g.num_nodes):
        grow(center, sorted(adj[center]), 0, [])
    return out


def enumerate_paths(g: Graph, k_min: int = 4, k_max: int = 8) -> list:
    """All node sets whose induced subgraph is a simple path of that many nodes.

    Same chordless-walk pruning as cycles: a new node may touch only the
    current endpoint. A path is reported from its smaller endpoint only.
    """
    if not 2 <= k_min <= k_max:
        raise ValueError("need 2 <= k_min <= k_max")
    adj = _adj_sets(g)
    out = []
    seen = set()

    def walk(path, members):
        if len(path) >= k_min and path[0] < path[-1]:
            nodes = tuple(sorted(members))
            if nodes not in seen:
                seen.add(nodes)
                out.append(induced(g, nodes, "path"))
        if len(path) == k_max:
            return
        u = path[-1]
        for w in sorted(adj[u]):
            if w in members:
                continue
            if any(w in adj[x] for x in path[:-1]):
                continue
            walk(path + [w], members | {w})

    for start in range(g.num_nodes):
        walk([start], {start})
    return out


def khop_neighborhood(g: Graph, v: int, k: int = 2) -> Substructure:
    """Nodes within k hops of v, with induced adjacency."""
    if not 0 <= v < g.num_nodes:
        raise ValueError(f"node {v} out of range")
    adj = _adj_sets(g)
    dist = {v: 0}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return induced(g, dist.keys(), "khop", center=v)


def random_walk_neighborhood(g: Graph, v: int, steps: int = 10, rng=None) -> Substructure:
    """Visit set of one uniform random walk of ``steps`` steps from v.

    The walk stays put on nodes without neighbors, so an isolated start
    yields just {v}.
    """
    if not 0 <= v < g.num_nodes:
        raise ValueError(f"node {v} out of range")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng() if rng is None else rng
    adj = [sorted(s) for s in _adj_sets(g)]
    visited = {v}
    cur = v
    for _ in range(steps):
        if adj[cur]:
            cur = adj[cur][rng.integers(len(adj[cur]))]
            visited.add(cur)
    return induced(g, visited, "rwalk", center=v)


@dataclass
class VocabularyConfig:
    """Which substructure kinds to extract and their size ranges.

    Neighborhoods larger than ``s_max`` are truncated by uniform node
    subsampling that always keeps the center; geometric patterns never
    exceed their enumeration range.
    """

    kinds: tuple = GEOMETRIC_KINDS
    cycle_sizes: tuple = (3, 8)
    star_leaves: tuple = (2, 6)
    path_sizes: tuple = (4, 8)
    khop_k: int = 2
    rwalk_steps: int = 10
    s_max: int = 10

    def __post_init__(self):
        unknown = set(self.kinds) - set(ALL_KINDS)
        if unknown:
            raise ValueError(f"unknown substructure kinds: {sorted(unknown)}")
        self.kinds = tuple(self.kinds)


@dataclass
class SubstructureSet:
    """Deduplicated substructures of one graph, with a per-kind index."""

    items: list
    graph_id: int = 0
    by_kind: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.by_kind = {}
        for i, s in enumerate(self.items):
            self.by_kind.setdefault(s.kind, []).append(i)

    def __len__(self):
        return len(self.items)


def _truncate(g: Graph, sub: Substructure, s_max: int, rng) -> Substructure:
    if sub.size <= s_max:
        return sub
    others = [v for v in sub.nodes if v != sub.center]
    keep = rng.choice(len(others), size=s_max - 1, replace=False)
    nodes = [sub.center] + [others[i] for i in keep]
    return induced(g, nodes, sub.kind, center=sub.center)


def extract_all(g: Graph, cfg: VocabularyConfig = None, rng=None, graph_id: int = 0) -> SubstructureSet:
    """Union of all configured enumerations, deduplicated per kind rules.

    Cycles and paths deduplicate by node set; stars and neighborhoods also
    carry their center, so one node set can appear once per center.
    """
    cfg = VocabularyConfig() if cfg is None else cfg
    rng = np.random.default_rng() if rng is None else rng
    items = []
    if "cycle" in cfg.kinds:
        items.extend(enumerate_cycles(g, *cfg.cycle_sizes))
    if "star" in cfg.kinds:
        items.extend(enumerate_stars(g, *cfg.star_leaves))
    if "path" in cfg.kinds:
        items.extend(enumerate_paths(g, *cfg.path_sizes))
    if "khop" in cfg.kinds:
        for v in range(g.num_nodes):
            items.append(_truncate(g, khop_neighborhood(g, v, cfg.khop_k), cfg.s_max, rng))
    if "rwalk" in cfg.kinds:
        for v in range(g.num_nodes):
            items.append(_truncate(g, random_walk_neighborhood(g, v, cfg.rwalk_steps, rng), cfg.s_max, rng))
    seen = set()
    unique = []
    for s in items:
        if s.key() not in seen:
            seen.add(s.key())
            unique.append(s)
    return SubstructureSet(items=unique, graph_id=graph_id)


def save_cache(sets: Sequence[SubstructureSet], path) -> None:
    """Persist substructure sets as JSON; adjacency is rebuilt on load."""
    records = []
    for ss in sets:
        items = []
        for s in ss.items:
            rec = {"kind": s.kind, "nodes": list(s.nodes)}
            if s.center is not None:
                rec["center"] = s.center
            items.append(rec)
        records.append({"graph_id": ss.graph_id, "items": items})
    with open(path, "w") as fh:
        json.dump(records, fh)


def load_cache(path, graphs: Sequence[Graph]) -> list:
    """Load a cache written by :func:`save_cache`; graph_id indexes ``graphs``."""
    with open(path) as fh:
        records = json.load(fh)
    sets = []
    for rec in records:
        gid = rec["graph_id"]
        if not 0 <= gid < len(graphs):
            raise ValueError(f"cache graph_id {gid} has no matching graph")
        g = graphs[gid]
        items = [induced(g, it["nodes"], it["kind"], center=it.get("center")) for it in rec["items"]]
        sets.append(SubstructureSet(items=items, graph_id=gid))
    return sets
