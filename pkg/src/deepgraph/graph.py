"""Undirected graph container, validation, and all-pairs BFS distances.

Graphs are plain node/edge lists with small integer categories attached to
nodes and edges. Distances feed the relative-position attention biases, so
alongside the hop counts we keep one deterministic shortest path (as a list
of edge indices) for every ordered node pair.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

# Hop-distance bucket reserved for unreachable pairs. Shared with the
# attention bias table, which adds one more bucket for substructure tokens.
MAX_DIST_BUCKET = 64


@dataclass(frozen=True)
class Graph:
    """Undirected graph with categorical node/edge features.

    Edges are unordered pairs stored once. ``target`` is either a real
    scalar (graph-level task), a per-node integer label list (node-level
    task), or None.
    """

    num_nodes: int
    edges: tuple
    node_feat: tuple
    edge_feat: tuple
    target: Optional[Union[float, tuple]] = None

    def __init__(self, num_nodes, edges, node_feat, edge_feat, target=None):
        object.__setattr__(self, "num_nodes", int(num_nodes))
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in edges))
        object.__setattr__(self, "node_feat", tuple(int(x) for x in node_feat))
        object.__setattr__(self, "edge_feat", tuple(int(x) for x in edge_feat))
        if target is not None and not np.isscalar(target):
            target = tuple(int(t) for t in target)
        object.__setattr__(self, "target", target)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix."""
        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=np.int8)
        for u, v in self.edges:
            adj[u, v] = 1
            adj[v, u] = 1
        return adj

    def neighbors(self) -> list:
        """Sorted neighbor lists, one per node."""
        nbrs = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return [sorted(n) for n in nbrs]

    def edge_index(self) -> dict:
        """Map from unordered node pair to position in ``edges``."""
        idx = {}
        for k, (u, v) in enumerate(self.edges):
            idx[(u, v)] = k
            idx[(v, u)] = k
        return idx


@dataclass
class DistanceTable:
    """Hop distances plus one deterministic shortest path per ordered pair.

    ``dis[i, j]`` is the BFS hop count, or ``MAX_DIST_BUCKET`` when j is
    unreachable from i. ``sp_edges[i][j]`` lists the edge indices along one
    shortest path from i to j (empty when unreachable or i == j).
    """

    dis: np.ndarray
    sp_edges: list = field(repr=False)


def validate(g: Graph) -> str:
    """Check graph invariants; returns "ok" or the first violation found."""
    if g.num_nodes < 0:
        return "negative node count"
    seen = set()
    for u, v in g.edges:
        if not (0 <= u < g.num_nodes and 0 <= v < g.num_nodes):
            return f"endpoint out of range: ({u}, {v})"
        if u == v:
            return f"self-loop at node {u}"
        key = (min(u, v), max(u, v))
        if key in seen:
            return f"duplicate edge {key}"
        seen.add(key)
    if len(g.node_feat) != g.num_nodes:
        return f"node_feat length {len(g.node_feat)} != num_nodes {g.num_nodes}"
    if len(g.edge_feat) != len(g.edges):
        return f"edge_feat length {len(g.edge_feat)} != edge count {len(g.edges)}"
    if any(x < 0 for x in g.node_feat):
        return "negative node feature"
    if any(x < 0 for x in g.edge_feat):
        return "negative edge feature"
    return "ok"


def all_pairs_distances(g: Graph) -> DistanceTable:
    """BFS hop distances and one deterministic shortest path per pair.

    Ties are broken by always recording the lexicographically smallest
    predecessor on the previous BFS level, so the chosen path is unique for
    a given graph. Unreachable pairs get distance ``MAX_DIST_BUCKET``.
    """
    n = g.num_nodes
    nbrs = g.neighbors()
    eidx = g.edge_index()
    dis = np.full((n, n), MAX_DIST_BUCKET, dtype=np.int64)
    sp_edges = [[[] for _ in range(n)] for _ in range(n)]

    for src in range(n):
        dist = [-1] * n
        pred = [-1] * n
        dist[src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    pred[v] = u
                    queue.append(v)
                elif dist[v] == dist[u] + 1 and u < pred[v]:
                    pred[v] = u
        for dst in range(n):
            if dist[dst] < 0:
                continue
            dis[src, dst] = dist[dst]
            path = []
            v = dst
            while v != src:
                u = pred[v]
                path.append(eidx[(u, v)])
                v = u
            sp_edges[src][dst] = path[::-1]
    return DistanceTable(dis=dis, sp_edges=sp_edges)


def graph_to_dict(g: Graph) -> dict:
    target = g.target
    if target is not None and not np.isscalar(target):
        target = list(target)
    elif target is not None:
        target = float(target)
    return {
        "num_nodes": g.num_nodes,
        "edges": [list(e) for e in g.edges],
        "node_feat": list(g.node_feat),
        "edge_feat": list(g.edge_feat),
        "target": target,
    }


def graph_from_dict(obj: dict) -> Graph:
    missing = {"num_nodes", "edges", "node_feat", "edge_feat"} - set(obj)
    if missing:
        raise ValueError(f"graph record missing keys: {sorted(missing)}")
    return Graph(
        num_nodes=obj["num_nodes"],
        edges=[tuple(e) for e in obj["edges"]],
        node_feat=obj["node_feat"],
        edge_feat=obj["edge_feat"],
        target=obj.get("target"),
    )


def save_graphs_jsonl(graphs: Sequence[Graph], path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_dict(g)) + "\n")


def load_graphs_jsonl(path) -> list:
    graphs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON: {exc}") from exc
            g = graph_from_dict(obj)
            problem = validate(g)
            if problem != "ok":
                raise ValueError(f"line {line_no}: invalid graph: {problem}")
            graphs.append(g)
    return graphs
