"""Greedy coverage-balanced selection of substructures.

Selection starts with a kind-balanced random draw, then repeatedly pulls
items that cover the nodes still below the coverage threshold: under-covered
nodes make an item's count high, and items are drawn from the top of that
count ranking, so poorly covered regions catch up first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .substructures import SubstructureSet


@dataclass
class SamplerParams:
    thre: int = 1
    n_init: int = 4
    top_k: int = 4
    n_sample: int = 2
    m_max: int = 16

    def __post_init__(self):
        for name in ("thre", "n_init", "top_k", "n_sample", "m_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_sample > self.top_k:
            raise ValueError("n_sample must not exceed top_k")
        if self.m_max < self.n_init:
            raise ValueError("m_max must be at least n_init")

    @classmethod
    def for_graph(cls, num_nodes: int, thre: int = 1, m_max: int = None) -> "SamplerParams":
        """Default schedule: scales draw sizes with the graph so the sampled
        count stays below the node count and transformer cost stays quadratic
        in the graph size."""
        n_sample = max(1, math.ceil(num_nodes / 8))
        return cls(
            thre=thre,
            n_init=max(1, math.ceil(num_nodes / 4)),
            top_k=2 * n_sample,
            n_sample=n_sample,
            m_max=max(1, num_nodes) if m_max is None else m_max,
        )


def sample_substructures(sset: SubstructureSet, params: SamplerParams, rng, num_nodes: int = None) -> list:
    """Draw substructure indices until every node is covered ``thre`` times.

    Returns distinct indices into ``sset.items``. Stops when coverage is
    reached, when no unused item can still cover an under-covered node, or
    when ``m_max`` items have been drawn.
    """
    items = sset.items
    if not items:
        return []
    if num_nodes is None:
        num_nodes = 1 + max(max(s.nodes) for s in items)

    membership = np.zeros((len(items), num_nodes), dtype=np.int8)
    for i, s in enumerate(items):
        membership[i, list(s.nodes)] = 1

    cover = np.zeros(num_nodes, dtype=np.int64)
    chosen = []
    in_use = np.zeros(len(items), dtype=bool)

    def draw(idx):
        chosen.append(idx)
        in_use[idx] = True
        cover[:] += membership[idx]

    # initial draw: round-robin over kinds, uniform order within each kind
    pools = []
    for kind in sorted(sset.by_kind):
        pool = list(sset.by_kind[kind])
        rng.shuffle(pool)
        pools.append(pool)
    quota = min(params.n_init, params.m_max, len(items))
    while len(chosen) < quota and any(pools):
        for pool in pools:
            if pool and len(chosen) < quota:
                draw(pool.pop())

    while len(chosen) < params.m_max:
        left = cover < params.thre
        if not left.any():
            break
        unused = np.flatnonzero(~in_use)
        if unused.size == 0:
            break
        cnts = membership[unused] @ left.astype(np.int64)
        if cnts.max() == 0:
            break  # remaining items cannot reach any under-covered node
        # rank by count with uniformly random tie order, keep positive counts
        shuffled = rng.permutation(unused.size)
        ranked = sorted(shuffled, key=lambda j: -cnts[j])
        pool = [unused[j] for j in ranked if cnts[j] > 0][: params.top_k]
        take = min(params.n_sample, len(pool), params.m_max - len(chosen))
        for j in rng.choice(len(pool), size=take, replace=False):
            draw(pool[j])
    return chosen
