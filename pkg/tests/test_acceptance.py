"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. Tolerances and runtime limits are asserted here,
not logged advisorily.
"""

import time
from itertools import permutations

import numpy as np

from deepgraph.canonical import flatten_permuted, order_distribution
from deepgraph.capacity import attention_capacity, pattern_basis, verify_theorem1, verify_theorem3
from deepgraph.graph import Graph, all_pairs_distances
from deepgraph.model import ModelConfig, build_tokens, forward_tokens, init_params
from deepgraph.sampling import SamplerParams, sample_substructures
from deepgraph.substructures import (
    VocabularyConfig,
    enumerate_cycles,
    enumerate_paths,
    enumerate_stars,
    extract_all,
)
from deepgraph.training import TrainConfig, extract_for_graphs, gen_cycle_regression, train_model

from test_capacity import brute_force_capacity
from test_substructures import brute_cycles, brute_paths, brute_stars
from test_training import finite_difference_check, grad_check_setup


def report(num, name, ok, detail, elapsed, limit):
    status = "PASS" if ok and elapsed < limit else "FAIL"
    print(f"[criterion {num}] {status} {name}: {detail} ({elapsed:.1f}s, limit {limit:.0f}s)")
    assert ok, f"criterion {num} failed: {detail}"
    assert elapsed < limit, f"criterion {num} exceeded runtime limit: {elapsed:.1f}s"


def random_graph(rng, n, p):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return Graph(n, edges, [0] * n, [0] * len(edges))


def test_criterion_1_enumeration_oracle():
    t0 = time.time()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        g = random_graph(rng, int(rng.integers(3, 10)), float(rng.uniform(0.1, 0.75)))
        if {c.nodes for c in enumerate_cycles(g, 3, 8)} != brute_cycles(g, 3, 8):
            mismatches += 1
        if {p.nodes for p in enumerate_paths(g, 4, 8)} != brute_paths(g, 4, 8):
            mismatches += 1
        if {(s.nodes, s.center) for s in enumerate_stars(g, 2, 6)} != brute_stars(g, 2, 6):
            mismatches += 1
    report(1, "enumeration oracle", mismatches == 0,
           f"200 graphs, {mismatches} mismatches", time.time() - t0, 60)


def test_criterion_2_capacity_oracle():
    t0 = time.time()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        memberships = [tuple(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
                       for _ in range(m)]
        E = pattern_basis(memberships, n)
        H = rng.standard_normal((n, int(rng.integers(2, 5))))
        W = rng.standard_normal((H.shape[1], H.shape[1]))
        diff = abs(attention_capacity(H, E, W) - brute_force_capacity(H, E, W))
        worst = max(worst, diff)
    report(2, "capacity closed form vs vertex enumeration", worst <= 1e-9,
           f"1000 trials, max |diff|={worst:.2e}", time.time() - t0, 10)


def test_criterion_3_theorem1_bound():
    t0 = time.time()
    rep = verify_theorem1(depth=8, n=16, m=5, d=16, trials=1000, seed=103)
    ok = rep.violations == 0 and rep.alphas_below_one
    report(3, "theorem 1 bound", ok,
           f"{rep.trials} trials, {rep.violations} violations, "
           f"alpha in ({rep.min_alpha:.4f}, {rep.max_alpha:.4f})",
           time.time() - t0, 120)


def test_criterion_4_theorem3_ordering():
    t0 = time.time()
    details = []
    ok = True
    for n in (8, 16):
        rep = verify_theorem3(n=n, m=2, r_max=n // 2, d=n, trials=10000, seed=104)
        d = rep.details
        ok = ok and d["adversarial_strictly_below_local"]
        details.append(f"n={n}: adversarial={d['adversarial_min']:.3f} < local_min={d['local_min']:.3f}")
    report(4, "theorem 3 ordering", ok, "; ".join(details), time.time() - t0, 120)


def test_criterion_5_gradient_check():
    t0 = time.time()
    g, cfg, params, batch = grad_check_setup("graph_regression")
    assert cfg.n_layers == 2 and cfg.d_h == 8 and cfg.heads == 2
    assert g.num_nodes == 6 and batch.m == 2
    worst = finite_difference_check(params, batch, float(g.target), cfg.task,
                                    step=1e-4, tol=1e-4)
    report(5, "gradient check", worst < 1e-4,
           f"all parameter blocks, worst relative error {worst:.2e}",
           time.time() - t0, 60)


def test_criterion_6_capacity_decay_reproduction():
    t0 = time.time()
    rng = np.random.default_rng(106)
    graphs = gen_cycle_regression(10, (8, 14), 0.25, rng)
    sets = extract_for_graphs(graphs, rng=rng)
    layers = 24
    masked_cfg = ModelConfig(n_layers=layers, d_h=32, heads=4)
    unmasked_cfg = ModelConfig(n_layers=layers, d_h=32, heads=4, use_deepnorm=False)
    from deepgraph.capacity import normalized_capacity

    m_last, u_first, u_last = [], [], []
    for s in range(20):
        srng = np.random.default_rng(106000 + s)
        pm = init_params(masked_cfg, srng)
        pu = init_params(unmasked_cfg, srng)
        for g, sset in zip(graphs, sets):
            sp = SamplerParams.for_graph(g.num_nodes)
            idx = sample_substructures(sset, sp, srng, num_nodes=g.num_nodes)
            chosen = [sset.items[i] for i in idx]
            if len(chosen) < 2:
                continue
            E = pattern_basis([c.nodes for c in chosen], g.num_nodes)
            dist = all_pairs_distances(g)
            tm = forward_tokens(build_tokens(g, chosen, dist, srng, masked_cfg), pm)
            tu = forward_tokens(build_tokens(g, [], dist, srng, unmasked_cfg), pu)
            m_last.append(normalized_capacity(tm, E, pm, layers - 1))
            u_first.append(normalized_capacity(tu, E, pu, 0))
            u_last.append(normalized_capacity(tu, E, pu, layers - 1))
    decay = np.mean(u_last) < np.mean(u_first)
    masked_above = np.mean(m_last) > np.mean(u_last)
    report(6, "capacity decay reproduction", decay and masked_above,
           f"unmasked layer24={np.mean(u_last):.4f} < layer1={np.mean(u_first):.4f}; "
           f"masked layer24={np.mean(m_last):.4f} > unmasked layer24={np.mean(u_last):.4f}",
           time.time() - t0, 600)


def test_criterion_7_ablation_direction():
    t0 = time.time()
    rng = np.random.default_rng(107)
    graphs = gen_cycle_regression(600, (8, 16), 0.25, rng)
    train_g, eval_g = graphs[:500], graphs[500:]
    sets = extract_for_graphs(train_g, rng=np.random.default_rng(1))
    eval_sets = extract_for_graphs(eval_g, rng=np.random.default_rng(2))
    cfg = ModelConfig(n_layers=4, d_h=32, heads=4)
    finals = {"full": [], "-local_attention": []}
    for seed in range(4):
        for variant, local in (("full", True), ("-local_attention", False)):
            tcfg = TrainConfig(epochs=30, batch_size=16, lr_peak=1e-3, seed=seed)
            res = train_model(train_g, sets, cfg, tcfg, eval_g, eval_sets,
                              use_local_attention=local)
            finals[variant].append(res.history[-1].eval_metric)
    full_mae = float(np.mean(finals["full"]))
    nolocal_mae = float(np.mean(finals["-local_attention"]))
    report(7, "ablation direction", full_mae <= nolocal_mae,
           f"full eval MAE {full_mae:.4f} <= -local_attention {nolocal_mae:.4f} (4 seeds)",
           time.time() - t0, 1800)


def test_criterion_8_property_suite():
    t0 = time.time()
    problems = []

    # mask and row-stochasticity invariants over random models and graphs
    rng = np.random.default_rng(108)
    for _ in range(10):
        g = random_graph(rng, int(rng.integers(5, 10)), 0.4)
        cfg = ModelConfig(n_layers=2, d_h=8, heads=2)
        params = init_params(cfg, rng)
        sset = extract_all(g, VocabularyConfig(kinds=("khop",), khop_k=1), rng=rng)
        idx = sample_substructures(sset, SamplerParams.for_graph(g.num_nodes), rng,
                                   num_nodes=g.num_nodes)
        chosen = [sset.items[i] for i in idx]
        batch = build_tokens(g, chosen, all_pairs_distances(g), rng, cfg)
        trace = forward_tokens(batch, params)
        for attn in trace.attention:
            if not np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6):
                problems.append("attention row sums")
            if np.any(attn[:, batch.mask == -np.inf] != 0):
                problems.append("masked entry nonzero")
            support_rows = np.any(attn > 0, axis=0)
            if np.any(batch.mask[support_rows] != 0):
                problems.append("attention outside mask support")

    # sampler coverage invariant: thre=1, covering union, no cap pressure
    for _ in range(10):
        g = random_graph(rng, 10, 0.35)
        sset = extract_all(g, VocabularyConfig(kinds=("khop",), khop_k=2), rng=rng)
        p = SamplerParams(thre=1, n_init=2, top_k=4, n_sample=2, m_max=len(sset.items))
        picks = sample_substructures(sset, p, rng, num_nodes=g.num_nodes)
        covered = set()
        for i in picks:
            covered.update(sset.items[i].nodes)
        if covered != set(range(g.num_nodes)):
            problems.append("sampler coverage")

    # DFS permutation invariance: exhaustive rng-branch enumeration, <= 5 nodes
    def adj_of(n, edges):
        a = np.zeros((n, n), dtype=np.int8)
        for u, v in edges:
            a[u, v] = a[v, u] = 1
        return a

    shapes = [
        adj_of(2, [(0, 1)]),
        adj_of(3, [(0, 1), (1, 2)]),
        adj_of(3, [(0, 1), (1, 2), (0, 2)]),
        adj_of(4, [(0, 1), (1, 2), (2, 3)]),
        adj_of(4, [(0, 1), (0, 2), (0, 3)]),
        adj_of(4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
        adj_of(5, [(0, 1), (1, 2), (2, 3), (3, 4)]),
        adj_of(5, [(0, 1), (0, 2), (0, 3), (0, 4)]),
        adj_of(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]),
        adj_of(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]),
    ]

    def flat_dist(adj):
        dist = {}
        for perm, p in order_distribution(adj).items():
            key = flatten_permuted(adj, perm, 5).tobytes()
            dist[key] = dist.get(key, 0.0) + p
        return dist

    for adj in shapes:
        n = adj.shape[0]
        base = flat_dist(adj)
        for sigma in permutations(range(n)):
            p = list(sigma)
            other = flat_dist(adj[np.ix_(p, p)])
            if set(base) != set(other):
                problems.append("dfs support changed under relabeling")
                break
            if any(abs(base[k] - other[k]) > 1e-9 for k in base):
                problems.append("dfs distribution changed under relabeling")
                break

    report(8, "property suite", not problems,
           "mask/row-stochastic, sampler coverage, DFS invariance"
           + (f"; problems: {sorted(set(problems))}" if problems else ""),
           time.time() - t0, 300)
