"""Substructure-token graph transformer: tokens, masked attention, forward pass.

Tokens are the graph's nodes followed by one token per sampled substructure.
Node pairs attend globally with relative-position biases (hop-distance bucket
plus the mean edge-feature bias along one shortest path); substructure tokens
attend only their member nodes, enforced by an additive 0/-inf mask. Residual
connections are scaled by a depth-dependent constant before layer norm so
deep stacks stay trainable.

Everything runs in float64 on numpy; speed is not a goal, exact gradient
checks and capacity measurements are.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .graph import Graph, DistanceTable, MAX_DIST_BUCKET
from .canonical import canonicalize, DEFAULT_S_MAX

UNREACHABLE_BUCKET = MAX_DIST_BUCKET          # 64
SUBTOKEN_BUCKET = MAX_DIST_BUCKET + 1         # pairs involving a substructure token
NUM_DIST_BUCKETS = MAX_DIST_BUCKET + 2
LN_EPS = 1e-5

GRAPH_REGRESSION = "graph_regression"
NODE_CLASSIFICATION = "node_classification"


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_h: int = 32
    heads: int = 4
    d_k: Optional[int] = None
    d_f: Optional[int] = None
    num_node_feats: int = 8
    num_edge_feats: int = 4
    s_max: int = DEFAULT_S_MAX
    task: str = GRAPH_REGRESSION
    num_classes: int = 2
    use_deepnorm: bool = True
    use_substructure_encoding: bool = True

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = max(1, self.d_h // self.heads)
        if self.d_f is None:
            self.d_f = 2 * self.d_h
        if self.task not in (GRAPH_REGRESSION, NODE_CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def eta(self) -> float:
        """Residual scale inside layer norm; (2L)^(1/4) stabilizes deep stacks."""
        if not self.use_deepnorm or self.n_layers == 0:
            return 1.0
        return float((2 * self.n_layers) ** 0.25)

    @property
    def beta(self) -> float:
        """Init downscale for value/output/FFN weights, paired with eta."""
        if not self.use_deepnorm or self.n_layers == 0:
            return 1.0
        return float((8 * self.n_layers) ** -0.25)

    @property
    def flat_len(self) -> int:
        return self.s_max * (self.s_max - 1) // 2


LAYER_TENSORS = (
    "wq", "wk", "wv", "wo",
    "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
    "ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias",
)


class ModelParams:
    """All learnable tensors, addressable by dotted path (e.g. "layer.3.wq")."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, path: str) -> np.ndarray:
        return self.tensors[path]

    def layer(self, i: int) -> dict:
        return {name: self.tensors[f"layer.{i}.{name}"] for name in LAYER_TENSORS}

    def paths(self) -> list:
        return sorted(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: ModelConfig, rng) -> ModelParams:
    c = config
    beta = c.beta
    t = {}
    t["embed.node"] = rng.normal(0, c.d_h ** -0.5, (c.num_node_feats, c.d_h))
    t["embed.sub.w"] = rng.normal(0, c.flat_len ** -0.5, (c.flat_len, c.d_h))
    t["embed.sub.b"] = np.zeros(c.d_h)
    t["embed.sub.generic"] = rng.normal(0, c.d_h ** -0.5, c.d_h)
    t["bias.dist"] = rng.normal(0, 0.02, (c.heads, NUM_DIST_BUCKETS))
    t["bias.edge"] = rng.normal(0, 0.02, (c.heads, c.num_edge_feats))
    for i in range(c.n_layers):
        p = f"layer.{i}."
        t[p + "wq"] = rng.normal(0, c.d_h ** -0.5, (c.heads, c.d_h, c.d_k))
        t[p + "wk"] = rng.normal(0, c.d_h ** -0.5, (c.heads, c.d_h, c.d_k))
        t[p + "wv"] = beta * rng.normal(0, c.d_h ** -0.5, (c.heads, c.d_h, c.d_k))
        t[p + "wo"] = beta * rng.normal(0, c.d_k ** -0.5, (c.heads, c.d_k, c.d_h))
        t[p + "ffn.w1"] = beta * rng.normal(0, c.d_h ** -0.5, (c.d_h, c.d_f))
        t[p + "ffn.b1"] = np.zeros(c.d_f)
        t[p + "ffn.w2"] = beta * rng.normal(0, c.d_f ** -0.5, (c.d_f, c.d_h))
        t[p + "ffn.b2"] = np.zeros(c.d_h)
        t[p + "ln1.gain"] = np.ones(c.d_h)
        t[p + "ln1.bias"] = np.zeros(c.d_h)
        t[p + "ln2.gain"] = np.ones(c.d_h)
        t[p + "ln2.bias"] = np.zeros(c.d_h)
    if c.task == GRAPH_REGRESSION:
        t["readout.w"] = rng.normal(0, c.d_h ** -0.5, c.d_h)
        t["readout.b"] = np.zeros(1)
    else:
        t["readout.w"] = rng.normal(0, c.d_h ** -0.5, (c.d_h, c.num_classes))
        t["readout.b"] = np.zeros(c.num_classes)
    return ModelParams(c, t)


def zeros_like_params(params: ModelParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def save_checkpoint(params: ModelParams, path) -> None:
    blob = {
        "config": asdict(params.config),
        "params": {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in params.tensors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        blob = json.load(fh)
    config = ModelConfig(**blob["config"])
    tensors = {
        k: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for k, rec in blob["params"].items()
    }
    return ModelParams(config, tensors)


@dataclass
class TokenBatch:
    """Transformer input for one graph: node tokens then substructure tokens."""

    n: int
    m: int
    node_feat_ids: np.ndarray
    canon_forms: list
    flat_adjs: np.ndarray                 # (m, flat_len) float64
    mask: np.ndarray                      # (n+m, n+m), 0 or -inf
    dist_ids: np.ndarray                  # (n+m, n+m) bias bucket per pair
    sp_edge_feats: list                   # [i][j] -> edge feature ids on the shortest path
    sp_feat_weights: np.ndarray           # (n+m, n+m, F) mean-bias weights
    membership: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.n + self.m


def build_tokens(g: Graph, chosen, d: DistanceTable, rng, config: ModelConfig) -> TokenBatch:
    """Assemble the token batch: mask, bias indices, canonical substructure forms.

    ``chosen`` is a list of Substructure objects; one canonical form is
    sampled per substructure. Raises on substructures referencing nodes
    outside the graph and on feature ids outside the embedding tables.
    """
    n = g.num_nodes
    m = len(chosen)
    total = n + m

    feats = np.asarray(g.node_feat, dtype=np.int64)
    if feats.size and feats.max() >= config.num_node_feats:
        raise ValueError(f"node feature {feats.max()} >= table size {config.num_node_feats}")
    efeats = np.asarray(g.edge_feat, dtype=np.int64)
    if efeats.size and efeats.max() >= config.num_edge_feats:
        raise ValueError(f"edge feature {efeats.max()} >= table size {config.num_edge_feats}")

    membership = []
    canon_forms = []
    flat_adjs = np.zeros((m, config.flat_len))
    for t, sub in enumerate(chosen):
        if any(not 0 <= v < n for v in sub.nodes):
            raise ValueError(f"substructure node out of range for {n}-node graph: {sub.nodes}")
        membership.append(tuple(sub.nodes))
        form = canonicalize(sub, rng, config.s_max)
        canon_forms.append(form)
        flat_adjs[t] = form.flat_adj

    mask = np.zeros((total, total))
    for t, nodes in enumerate(membership):
        row = np.full(total, -np.inf)
        row[list(nodes)] = 0.0
        mask[n + t, :] = row
        mask[:, n + t] = row
    # substructure-substructure pairs stay masked even for overlapping
    # memberships: column/row rewrites above already guarantee it
    dist_ids = np.full((total, total), SUBTOKEN_BUCKET, dtype=np.int64)
    node_dis = np.minimum(d.dis[:n, :n], UNREACHABLE_BUCKET - 1)
    node_dis = np.where(d.dis[:n, :n] >= UNREACHABLE_BUCKET, UNREACHABLE_BUCKET, node_dis)
    dist_ids[:n, :n] = node_dis

    sp_edge_feats = [[[] for _ in range(n)] for _ in range(n)]
    weights = np.zeros((total, total, config.num_edge_feats))
    for i in range(n):
        for j in range(n):
            path = d.sp_edges[i][j]
            if not path:
                continue
            ids = [g.edge_feat[e] for e in path]
            sp_edge_feats[i][j] = ids
            for f in ids:
                weights[i, j, f] += 1.0 / len(ids)

    return TokenBatch(
        n=n, m=m,
        node_feat_ids=feats,
        canon_forms=canon_forms,
        flat_adjs=flat_adjs,
        mask=mask,
        dist_ids=dist_ids,
        sp_edge_feats=sp_edge_feats,
        sp_feat_weights=weights,
        membership=membership,
    )


@dataclass
class ForwardTrace:
    """Per-layer states kept for backprop and capacity probing."""

    hidden: list                         # H_1 .. H_{L+1}
    attention: list                      # per layer, (heads, N, N) post-softmax
    caches: list                         # per layer intermediates
    batch: TokenBatch
    prediction: object = None

    @property
    def n(self) -> int:
        return self.batch.n

    @property
    def m(self) -> int:
        return self.batch.m


def masked_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax treating -inf as hard zeros; a fully masked row (which
    construction never produces) falls back to uniform."""
    rowmax = scores.max(axis=-1, keepdims=True)
    safe = np.where(np.isfinite(rowmax), rowmax, 0.0)
    expd = np.exp(scores - safe)
    denom = expd.sum(axis=-1, keepdims=True)
    uniform = np.full_like(expd, 1.0 / scores.shape[-1])
    return np.where(denom > 0, expd / np.where(denom > 0, denom, 1.0), uniform)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + LN_EPS)
    normed = (x - mu) / sigma
    return normed * gain + bias, {"normed": normed, "sigma": sigma}


def deepnorm_ln(x: np.ndarray, f_x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eta: float) -> np.ndarray:
    """Scaled-residual layer norm: standardize eta*x + f_x per token, then
    apply gain and bias."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    out, _ = _layer_norm(eta * np.asarray(x) + np.asarray(f_x), gain, bias)
    return out


def relative_position_bias(batch: TokenBatch, params: ModelParams) -> np.ndarray:
    """Per-head additive attention bias from distance buckets and shortest-path
    edge features."""
    bd = params["bias.dist"]
    br = params["bias.edge"]
    bias = bd[:, batch.dist_ids]                                   # (heads, N, N)
    bias = bias + np.einsum("ijf,hf->hij", batch.sp_feat_weights, br)
    return bias


def _attention_sublayer(x, lp, bias, mask, eta, d_k):
    heads = lp["wq"].shape[0]
    total = x.shape[0]
    scale = 1.0 / np.sqrt(d_k)
    q = np.einsum("nd,hdk->hnk", x, lp["wq"])
    k = np.einsum("nd,hdk->hnk", x, lp["wk"])
    scores = np.einsum("hik,hjk->hij", q, k) * scale + bias + mask[None, :, :]
    attn = masked_softmax(scores)
    ctx = np.einsum("hij,jd->hid", attn, x)
    head_v = np.einsum("hnd,hdk->hnk", ctx, lp["wv"])
    attn_out = np.einsum("hnk,hkd->nd", head_v, lp["wo"])
    pre = eta * x + attn_out
    out, ln_cache = _layer_norm(pre, lp["ln1.gain"], lp["ln1.bias"])
    cache = {"x": x, "q": q, "k": k, "attn": attn, "ctx": ctx, "head_v": head_v,
             "attn_out": attn_out, "pre1": pre, "ln1": ln_cache, "x1": out}
    return out, attn, cache


def _ffn_sublayer(x1, lp, eta):
    u = x1 @ lp["ffn.w1"] + lp["ffn.b1"]
    r = np.maximum(u, 0.0)
    v = r @ lp["ffn.w2"] + lp["ffn.b2"]
    pre = eta * x1 + v
    out, ln_cache = _layer_norm(pre, lp["ln2.gain"], lp["ln2.bias"])
    cache = {"u": u, "r": r, "v": v, "pre2": pre, "ln2": ln_cache}
    return out, cache


def attention_forward(h: np.ndarray, params: ModelParams, layer: int, batch: TokenBatch):
    """One masked attention sublayer (with its layer norm) at ``layer``.

    Returns the new hidden states and the per-head post-softmax attention.
    """
    lp = params.layer(layer)
    bias = relative_position_bias(batch, params)
    out, attn, _ = _attention_sublayer(h, lp, bias, batch.mask, params.config.eta, params.config.d_k)
    return out, attn


def embed_tokens(batch: TokenBatch, params: ModelParams) -> np.ndarray:
    c = params.config
    h = np.zeros((batch.total, c.d_h))
    h[: batch.n] = params["embed.node"][batch.node_feat_ids]
    if batch.m:
        if c.use_substructure_encoding:
            h[batch.n:] = batch.flat_adjs @ params["embed.sub.w"] + params["embed.sub.b"]
        else:
            h[batch.n:] = params["embed.sub.generic"]
    return h


def readout(h_final: np.ndarray, batch: TokenBatch, params: ModelParams):
    c = params.config
    nodes = h_final[: batch.n]
    if c.task == GRAPH_REGRESSION:
        pooled = nodes.mean(axis=0)
        return float(pooled @ params["readout.w"] + params["readout.b"][0])
    return nodes @ params["readout.w"] + params["readout.b"]


def forward_tokens(batch: TokenBatch, params: ModelParams) -> ForwardTrace:
    """Full forward pass over a prepared token batch."""
    c = params.config
    bias = relative_position_bias(batch, params)
    h = embed_tokens(batch, params)
    hidden = [h]
    attention = []
    caches = []
    for layer in range(c.n_layers):
        lp = params.layer(layer)
        x1, attn, cache_a = _attention_sublayer(h, lp, bias, batch.mask, c.eta, c.d_k)
        h, cache_f = _ffn_sublayer(x1, lp, c.eta)
        cache_a.update(cache_f)
        hidden.append(h)
        attention.append(attn)
        caches.append(cache_a)
    trace = ForwardTrace(hidden=hidden, attention=attention, caches=caches, batch=batch)
    trace.prediction = readout(h, batch, params)
    return trace


def model_forward(g: Graph, chosen, params: ModelParams, rng, dist: DistanceTable = None):
    """Convenience wrapper: build tokens for ``g`` and run the forward pass.

    Returns (prediction, trace); the trace carries the token batch.
    """
    from .graph import all_pairs_distances

    if dist is None:
        dist = all_pairs_distances(g)
    batch = build_tokens(g, chosen, dist, rng, params.config)
    trace = forward_tokens(batch, params)
    return trace.prediction, trace
