"""Scikit-learn style wrappers around the graph transformer.

`fit` takes a list of graphs (Graph objects or JSONL-style dicts), extracts
and caches substructures, and runs the Adam loop; `predict` runs forward
passes with freshly sampled substructures. Hyperparameters live in
``__init__`` verbatim so ``get_params``/``set_params`` and grid search work
as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .graph import Graph, all_pairs_distances, graph_from_dict, validate
from .substructures import VocabularyConfig, extract_all
from .sampling import SamplerParams, sample_substructures
from .model import (
    GRAPH_REGRESSION,
    NODE_CLASSIFICATION,
    ModelConfig,
    build_tokens,
    forward_tokens,
)
from .training import TrainConfig, train_model


def check_graphs(X) -> list:
    """Validate and normalize input graphs; dicts are converted."""
    graphs = []
    for i, item in enumerate(X):
        g = graph_from_dict(item) if isinstance(item, dict) else item
        if not isinstance(g, Graph):
            raise ValueError(f"item {i} is not a Graph or graph dict")
        problem = validate(g)
        if problem != "ok":
            raise ValueError(f"graph {i} invalid: {problem}")
        graphs.append(g)
    return graphs


class _DeepGraphBase(BaseEstimator):
    def __init__(self, n_layers=4, d_h=32, heads=4, epochs=30, batch_size=16,
                 lr_peak=1e-3, warmup_steps=None, substructure_kinds=("cycle", "star", "path"),
                 thre=1, use_local_attention=True, use_substructure_encoding=True,
                 use_deepnorm=True, num_node_feats=8, num_edge_feats=4,
                 num_classes=2, random_state=0):
        self.n_layers = n_layers
        self.d_h = d_h
        self.heads = heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_peak = lr_peak
        self.warmup_steps = warmup_steps
        self.substructure_kinds = substructure_kinds
        self.thre = thre
        self.use_local_attention = use_local_attention
        self.use_substructure_encoding = use_substructure_encoding
        self.use_deepnorm = use_deepnorm
        self.num_node_feats = num_node_feats
        self.num_edge_feats = num_edge_feats
        self.num_classes = num_classes
        self.random_state = random_state

    _task = GRAPH_REGRESSION

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            n_layers=self.n_layers, d_h=self.d_h, heads=self.heads,
            num_node_feats=self.num_node_feats, num_edge_feats=self.num_edge_feats,
            task=self._task, num_classes=self.num_classes,
            use_deepnorm=self.use_deepnorm,
            use_substructure_encoding=self.use_substructure_encoding,
        )

    def _fit_graphs(self, X, y):
        graphs = check_graphs(X)
        if y is not None:
            if len(y) != len(graphs):
                raise ValueError("y length does not match X")
            graphs = [Graph(g.num_nodes, g.edges, g.node_feat, g.edge_feat, target=t)
                      for g, t in zip(graphs, y)]
        for i, g in enumerate(graphs):
            if g.target is None:
                raise ValueError(f"graph {i} has no target and no y was given")
        rng = np.random.default_rng(self.random_state)
        vocab = VocabularyConfig(kinds=tuple(self.substructure_kinds))
        subsets = [extract_all(g, vocab, rng, graph_id=i) for i, g in enumerate(graphs)]
        tcfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           lr_peak=self.lr_peak, warmup_steps=self.warmup_steps,
                           seed=self.random_state, task=self._task)
        result = train_model(graphs, subsets, self._model_config(), tcfg,
                             use_local_attention=self.use_local_attention,
                             sampler_params=None)
        self.params_ = result.params
        self.history_ = result.history
        self.vocab_ = vocab
        return self

    def _forward_one(self, g: Graph, rng):
        if self.use_local_attention:
            sset = extract_all(g, self.vocab_, rng)
            sp = SamplerParams.for_graph(g.num_nodes, thre=self.thre)
            idx = sample_substructures(sset, sp, rng, num_nodes=g.num_nodes)
            chosen = [sset.items[i] for i in idx]
        else:
            chosen = []
        batch = build_tokens(g, chosen, all_pairs_distances(g), rng, self.params_.config)
        return forward_tokens(batch, self.params_)

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict")


class DeepGraphRegressor(_DeepGraphBase, RegressorMixin):
    """Graph-level regressor; targets are real scalars per graph."""

    _task = GRAPH_REGRESSION

    def fit(self, X, y=None):
        return self._fit_graphs(X, y)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        graphs = check_graphs(X)
        rng = np.random.default_rng(self.random_state)
        return np.array([self._forward_one(g, rng).prediction for g in graphs])


class DeepGraphNodeClassifier(_DeepGraphBase):
    """Per-node classifier; targets are integer label sequences per graph.

    Predictions are ragged (one label array per graph), so ``score`` reports
    mean per-graph node accuracy instead of the flat sklearn default.
    """

    _task = NODE_CLASSIFICATION

    def fit(self, X, y=None):
        return self._fit_graphs(X, y)

    def predict(self, X) -> list:
        self._check_fitted()
        graphs = check_graphs(X)
        rng = np.random.default_rng(self.random_state)
        return [np.argmax(self._forward_one(g, rng).prediction, axis=1) for g in graphs]

    def predict_proba(self, X) -> list:
        self._check_fitted()
        graphs = check_graphs(X)
        rng = np.random.default_rng(self.random_state)
        out = []
        for g in graphs:
            logits = self._forward_one(g, rng).prediction
            shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
            out.append(shifted / shifted.sum(axis=1, keepdims=True))
        return out

    def score(self, X, y=None) -> float:
        preds = self.predict(X)
        graphs = check_graphs(X)
        labels = y if y is not None else [g.target for g in graphs]
        accs = [float(np.mean(np.asarray(p) == np.asarray(t))) for p, t in zip(preds, labels)]
        return float(np.mean(accs))
