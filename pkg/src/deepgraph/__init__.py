"""Substructure-token graph transformer and attention-capacity analysis."""

from .graph import (
    Graph,
    DistanceTable,
    MAX_DIST_BUCKET,
    all_pairs_distances,
    load_graphs_jsonl,
    save_graphs_jsonl,
    validate,
)
from .substructures import (
    Substructure,
    SubstructureSet,
    VocabularyConfig,
    enumerate_cycles,
    enumerate_paths,
    enumerate_stars,
    extract_all,
    khop_neighborhood,
    load_cache,
    random_walk_neighborhood,
    save_cache,
)
from .sampling import SamplerParams, sample_substructures
from .canonical import (
    CanonicalForm,
    canonicalize,
    canonicalize_pooled,
    dfs_order,
    order_distribution,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    TokenBatch,
    attention_forward,
    build_tokens,
    deepnorm_ln,
    forward_tokens,
    init_params,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    TrainResult,
    adam_step,
    backward,
    gen_community_nodes,
    gen_cycle_regression,
    loss,
    train_model,
)
from .capacity import (
    CapacityReport,
    alpha_coefficient,
    attention_capacity,
    capacity_report,
    gamma_coefficient,
    normalized_capacity,
    pattern_basis,
    spectral_norm,
    token_capacity,
    verify_theorem1,
    verify_theorem2,
    verify_theorem3,
)
from .estimators import DeepGraphNodeClassifier, DeepGraphRegressor, check_graphs

__version__ = "0.1.0"
