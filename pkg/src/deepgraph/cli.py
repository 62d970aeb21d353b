"""Command-line entry point.

Subcommands: gen, extract, sample, train, capacity, verify-bounds,
repro-capacity, ablate. Every run writes a resolved-config snapshot beside
its outputs, and every CSV starts with a ``# seed=...`` comment line. Exit
codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .graph import all_pairs_distances, load_graphs_jsonl, save_graphs_jsonl
from .substructures import (
    ALL_KINDS,
    VocabularyConfig,
    extract_all,
    load_cache,
    save_cache,
)
from .sampling import SamplerParams, sample_substructures
from .model import (
    GRAPH_REGRESSION,
    ModelConfig,
    build_tokens,
    forward_tokens,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    extract_for_graphs,
    gen_community_nodes,
    gen_cycle_regression,
    train_model,
)
from .capacity import (
    capacity_report,
    normalized_capacity,
    pattern_basis,
    token_capacity,
    verify_theorem1,
    verify_theorem2,
    verify_theorem3,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ABLATION_VARIANTS = ("full", "-local_attention", "-substructure_encoding", "-deepnorm")
_VARIANT_ALIASES = {
    "no_local_attention": "-local_attention",
    "no_substructure_encoding": "-substructure_encoding",
    "no_deepnorm": "-deepnorm",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_config_snapshot(out_path: str, settings: dict) -> None:
    if os.path.isdir(out_path):
        snap = os.path.join(out_path, "resolved_config.json")
    else:
        snap = out_path + ".config.json"
    with open(snap, "w") as fh:
        json.dump(settings, fh, indent=2, sort_keys=True)


def _write_csv(path: str, seed, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _settings(args, keys, config_section=None) -> dict:
    """Merge defaults <- config file <- explicitly passed flags."""
    merged = {}
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = _load_toml(args.config)
        if config_section and config_section in file_cfg:
            file_cfg = file_cfg[config_section]
    for key, default in keys.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, default)
        merged[key] = value
    return merged


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.task == "cycles":
        graphs = gen_cycle_regression(args.n, (args.nodes_min, args.nodes_max),
                                      args.edge_prob, rng)
    else:
        graphs = gen_community_nodes(args.n, args.nodes_per_block, args.p_in,
                                     args.p_out, rng, args.reveal_frac)
    save_graphs_jsonl(graphs, args.out)
    _write_config_snapshot(args.out, {
        "command": "gen", "task": args.task, "n": args.n, "seed": args.seed,
        "nodes_min": args.nodes_min, "nodes_max": args.nodes_max,
        "edge_prob": args.edge_prob, "nodes_per_block": args.nodes_per_block,
        "p_in": args.p_in, "p_out": args.p_out, "reveal_frac": args.reveal_frac,
        "out": args.out,
    })
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    graphs = load_graphs_jsonl(args.input)
    kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    cfg = VocabularyConfig(kinds=kinds, khop_k=args.khop_k,
                           rwalk_steps=args.rwalk_steps, s_max=args.s_max)
    rng = np.random.default_rng(args.seed)
    sets = [extract_all(g, cfg, rng, graph_id=i) for i, g in enumerate(graphs)]
    save_cache(sets, args.out)
    _write_config_snapshot(args.out, {
        "command": "extract", "input": args.input, "out": args.out,
        "kinds": list(kinds), "khop_k": args.khop_k, "rwalk_steps": args.rwalk_steps,
        "s_max": args.s_max, "seed": args.seed,
    })
    total = sum(len(s) for s in sets)
    print(f"extracted {total} substructures over {len(graphs)} graphs -> {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    graphs = load_graphs_jsonl(args.input)
    sets = load_cache(args.cache, graphs)
    rng = np.random.default_rng(args.seed)
    out = []
    for g, sset in zip(graphs, sets):
        if args.n_init is None:
            sp = SamplerParams.for_graph(g.num_nodes, thre=args.thre, m_max=args.m_max)
        else:
            sp = SamplerParams(thre=args.thre, n_init=args.n_init, top_k=args.top_k,
                               n_sample=args.n_sample,
                               m_max=args.m_max or g.num_nodes)
        idx = sample_substructures(sset, sp, rng, num_nodes=g.num_nodes)
        out.append({"graph_id": sset.graph_id, "indices": [int(i) for i in idx]})
    with open(args.out, "w") as fh:
        json.dump(out, fh)
    _write_config_snapshot(args.out, {
        "command": "sample", "input": args.input, "cache": args.cache,
        "out": args.out, "seed": args.seed, "thre": args.thre,
        "n_init": args.n_init, "top_k": args.top_k, "n_sample": args.n_sample,
        "m_max": args.m_max,
    })
    print(f"sampled substructures for {len(out)} graphs -> {args.out}")
    return EXIT_OK


_TRAIN_KEYS = {
    "epochs": 30, "batch_size": 16, "lr_peak": 1e-3, "warmup_steps": None,
    "layers": 4, "d_h": 32, "heads": 4, "task": GRAPH_REGRESSION,
    "variant": "full", "thre": 1, "num_classes": 2,
}


def _variant_flags(variant: str):
    variant = _VARIANT_ALIASES.get(variant, variant)
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; allowed: {ABLATION_VARIANTS}")
    return {
        "use_local_attention": variant != "-local_attention",
        "use_substructure_encoding": variant != "-substructure_encoding",
        "use_deepnorm": variant != "-deepnorm",
    }


def _run_training(graphs, sets, eval_graphs, eval_sets, settings, seed):
    flags = _variant_flags(settings["variant"])
    config = ModelConfig(
        n_layers=int(settings["layers"]), d_h=int(settings["d_h"]),
        heads=int(settings["heads"]), task=settings["task"],
        num_classes=int(settings["num_classes"]),
        use_deepnorm=flags["use_deepnorm"],
        use_substructure_encoding=flags["use_substructure_encoding"],
    )
    tcfg = TrainConfig(
        epochs=int(settings["epochs"]), batch_size=int(settings["batch_size"]),
        lr_peak=float(settings["lr_peak"]),
        warmup_steps=None if settings["warmup_steps"] is None else int(settings["warmup_steps"]),
        seed=seed, task=settings["task"],
    )
    return train_model(graphs, sets, config, tcfg, eval_graphs, eval_sets,
                       use_local_attention=flags["use_local_attention"])


def cmd_train(args) -> int:
    settings = _settings(args, _TRAIN_KEYS, config_section="train")
    graphs = load_graphs_jsonl(args.data)
    sets = (load_cache(args.cache, graphs) if args.cache
            else extract_for_graphs(graphs, rng=np.random.default_rng(args.seed)))
    eval_graphs, eval_sets = [], []
    if args.eval_data:
        eval_graphs = load_graphs_jsonl(args.eval_data)
        eval_sets = extract_for_graphs(eval_graphs, rng=np.random.default_rng(args.seed))
    os.makedirs(args.out, exist_ok=True)
    result = _run_training(graphs, sets, eval_graphs, eval_sets, settings, args.seed)
    if not all(np.isfinite(ep.train_loss) for ep in result.history):
        raise RuntimeError("training produced a non-finite loss")
    save_checkpoint(result.params, os.path.join(args.out, "model.json"))
    _write_csv(os.path.join(args.out, "train_log.csv"), args.seed,
               ["epoch", "train_loss", "eval_metric", "lr"],
               [(ep.epoch, ep.train_loss, ep.eval_metric, ep.lr) for ep in result.history])
    _write_config_snapshot(args.out, {"command": "train", "seed": args.seed,
                                      "data": args.data, "cache": args.cache,
                                      "eval_data": args.eval_data, **settings})
    print(f"trained {settings['variant']} for {settings['epochs']} epochs -> {args.out}")
    return EXIT_OK


def _mean_capacity_rows(graphs, sets, params, rng, use_local_attention=True):
    """Per-layer capacity columns averaged across graphs."""
    n_layers = params.config.n_layers
    sums = np.zeros((n_layers, 3))
    counts = np.zeros((n_layers, 3))
    for g, sset in zip(graphs, sets):
        sp = SamplerParams.for_graph(g.num_nodes)
        idx = sample_substructures(sset, sp, rng, num_nodes=g.num_nodes)
        chosen = [sset.items[i] for i in idx]
        if not chosen:
            continue
        batch = build_tokens(g, chosen if use_local_attention else [],
                             all_pairs_distances(g), rng, params.config)
        trace = forward_tokens(batch, params)
        E = pattern_basis([s.nodes for s in chosen], g.num_nodes)
        for layer in range(n_layers):
            sums[layer, 0] += normalized_capacity(trace, E, params, layer)
            counts[layer, 0] += 1
            if use_local_attention and batch.m >= 2:
                sums[layer, 1] += token_capacity(trace, params, layer)
                counts[layer, 1] += 1
    rows = []
    for layer in range(n_layers):
        norm = sums[layer, 0] / counts[layer, 0] if counts[layer, 0] else float("nan")
        tok = sums[layer, 1] / counts[layer, 1] if counts[layer, 1] else float("nan")
        rows.append((layer + 1, norm, tok))
    return rows


def cmd_capacity(args) -> int:
    graphs = load_graphs_jsonl(args.data)
    sets = load_cache(args.cache, graphs)
    ckpt = args.ckpt
    if os.path.isdir(ckpt):
        ckpt = os.path.join(ckpt, "model.json")
    params = load_checkpoint(ckpt)
    rng = np.random.default_rng(args.seed)
    n_layers = params.config.n_layers
    acc = np.zeros((n_layers, 3))
    cnt = np.zeros(n_layers)
    tok_cnt = np.zeros(n_layers)
    for g, sset in zip(graphs, sets):
        sp = SamplerParams.for_graph(g.num_nodes)
        idx = sample_substructures(sset, sp, rng, num_nodes=g.num_nodes)
        chosen = [sset.items[i] for i in idx]
        if not chosen:
            continue
        batch = build_tokens(g, chosen, all_pairs_distances(g), rng, params.config)
        trace = forward_tokens(batch, params)
        E = pattern_basis([s.nodes for s in chosen], g.num_nodes)
        report = capacity_report(trace, params, E)
        for lc in report.layers:
            acc[lc.layer - 1, 0] += lc.capacity
            acc[lc.layer - 1, 1] += lc.normalized
            if np.isfinite(lc.token_capacity):
                acc[lc.layer - 1, 2] += lc.token_capacity
                tok_cnt[lc.layer - 1] += 1
            cnt[lc.layer - 1] += 1
    rows = []
    for layer in range(n_layers):
        if cnt[layer] == 0:
            raise RuntimeError("no graph produced substructure tokens; cannot measure capacity")
        tok = acc[layer, 2] / tok_cnt[layer] if tok_cnt[layer] else float("nan")
        rows.append((layer + 1, acc[layer, 0] / cnt[layer], acc[layer, 1] / cnt[layer], tok))
    _write_csv(args.out, args.seed, ["layer", "capacity", "normalized", "token_capacity"], rows)
    _write_config_snapshot(args.out, {"command": "capacity", "ckpt": args.ckpt,
                                      "data": args.data, "cache": args.cache,
                                      "seed": args.seed, "out": args.out})
    print(f"capacity curve over {len(graphs)} graphs -> {args.out}")
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    if args.theorem == 1:
        report = verify_theorem1(args.depth, args.n, args.m, args.d, args.trials, seed=args.seed)
    elif args.theorem == 2:
        report = verify_theorem2(args.depth, args.n, args.m, args.d, args.trials, seed=args.seed)
    else:
        report = verify_theorem3(args.n, args.m, args.r_max or args.n // 2, args.d,
                                 args.trials, seed=args.seed)
    blob = dataclasses.asdict(report)
    with open(args.out, "w") as fh:
        json.dump(blob, fh, indent=2)
    _write_config_snapshot(args.out, {"command": "verify-bounds", "theorem": args.theorem,
                                      "trials": args.trials, "seed": args.seed,
                                      "depth": args.depth, "n": args.n, "m": args.m,
                                      "d": args.d, "r_max": args.r_max, "out": args.out})
    ok = report.violations == 0
    print(f"theorem {args.theorem}: {report.trials} trials, "
          f"{report.violations} violations ({'ok' if ok else 'FAILED'}) -> {args.out}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_repro_capacity(args) -> int:
    rng = np.random.default_rng(args.seed)
    graphs = gen_cycle_regression(args.graphs, (args.nodes_min, args.nodes_max),
                                  args.edge_prob, rng)
    sets = extract_for_graphs(graphs, rng=rng)
    os.makedirs(args.out, exist_ok=True)
    masked_cfg = ModelConfig(n_layers=args.layers, d_h=args.d_h, heads=args.heads)
    # the unmasked reference mirrors a plain relative-position transformer:
    # no substructure tokens and an unscaled residual
    unmasked_cfg = ModelConfig(n_layers=args.layers, d_h=args.d_h, heads=args.heads,
                               use_deepnorm=False)
    layer_count = args.layers
    masked_sum = np.zeros((layer_count, 2))
    masked_cnt = np.zeros((layer_count, 2))
    unmasked_sum = np.zeros(layer_count)
    unmasked_cnt = np.zeros(layer_count)
    for s in range(args.seeds):
        seed_rng = np.random.default_rng(args.seed + 1000 * (s + 1))
        masked_params = init_params(masked_cfg, seed_rng)
        unmasked_params = init_params(unmasked_cfg, seed_rng)
        rows_m = _mean_capacity_rows(graphs, sets, masked_params, seed_rng, True)
        rows_u = _mean_capacity_rows(graphs, sets, unmasked_params, seed_rng, False)
        for layer, norm, tok in rows_m:
            if np.isfinite(norm):
                masked_sum[layer - 1, 0] += norm
                masked_cnt[layer - 1, 0] += 1
            if np.isfinite(tok):
                masked_sum[layer - 1, 1] += tok
                masked_cnt[layer - 1, 1] += 1
        for layer, norm, _ in rows_u:
            if np.isfinite(norm):
                unmasked_sum[layer - 1] += norm
                unmasked_cnt[layer - 1] += 1
    masked_rows = []
    unmasked_rows = []
    for layer in range(layer_count):
        norm = masked_sum[layer, 0] / masked_cnt[layer, 0] if masked_cnt[layer, 0] else float("nan")
        tok = masked_sum[layer, 1] / masked_cnt[layer, 1] if masked_cnt[layer, 1] else float("nan")
        masked_rows.append((layer + 1, norm, tok))
        un = unmasked_sum[layer] / unmasked_cnt[layer] if unmasked_cnt[layer] else float("nan")
        unmasked_rows.append((layer + 1, un))
    _write_csv(os.path.join(args.out, "masked.csv"), args.seed,
               ["layer", "normalized_capacity", "token_capacity"], masked_rows)
    _write_csv(os.path.join(args.out, "unmasked.csv"), args.seed,
               ["layer", "normalized_capacity"], unmasked_rows)
    _write_config_snapshot(args.out, {"command": "repro-capacity", "seed": args.seed,
                                      "layers": args.layers, "seeds": args.seeds,
                                      "graphs": args.graphs, "d_h": args.d_h,
                                      "heads": args.heads, "out": args.out})
    print(f"capacity reproduction over {args.seeds} seeds -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    variants = [_VARIANT_ALIASES.get(v, v) for v in variants]
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        print(f"unknown ablation variants: {unknown}; allowed: {list(ABLATION_VARIANTS)}",
              file=sys.stderr)
        return EXIT_USAGE
    settings = _settings(args, _TRAIN_KEYS, config_section="train")
    graphs = load_graphs_jsonl(args.data)
    sets = (load_cache(args.cache, graphs) if args.cache
            else extract_for_graphs(graphs, rng=np.random.default_rng(args.seed)))
    eval_graphs = load_graphs_jsonl(args.eval_data)
    eval_sets = extract_for_graphs(eval_graphs, rng=np.random.default_rng(args.seed))
    os.makedirs(args.out, exist_ok=True)
    rows = []
    means = {}
    for variant in variants:
        metrics = []
        for s in range(args.seeds):
            seed = args.seed + s
            run_settings = dict(settings, variant=variant)
            result = _run_training(graphs, sets, eval_graphs, eval_sets, run_settings, seed)
            final = result.history[-1]
            rows.append((variant, seed, final.train_loss, final.eval_metric))
            metrics.append(final.eval_metric)
        means[variant] = float(np.mean(metrics))
    _write_csv(os.path.join(args.out, "ablation.csv"), args.seed,
               ["variant", "seed", "final_train_loss", "eval_metric"], rows)
    _write_csv(os.path.join(args.out, "ablation_summary.csv"), args.seed,
               ["variant", "mean_eval_metric"], sorted(means.items()))
    _write_config_snapshot(args.out, {"command": "ablate", "seed": args.seed,
                                      "seeds": args.seeds, "variants": variants,
                                      "data": args.data, "eval_data": args.eval_data,
                                      **settings})
    for variant, mean in sorted(means.items()):
        print(f"{variant}: mean eval metric {mean:.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="deepgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="TOML config file; flags override it")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--task", choices=["cycles", "communities"], required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--nodes-min", type=int, default=8)
    p.add_argument("--nodes-max", type=int, default=16)
    p.add_argument("--edge-prob", type=float, default=0.25)
    p.add_argument("--nodes-per-block", type=int, default=10)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.05)
    p.add_argument("--reveal-frac", type=float, default=0.2)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="enumerate substructures into a cache")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default=",".join(ALL_KINDS))
    p.add_argument("--khop-k", type=int, default=2)
    p.add_argument("--rwalk-steps", type=int, default=10)
    p.add_argument("--s-max", type=int, default=10)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sample", help="coverage-balanced sampling from a cache")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thre", type=int, default=1)
    p.add_argument("--n-init", type=int, default=None)
    p.add_argument("--top-k", type=int, default=4)
    p.add_argument("--n-sample", type=int, default=2)
    p.add_argument("--m-max", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model on a JSONL dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", required=True)
    for key in _TRAIN_KEYS:
        flag = "--" + key.replace("_", "-")
        if key in ("lr_peak",):
            p.add_argument(flag, type=float, default=None)
        elif key in ("task", "variant"):
            p.add_argument(flag, default=None)
        else:
            p.add_argument(flag, type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("capacity", help="per-layer capacity curve of a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("verify-bounds", help="numerically verify a capacity theorem")
    common(p)
    p.add_argument("--theorem", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--r-max", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("repro-capacity", help="masked vs unmasked capacity curves")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=24)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--graphs", type=int, default=10)
    p.add_argument("--d-h", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--nodes-min", type=int, default=8)
    p.add_argument("--nodes-max", type=int, default=14)
    p.add_argument("--edge-prob", type=float, default=0.25)
    p.set_defaults(func=cmd_repro_capacity)

    p = sub.add_parser("ablate", help="train and compare model variants")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=4)
    p.add_argument("--variants", default=",".join(ABLATION_VARIANTS))
    for key in _TRAIN_KEYS:
        flag = "--" + key.replace("_", "-")
        if key in ("lr_peak",):
            p.add_argument(flag, type=float, default=None)
        elif key in ("task", "variant"):
            if key == "task":
                p.add_argument(flag, default=None)
        else:
            p.add_argument(flag, type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"deepgraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, FloatingPointError) as exc:
        print(f"deepgraph: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
