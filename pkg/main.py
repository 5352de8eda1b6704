#!/usr/bin/env python3
"""
Command-line entry point: generate synthetic data, infer multilayer diffusion
networks, evaluate them against ground truth and run experiment grids
"""
import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

import pandas as pd

import config
from core import (
    ConfigError,
    DiffusionNetworkError,
    InferenceError,
    aggregate,
    export_snap,
    ingest_event_log,
    read_cascades,
    read_network,
    read_result,
    write_cascades,
    write_edge_scores,
    write_id_map,
    write_network,
    write_result,
)
from harness import emit_figure_data, format_duration, load_config, preset_config, run_grid, FIGURE_FAMILIES
from inference import OptimizerConfig, default_budget, run_pipeline
from metrics import evaluate
from synthgen import (
    CascadeGenConfig,
    NetworkGenConfig,
    cascade_size_distribution,
    filter_cascades,
    generate_network,
    simulate_cascades,
    truth_manifest,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _seed_list(text: str):
    try:
        seeds = tuple(int(s.strip()) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def generate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    netcfg = NetworkGenConfig(n_nodes=args.nodes, n_layers=args.layers, overlap=args.overlap,
                              mu_in=args.mu_in, sigma_in=args.sigma_in, mu_out=args.mu_out,
                              sigma_out=args.sigma_out, rate_low=args.rate_low, rate_high=args.rate_high,
                              seed=args.seed)

    print(f"Generating a {args.layers}-layer network over {args.nodes} nodes...")
    start = time.time()
    net = generate_network(netcfg)
    n_true = len(aggregate(net))
    n_cascades = args.cascades if args.cascades is not None else max(int(math.floor(args.ce_ratio * n_true + 0.5)), 1)
    casccfg = CascadeGenConfig(horizon=args.horizon, recovery_rate=args.gamma, seed_prob=args.seed_prob,
                               eps_max=args.eps_max, n_cascades=n_cascades, seed=args.seed)

    print(f"Simulating {n_cascades} cascades ({n_true} aggregated edges)...")
    simulated = simulate_cascades(net, casccfg, threads=args.threads)
    cascades = filter_cascades(filter_cascades(simulated, 1), args.size_threshold)

    write_network(net, out_dir / "network.tsv")
    write_cascades(cascades, out_dir / "cascades.jsonl")
    with open(out_dir / "truth.json", "w", encoding="utf-8") as f:
        json.dump(truth_manifest(netcfg, casccfg, args.size_threshold, net, len(simulated), cascades),
                  f, indent=2, sort_keys=True)

    print(f"✓ Kept {len(cascades)}/{len(simulated)} cascades larger than {max(args.size_threshold, 1)}")
    print(f"✓ Network, cascades and truth manifest saved to {out_dir} in {format_duration(time.time() - start)}")
    return EXIT_OK


def _optimizer_configs(args):
    opt1 = OptimizerConfig.phase1_defaults(
        **{k: v for k, v in dict(learning_rate=args.phase1_lr, max_iters=args.phase1_max_iters,
                                 rel_tol=args.phase1_rel_tol, patience=args.patience).items() if v is not None})
    opt2 = OptimizerConfig.phase2_defaults(
        **{k: v for k, v in dict(learning_rate=args.phase2_lr, max_iters=args.phase2_max_iters,
                                 rel_tol=args.phase2_rel_tol, restarts=args.restarts,
                                 patience=args.patience).items() if v is not None})
    return opt1, opt2


def infer(args) -> int:
    cascades = read_cascades(args.cascades)
    budget, threshold = args.budget, args.threshold
    n_nodes = args.nodes
    if args.truth_network is not None:
        truth = read_network(args.truth_network)
        n_nodes = n_nodes or truth.n_nodes
        if budget is None and threshold is None:
            budget = default_budget(len(aggregate(truth)), args.budget_factor)
    if budget is None and threshold is None:
        raise ConfigError("without a truth network, pass --budget or --threshold")

    opt1, opt2 = _optimizer_configs(args)
    select_by = "pi_accuracy" if args.truth_aware else "nll"

    print("=" * 100)
    print(f"Inferring a {args.layers}-layer network from {len(cascades)} cascades")
    print("=" * 100)
    start = time.time()
    result = run_pipeline(cascades, args.layers, opt1, opt2, budget=budget, threshold=threshold, n_nodes=n_nodes,
                          select_by=select_by, phase2_min_size=args.phase2_min_size, pool_small=args.pool_small,
                          threads=args.threads, verbose=True)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_result(result, out_dir / "result.json")
    write_edge_scores(result, out_dir / "edge_scores.tsv")
    print(f"\n✓ {len(result.selected_edges)} edges selected from {len(result.candidate_edges)} candidates")
    print(f"✓ Final objective {result.final_objective:.6f} (restart seed {result.restart_seed})")
    print(f"✓ Result saved to {out_dir / 'result.json'} in {format_duration(time.time() - start)}")
    return EXIT_OK


def _flatten(prefix: str, value, row: dict) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}{k}.", value[k], row)
    elif isinstance(value, list):
        row[prefix[:-1]] = json.dumps(value)
    else:
        row[prefix[:-1]] = value


def evaluate_command(args) -> int:
    result = read_result(args.result)
    truth = read_network(args.network)
    cascades = read_cascades(args.cascades)
    report = evaluate(result, truth, cascades)

    row = {}
    provenance = {k: v for k, v in result.provenance.items() if k not in ("restarts", "timings")}
    _flatten("", provenance, row)
    row.update(report.to_row())

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([row]).to_csv(out_dir / "metrics.csv", index=False, lineterminator="\n")

    print(f"✓ AUC {report.auc:.4f} | π accuracy {report.pi_accuracy:.4f} | α correlation {report.alpha_spearman:.4f}")
    print(f"✓ Edge recovery {report.edge_recovery.hits}/{report.edge_recovery.total} "
          f"= {report.edge_recovery.rate:.1%}")
    print(f"✓ Metrics saved to {out_dir / 'metrics.csv'}")
    return EXIT_OK


def experiment(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("pass exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else preset_config(args.preset, args.scale)
    outcome = run_grid(cfg, args.out_dir, parallelism=args.parallelism, resume=args.resume, threads=args.threads)
    return EXIT_PARTIAL if outcome.n_failed else EXIT_OK


def figure_data(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"figure_{args.family}.csv"
    if args.family == "cascade-sizes":
        if args.cascades is None:
            raise ConfigError("--family cascade-sizes needs --cascades")
        table = cascade_size_distribution(read_cascades(args.cascades))
        table.to_csv(out_path, index=False, lineterminator="\n")
    else:
        if args.input is None:
            raise ConfigError(f"--family {args.family} needs --input results.csv")
        table = emit_figure_data(args.input, args.family, out_path)
    print(f"✓ {len(table)} row(s) saved to {out_path}")
    return EXIT_OK


def ingest(args) -> int:
    cascades, handles = ingest_event_log(args.events, args.horizon)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cascades(cascades, out_dir / "cascades.jsonl")
    write_id_map(handles, out_dir / "id_map.tsv")
    print(f"✓ {len(cascades)} cascades over {len(handles)} users saved to {out_dir}")
    return EXIT_OK


def export(args) -> int:
    cascades = read_cascades(args.cascades)
    net = read_network(args.network) if args.network is not None else None
    written = export_snap(cascades, args.out_dir, net)
    print(f"✓ {len(cascades)} cascades exported to {len(written)} files in {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multilayer diffusion network inference from cascades")
    parser.add_argument("--seed", type=int, default=config.SEED, help="Generation seed")
    parser.add_argument("--threads", type=int, default=config.THREADS, help="Worker threads")
    parser.add_argument("--out-dir", default=config.OUT_DIR, help="Output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Synthetic multilayer network and SIR cascades")
    p.add_argument("--nodes", type=int, default=250)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--mu-in", type=float, default=0.5)
    p.add_argument("--sigma-in", type=float, default=1.0)
    p.add_argument("--mu-out", type=float, default=0.0)
    p.add_argument("--sigma-out", type=float, default=math.sqrt(2.0))
    p.add_argument("--rate-low", type=float, default=0.01)
    p.add_argument("--rate-high", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=2.0, help="Recovery rate")
    p.add_argument("--eps-max", type=float, default=0.0, help="Mixing level")
    p.add_argument("--horizon", type=float, default=config.HORIZON)
    p.add_argument("--seed-prob", type=float, default=None, help="Per-node seed probability (default 1/N)")
    count = p.add_mutually_exclusive_group()
    count.add_argument("--cascades", type=int, default=None, help="Number of cascades to simulate")
    count.add_argument("--ce-ratio", type=float, default=1.0, help="Cascades per aggregated edge")
    p.add_argument("--size-threshold", type=int, default=1, help="Drop cascades of at most this size")
    p.set_defaults(handler=generate)

    p = sub.add_parser("infer", help="Two-phase inference from a cascade file")
    p.add_argument("--cascades", required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--nodes", type=int, default=None, help="Node count (default: largest id + 1)")
    p.add_argument("--budget", type=int, default=None, help="Number of edges kept after phase 1")
    p.add_argument("--threshold", type=float, default=None, help="Keep edges scoring above this instead")
    p.add_argument("--truth-network", default=None, help="Ground truth, sets the default budget")
    p.add_argument("--budget-factor", type=float, default=config.BUDGET_FACTOR)
    p.add_argument("--phase1-lr", type=float, default=None)
    p.add_argument("--phase1-max-iters", type=int, default=None)
    p.add_argument("--phase1-rel-tol", type=float, default=None)
    p.add_argument("--phase2-lr", type=float, default=None)
    p.add_argument("--phase2-max-iters", type=int, default=None)
    p.add_argument("--phase2-rel-tol", type=float, default=None)
    p.add_argument("--restarts", type=_seed_list, default=None, help="Comma-separated restart seeds")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--truth-aware", action="store_true", help="Pick the restart with the best π accuracy")
    p.add_argument("--phase2-min-size", type=int, default=None, help="Size filter applied to phase 2 only")
    p.add_argument("--pool-small", action="store_true",
                   help="Keep filtered cascades in phase 2 with uniform membership")
    p.set_defaults(handler=infer)

    p = sub.add_parser("evaluate", help="Score an inference result against ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--cascades", required=True)
    p.set_defaults(handler=evaluate_command)

    p = sub.add_parser("experiment", help="Run an experiment grid")
    p.add_argument("--config", default=None, help="Experiment JSON")
    p.add_argument("--preset", choices=sorted(FIGURE_FAMILIES), default=None)
    p.add_argument("--scale", choices=["desk", "full"], default="desk")
    p.add_argument("--parallelism", type=int, default=1, help="Cells run in parallel")
    p.add_argument("--resume", action="store_true", help="Reuse finished cells")
    p.set_defaults(handler=experiment)

    p = sub.add_parser("figure-data", help="Long-format table for one experiment family")
    p.add_argument("--family", required=True, choices=sorted(FIGURE_FAMILIES) + ["cascade-sizes"])
    p.add_argument("--input", default=None, help="results.csv from an experiment")
    p.add_argument("--cascades", default=None, help="Cascade file for --family cascade-sizes")
    p.set_defaults(handler=figure_data)

    p = sub.add_parser("ingest", help="Convert a raw cascade,user,time event log")
    p.add_argument("--events", required=True)
    p.add_argument("--horizon", type=float, default=config.HORIZON)
    p.set_defaults(handler=ingest)

    p = sub.add_parser("export", help="Write network and cascades in the SNAP NetInf text layout")
    p.add_argument("--cascades", required=True)
    p.add_argument("--network", default=None, help="Ground-truth network to export alongside")
    p.set_defaults(handler=export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            code = args.handler(args)
        except ConfigError as e:
            print(f"✗ Configuration error: {e}")
            code = EXIT_CONFIG
        except FileNotFoundError as e:
            print(f"✗ File not found: {e.filename}")
            code = EXIT_CONFIG
        except InferenceError as e:
            print(f"✗ Inference aborted: {e}")
            for key, value in e.diagnostics.items():
                print(f"    {key}: {value}")
            code = EXIT_ERROR
        except DiffusionNetworkError as e:
            print(f"✗ {type(e).__name__}: {e}")
            code = EXIT_ERROR
    for w in caught:
        print(f"⚠️  {w.message}")
    return code


if __name__ == "__main__":
    sys.exit(main())
