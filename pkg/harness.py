"""
Experiment grids: config loading, per-cell generate → infer → evaluate runs,
resumable CSV output and long-format figure tables
"""
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np
import pandas as pd

import config
from core import ConfigError, DiffusionNetworkError, aggregate
from inference import OptimizerConfig, default_budget, run_pipeline
from metrics import evaluate
from synthgen import (
    CascadeGenConfig,
    NetworkGenConfig,
    filter_cascades,
    generate_network,
    layer_overlap,
    simulate_cascades,
)

SCHEMA_PATH = Path(__file__).with_name("experiment_schema.json")
# all: filter before both phases; multilayer: drop small cascades before phase 2;
# membership: small cascades reach phase 2 as rate evidence without a membership
FILTER_SCOPES = ("all", "multilayer", "membership")
SCALES = ("desk", "full")

ECHO_COLUMNS = [
    "family", "n_nodes", "n_layers", "overlap", "mu_in", "sigma_in", "mu_out", "sigma_out",
    "gamma", "eps_max", "ce_ratio", "s_c", "replicate", "horizon", "seed_prob", "rate_low", "rate_high",
    "budget_factor", "select_by", "filter_scope",
    "phase1_lr", "phase1_max_iters", "phase1_rel_tol", "phase2_lr", "phase2_max_iters", "phase2_rel_tol",
    "restarts", "patience",
]
OUTCOME_COLUMNS = [
    "cell_hash", "status", "message",
    "n_aggregated_edges", "realized_overlap", "n_cascades_simulated", "n_cascades_informative",
    "n_cascades_inferred", "n_cascades_phase2", "n_cascades_pooled", "n_candidate_edges", "n_selected_edges",
    "budget", "phase1_stop_reason", "restart_seed", "final_objective", "dropped_terms", "peak_memory_bytes",
    "auc", "pi_accuracy", "alpha_spearman", "pr_auc_mean", "pr_auc_per_layer",
    "edge_recovery_hits", "edge_recovery_total", "edge_recovery_rate", "matched_permutation",
]
RESULT_COLUMNS = ECHO_COLUMNS + OUTCOME_COLUMNS
TIMING_COLUMNS = ["cell_hash", "generate", "phase1", "phase2", "evaluate", "total"]

FIGURE_METRICS = ("auc", "pi_accuracy", "alpha_spearman", "pr_auc_mean", "edge_recovery_rate")
# family -> (x axis, series axis)
FIGURE_FAMILIES = {
    "cascade-size": ("ce_ratio", "gamma"),
    "filtering": ("s_c", "gamma"),
    "density": ("ce_ratio", "mu_in"),
    "size": ("ce_ratio", "n_nodes"),
    "layers": ("ce_ratio", "n_layers"),
    "overlap": ("ce_ratio", "overlap"),
    "mixing": ("ce_ratio", "eps_max"),
}
FIGURE_COLUMNS = ["family", "panel", "x_name", "x", "series_name", "series", "y_mean", "y_std", "n"]


def format_duration(seconds: float) -> str:
    """Cell and phase runtimes: tenths of a second below a minute, then h/m/s"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    total = int(seconds)
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{hours}h {minutes}m {secs}s" if hours else f"{minutes}m {secs}s"


def estimate_peak_memory(n_nodes: int, n_cascades: int, n_ep: int, n_es: int, n_layers: int) -> int:
    """8 bytes per stored float: phase 1 holds max(|E_P|, N*C), phase 2 holds |E_S|*C*K"""
    phase1 = max(n_ep, n_nodes * n_cascades)
    phase2 = n_es * n_cascades * n_layers if n_layers > 1 else 0
    return 8 * max(phase1, phase2)


@dataclass(frozen=True)
class DensityPreset:
    mu_in: float
    sigma_in: float
    mu_out: float
    sigma_out: float


DENSITY_PRESETS = (
    DensityPreset(0.0, 1.0, 0.0, 1.0),
    DensityPreset(0.5, 1.0, 0.0, math.sqrt(2.0)),
    DensityPreset(1.0, 1.0, 0.0, math.sqrt(3.0)),
)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Base generator settings plus the grid axes. Every axis is a non-empty
    tuple of distinct values; a cell is one point of their product.
    """
    network: NetworkGenConfig
    cascades: CascadeGenConfig
    phase1: OptimizerConfig
    phase2: OptimizerConfig
    ce_ratios: Tuple[float, ...]
    s_c_values: Tuple[int, ...]
    k_values: Tuple[int, ...]
    gammas: Tuple[float, ...]
    overlaps: Tuple[float, ...]
    eps_max_values: Tuple[float, ...]
    n_nodes_values: Tuple[int, ...]
    densities: Tuple[DensityPreset, ...]
    replicate_seeds: Tuple[int, ...] = (0, 1, 2)
    budget_factor: float = 1.1
    select_by: str = "nll"
    filter_scope: str = "membership"
    family: str = "custom"
    name: str = "experiment"

    def __post_init__(self):
        for axis in ("ce_ratios", "s_c_values", "k_values", "gammas", "overlaps", "eps_max_values",
                     "n_nodes_values", "densities", "replicate_seeds"):
            values = tuple(getattr(self, axis))
            if not values:
                raise ConfigError(f"axis '{axis}' must not be empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"axis '{axis}' repeats a value")
            object.__setattr__(self, axis, values)
        if any(r <= 0 for r in self.ce_ratios):
            raise ConfigError("C-E ratios must be positive")
        if any(s < 0 for s in self.s_c_values):
            raise ConfigError("size thresholds must be non-negative")
        if any(k < 1 for k in self.k_values):
            raise ConfigError("layer counts must be at least 1")
        if any(s < 0 for s in self.replicate_seeds):
            raise ConfigError("replicate seeds must be non-negative")
        if not self.budget_factor > 0:
            raise ConfigError(f"budget_factor must be positive (got {self.budget_factor})")
        if self.select_by not in ("nll", "pi_accuracy"):
            raise ConfigError(f"select_by must be 'nll' or 'pi_accuracy' (got {self.select_by!r})")
        if self.filter_scope not in FILTER_SCOPES:
            raise ConfigError(f"filter_scope must be one of {FILTER_SCOPES} (got {self.filter_scope!r})")
        # surface range errors of any axis value before the grid starts
        for cell in expand_cells(self):
            cell.network_config()
            cell.cascade_config(1)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["densities"] = [asdict(d) for d in self.densities]
        return data

    @property
    def n_cells(self) -> int:
        return math.prod(len(getattr(self, a)) for a in (
            "ce_ratios", "s_c_values", "k_values", "gammas", "overlaps", "eps_max_values",
            "n_nodes_values", "densities", "replicate_seeds"))


def load_schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        return json.load(f)


def _block(data: Dict[str, Any], schema: Dict[str, Any], name: str) -> Dict[str, Any]:
    props = schema["properties"][name]["properties"]
    block = data.get(name, {})
    merged = {key: spec["default"] for key, spec in props.items()}
    merged.update(block)
    return merged


def _axis(data: Dict[str, Any], schema: Dict[str, Any], name: str, cast) -> tuple:
    values = data.get(name, schema["properties"][name]["default"])
    if not isinstance(values, list):
        raise ConfigError(f"axis '{name}' must be a list")
    try:
        return tuple(cast(v) for v in values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"axis '{name}': {e}")


def _density(value) -> DensityPreset:
    if isinstance(value, dict):
        return DensityPreset(**{k: float(value[k]) for k in ("mu_in", "sigma_in", "mu_out", "sigma_out")})
    return DensityPreset(*map(float, value))


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate against experiment_schema.json, fill its defaults, then build the config"""
    schema = load_schema()
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid experiment config at {where}: {e.message}")

    try:
        network = NetworkGenConfig(**_block(data, schema, "network"))
        cascades = CascadeGenConfig(**_block(data, schema, "cascades"))
        phase1 = OptimizerConfig.from_dict(_block(data, schema, "phase1"))
        phase2 = OptimizerConfig.from_dict(_block(data, schema, "phase2"))
        scalars = {key: data.get(key, schema["properties"][key]["default"])
                   for key in ("budget_factor", "select_by", "filter_scope", "family", "name")}
        return ExperimentConfig(
            network=network,
            cascades=cascades,
            phase1=phase1,
            phase2=phase2,
            ce_ratios=_axis(data, schema, "ce_ratios", float),
            s_c_values=_axis(data, schema, "s_c_values", int),
            k_values=_axis(data, schema, "k_values", int),
            gammas=_axis(data, schema, "gammas", float),
            overlaps=_axis(data, schema, "overlaps", float),
            eps_max_values=_axis(data, schema, "eps_max_values", float),
            n_nodes_values=_axis(data, schema, "n_nodes_values", int),
            densities=_axis(data, schema, "densities", _density),
            replicate_seeds=_axis(data, schema, "replicate_seeds", int),
            budget_factor=float(scalars["budget_factor"]),
            select_by=str(scalars["select_by"]),
            filter_scope=str(scalars["filter_scope"]),
            family=str(scalars["family"]),
            name=str(scalars["name"]),
        )
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid experiment config: {e}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    return config_from_dict(data)


def preset_config(family: str, scale: str = "desk") -> ExperimentConfig:
    """The seven experiment families, at laptop (desk) or full scale"""
    if family not in FIGURE_FAMILIES:
        raise ConfigError(f"unknown experiment family {family!r}; choose from {sorted(FIGURE_FAMILIES)}")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {SCALES}")

    desk = scale == "desk"
    data: Dict[str, Any] = {
        "family": family,
        "name": f"{family}-{scale}",
        "n_nodes_values": [250] if desk else [1000],
        "replicate_seeds": [0, 1, 2] if desk else [0],
        "gammas": [2.0],
        "s_c_values": [8],
        "ce_ratios": [1, 2, 4, 8, 16],
    }
    if family == "cascade-size":
        data.update(gammas=[1.0, 2.0, 4.0, 8.0], s_c_values=[1])
    elif family == "filtering":
        data.update(gammas=[1.0, 2.0, 4.0, 8.0], s_c_values=[1, 2, 4, 8, 16], ce_ratios=[16])
    elif family == "density":
        data["densities"] = [asdict(d) for d in DENSITY_PRESETS]
    elif family == "size":
        data.update(n_nodes_values=[250, 500, 1000] if desk else [1000, 2000, 4000], ce_ratios=[1, 2, 4, 8])
    elif family == "layers":
        data["k_values"] = [2, 3, 4, 5]
    elif family == "overlap":
        data["overlaps"] = [0.0, 0.5, 1.0]
    elif family == "mixing":
        data["eps_max_values"] = [0.0, 0.2, 0.4]
    return config_from_dict(data)


@dataclass(frozen=True)
class Cell:
    experiment: ExperimentConfig
    n_nodes: int
    n_layers: int
    overlap: float
    density: DensityPreset
    gamma: float
    eps_max: float
    ce_ratio: float
    s_c: int
    replicate: int

    def network_config(self) -> NetworkGenConfig:
        return replace(self.experiment.network, n_nodes=self.n_nodes, n_layers=self.n_layers,
                       overlap=self.overlap, seed=self.replicate, **asdict(self.density))

    def cascade_config(self, n_cascades: int) -> CascadeGenConfig:
        return replace(self.experiment.cascades, recovery_rate=self.gamma, eps_max=self.eps_max,
                       n_cascades=n_cascades, seed=self.replicate)

    def echo(self) -> Dict[str, Any]:
        exp = self.experiment
        return {
            "family": exp.family,
            "n_nodes": self.n_nodes,
            "n_layers": self.n_layers,
            "overlap": self.overlap,
            "mu_in": self.density.mu_in,
            "sigma_in": self.density.sigma_in,
            "mu_out": self.density.mu_out,
            "sigma_out": self.density.sigma_out,
            "gamma": self.gamma,
            "eps_max": self.eps_max,
            "ce_ratio": self.ce_ratio,
            "s_c": self.s_c,
            "replicate": self.replicate,
            "horizon": exp.cascades.horizon,
            "seed_prob": exp.cascades.seed_prob,
            "rate_low": exp.network.rate_low,
            "rate_high": exp.network.rate_high,
            "budget_factor": exp.budget_factor,
            "select_by": exp.select_by,
            "filter_scope": exp.filter_scope,
            "phase1_lr": exp.phase1.learning_rate,
            "phase1_max_iters": exp.phase1.max_iters,
            "phase1_rel_tol": exp.phase1.rel_tol,
            "phase2_lr": exp.phase2.learning_rate,
            "phase2_max_iters": exp.phase2.max_iters,
            "phase2_rel_tol": exp.phase2.rel_tol,
            "restarts": "-".join(str(s) for s in exp.phase2.restarts),
            "patience": exp.phase2.patience,
        }

    @property
    def hash(self) -> str:
        key = dict(self.echo())
        key["optimizers"] = [asdict(self.experiment.phase1), asdict(self.experiment.phase2)]
        blob = json.dumps(key, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def expand_cells(cfg: ExperimentConfig) -> List[Cell]:
    """Cartesian product of every axis in a fixed order"""
    return [
        Cell(cfg, n, k, phi, density, gamma, eps, ratio, s_c, rep)
        for n, k, phi, density, gamma, eps, ratio, s_c, rep in itertools.product(
            cfg.n_nodes_values, cfg.k_values, cfg.overlaps, cfg.densities, cfg.gammas,
            cfg.eps_max_values, cfg.ce_ratios, cfg.s_c_values, cfg.replicate_seeds)
    ]


@dataclass
class ResultRow:
    cell_hash: str
    values: Dict[str, Any]
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.values.get("status") == "ok"

    def to_dict(self) -> Dict[str, Any]:
        return {"cell_hash": self.cell_hash, "values": self.values, "timings": self.timings}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ResultRow":
        return cls(data["cell_hash"], data["values"], data.get("timings", {}))


def _plain(values: Dict[str, Any]) -> Dict[str, Any]:
    """JSON round trip, so fresh and resumed rows serialize identically"""
    def convert(v):
        if isinstance(v, np.generic):
            return v.item()
        raise TypeError(f"cannot serialize {type(v).__name__}")
    return json.loads(json.dumps(values, default=convert))


def run_cell(cell: Cell, threads: int = 1) -> ResultRow:
    """generate → filter → infer → evaluate; any failure becomes a row with status 'failed'"""
    values: Dict[str, Any] = {col: None for col in RESULT_COLUMNS}
    values.update(cell.echo())
    values["cell_hash"] = cell.hash
    exp = cell.experiment
    timings: Dict[str, float] = {}
    start = time.perf_counter()

    try:
        net = generate_network(cell.network_config())
        n_true = len(aggregate(net))
        values["n_aggregated_edges"] = n_true
        values["realized_overlap"] = layer_overlap(net)
        n_cascades = max(int(math.floor(cell.ce_ratio * n_true + 0.5)), 1)
        simulated = simulate_cascades(net, cell.cascade_config(n_cascades), threads=threads)
        informative = filter_cascades(simulated, 1)
        if exp.filter_scope == "all":
            inferred, phase2_min_size = filter_cascades(informative, cell.s_c), None
        else:
            inferred, phase2_min_size = informative, cell.s_c
        values["n_cascades_simulated"] = len(simulated)
        values["n_cascades_informative"] = len(informative)
        values["n_cascades_inferred"] = len(inferred)
        timings["generate"] = time.perf_counter() - start

        budget = default_budget(n_true, exp.budget_factor)
        values["budget"] = budget
        result = run_pipeline(inferred, cell.n_layers, exp.phase1, exp.phase2, budget=budget,
                              n_nodes=cell.n_nodes, select_by=exp.select_by, phase2_min_size=phase2_min_size,
                              pool_small=exp.filter_scope == "membership", threads=threads)
        prov = result.provenance
        timings["phase1"] = prov["timings"]["phase1"]
        timings["phase2"] = prov["timings"]["phase2"]
        values.update(
            n_cascades_phase2=prov["n_cascades_phase2"],
            n_cascades_pooled=prov.get("n_cascades_pooled", 0),
            n_candidate_edges=prov["n_candidate_edges"],
            n_selected_edges=prov["n_selected_edges"],
            phase1_stop_reason=prov["phase1_stop_reason"],
            restart_seed=result.restart_seed,
            final_objective=result.final_objective,
            dropped_terms=prov["phase1_dropped_terms"] + prov.get("phase2_dropped_terms", 0),
            peak_memory_bytes=estimate_peak_memory(cell.n_nodes, len(inferred), prov["n_candidate_edges"],
                                                   prov["n_selected_edges"], cell.n_layers),
        )

        t_eval = time.perf_counter()
        report = evaluate(result, net, simulated)
        timings["evaluate"] = time.perf_counter() - t_eval
        row = report.to_row()
        row["pr_auc_per_layer"] = ";".join(repr(float(v)) for v in report.pr_auc_per_layer)
        values.update({k: v for k, v in row.items() if k in values})
        values.update(status="ok", message="")
    except DiffusionNetworkError as e:
        values.update(status="failed", message=f"{type(e).__name__}: {e}")
    except Exception as e:
        values.update(status="failed", message=f"unexpected {type(e).__name__}: {e}")

    timings["total"] = time.perf_counter() - start
    return ResultRow(cell.hash, _plain(values), timings)


@dataclass(frozen=True)
class GridOutcome:
    results_path: Path
    timings_path: Path
    n_cells: int
    n_failed: int
    n_resumed: int


def _cell_path(out_dir: Path, cell_hash: str) -> Path:
    return out_dir / "cells" / f"{cell_hash}.json"


def _load_cell(path: Path) -> Optional[ResultRow]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return ResultRow.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError):
        return None


def _save_cell(path: Path, row: ResultRow) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(row.to_dict(), f, sort_keys=True)
    tmp.replace(path)


def run_grid(cfg: ExperimentConfig, out_dir, parallelism: int = 1, resume: bool = False,
             threads: int = 1, verbose: bool = True) -> GridOutcome:
    """
    Run every cell and write results.csv (one row per cell, fixed cell
    order) plus timings.csv. Finished cells are kept under cells/<hash>.json;
    with resume=True those are reused instead of recomputed.
    """
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    cells = expand_cells(cfg)
    rows: List[Optional[ResultRow]] = [None] * len(cells)

    n_resumed = 0
    if resume:
        for idx, cell in enumerate(cells):
            row = _load_cell(_cell_path(out_dir, cell.hash))
            if row is not None:
                rows[idx] = row
                n_resumed += 1
    pending = [idx for idx, row in enumerate(rows) if row is None]

    if verbose:
        print("=" * 100)
        print(f"Experiment '{cfg.name}': {len(cells)} cell(s), {n_resumed} resumed, {len(pending)} to run")
        print("=" * 100)

    start = time.time()
    completed = 0

    def finish(idx: int, row: ResultRow) -> None:
        nonlocal completed
        rows[idx] = row
        _save_cell(_cell_path(out_dir, row.cell_hash), row)
        completed += 1
        if verbose:
            mark = "✓" if row.ok else "✗"
            detail = f"AUC {row.values['auc']:.3f}" if row.ok else row.values["message"]
            print(f"  {mark} Cell {completed}/{len(pending)} [{row.cell_hash}] "
                  f"{format_duration(row.timings.get('total', 0.0))} | {detail}")

    if parallelism <= 1:
        for idx in pending:
            finish(idx, run_cell(cells[idx], threads))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as executor:
            future_to_index = {executor.submit(run_cell, cells[idx], threads): idx for idx in pending}
            for future in as_completed(future_to_index):
                finish(future_to_index[future], future.result())

    results_path = out_dir / "results.csv"
    timings_path = out_dir / "timings.csv"
    pd.DataFrame([r.values for r in rows], columns=RESULT_COLUMNS).to_csv(
        results_path, index=False, lineterminator="\n")
    pd.DataFrame([{"cell_hash": r.cell_hash, **r.timings} for r in rows], columns=TIMING_COLUMNS).to_csv(
        timings_path, index=False, lineterminator="\n")

    n_failed = sum(1 for r in rows if not r.ok)
    if verbose:
        print(f"\n✓ {len(cells) - n_failed}/{len(cells)} cell(s) succeeded in {format_duration(time.time() - start)}")
        if n_failed:
            print(f"⚠️  {n_failed} cell(s) failed; see the status and message columns")
        print(f"✓ Results saved to {results_path}")
    return GridOutcome(results_path, timings_path, len(cells), n_failed, n_resumed)


def emit_figure_data(csv_path, family: str, out_path=None) -> pd.DataFrame:
    """
    Long-format table for one experiment family: one row per
    (metric panel, series value, x value) with the replicate mean, std and count.
    """
    if family not in FIGURE_FAMILIES:
        raise ConfigError(f"unknown figure family {family!r}; choose from {sorted(FIGURE_FAMILIES)}")
    x_name, series_name = FIGURE_FAMILIES[family]

    try:
        results = pd.read_csv(csv_path)
    except pd.errors.EmptyDataError:
        results = pd.DataFrame(columns=RESULT_COLUMNS)
    if "status" in results.columns:
        results = results[results["status"] == "ok"]

    metrics = [m for m in FIGURE_METRICS if m in results.columns]
    if results.empty or not metrics:
        table = pd.DataFrame(columns=FIGURE_COLUMNS)
    else:
        long = results.melt(id_vars=[x_name, series_name], value_vars=metrics, var_name="panel", value_name="y")
        grouped = long.groupby(["panel", series_name, x_name], sort=True)["y"]
        table = grouped.agg(y_mean="mean", y_std="std", n="count").reset_index()
        table = table.rename(columns={series_name: "series", x_name: "x"})
        table["family"] = family
        table["x_name"] = x_name
        table["series_name"] = series_name
        table["panel"] = pd.Categorical(table["panel"], categories=list(FIGURE_METRICS), ordered=True)
        table = table.sort_values(["panel", "series", "x"]).reset_index(drop=True)
        table["panel"] = table["panel"].astype(str)
        table = table[FIGURE_COLUMNS]

    if out_path is not None:
        table.to_csv(out_path, index=False, lineterminator="\n")
    return table
