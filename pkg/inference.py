"""
Two-phase network inference: single-layer edge discovery over every
co-occurring pair, edge selection, then multilayer decomposition with restarts
"""
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

import config
from core import (
    STREAM_PHASE1_INIT,
    STREAM_RESTART_INIT,
    BudgetWarning,
    CascadeSet,
    ConfigError,
    InferenceError,
    InferenceResult,
    make_rng,
)
from metrics import best_pi_accuracy
from objective import (
    PrecomputedCascadeTensors,
    UnconstrainedParams,
    build_tensors,
    initial_params,
    nll_gradient,
    stick_breaking,
    uniform_pi_raw,
)
from optimizer import AdamOptimizer, StoppingMonitor
from synthgen import filter_cascades

SELECT_BY = ("nll", "pi_accuracy")
PROGRESS_EVERY = 50


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    max_iters: int
    rel_tol: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    restarts: Tuple[int, ...] = (0, 1, 2)
    patience: int = 20

    def __post_init__(self):
        object.__setattr__(self, "restarts", tuple(int(s) for s in self.restarts))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive (got {self.learning_rate})")
        if self.rel_tol < 0:
            raise ConfigError(f"rel_tol must be non-negative (got {self.rel_tol})")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be non-negative (got {self.max_iters})")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.restarts:
            raise ConfigError("at least one restart seed is required")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")

    @classmethod
    def phase1_defaults(cls, **overrides) -> "OptimizerConfig":
        values = dict(learning_rate=config.PHASE1_LR, max_iters=config.PHASE1_MAX_ITERS,
                      rel_tol=config.PHASE1_REL_TOL, restarts=config.RESTART_SEEDS[:1] or (0,),
                      patience=config.PATIENCE)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def phase2_defaults(cls, **overrides) -> "OptimizerConfig":
        values = dict(learning_rate=config.PHASE2_LR, max_iters=config.PHASE2_MAX_ITERS,
                      rel_tol=config.PHASE2_REL_TOL, restarts=config.RESTART_SEEDS or (0,),
                      patience=config.PATIENCE)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerConfig":
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid optimizer block: {e}")


@dataclass
class OptimizationRun:
    """One Adam run; `raw` and `value` belong to the best iterate seen"""
    raw: UnconstrainedParams
    value: float
    initial_value: float
    trace: List[Tuple[int, float]]
    stop_reason: str
    n_iters: int
    seed: int

    def summary(self) -> Dict[str, Any]:
        return {"seed": self.seed, "initial_objective": self.initial_value, "final_objective": self.value,
                "stop_reason": self.stop_reason, "iterations": self.n_iters}


@dataclass(frozen=True, eq=False)
class PhaseOneResult:
    candidate_edges: np.ndarray
    edge_scores: np.ndarray
    selected_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    trace: List[Tuple[int, float]] = field(default_factory=list)
    stop_reason: str = ""
    initial_objective: float = math.nan
    final_objective: float = math.nan
    n_dropped: int = 0


def candidate_edges(cascades: CascadeSet, n_nodes: Optional[int] = None) -> np.ndarray:
    """Ordered pairs (i, j) with t_i < t_j in at least one cascade, sorted by (src, dst)"""
    n = int(n_nodes) if n_nodes is not None else cascades.max_node() + 1
    codes = []
    for c in cascades:
        if c.size < 2:
            continue
        src_idx, dst_idx = np.nonzero(c.times[:, None] < c.times[None, :])
        codes.append(c.nodes[src_idx] * n + c.nodes[dst_idx])
    if not codes:
        return np.zeros((0, 2), dtype=np.int64)
    unique = np.unique(np.concatenate(codes))
    return np.column_stack([unique // n, unique % n]).astype(np.int64)


def _adam_minimize(tensors: PrecomputedCascadeTensors, raw: UnconstrainedParams, opt: OptimizerConfig,
                   seed: int, single_layer: bool = False, verbose: bool = False, label: str = "",
                   frozen_pi: Optional[np.ndarray] = None) -> OptimizationRun:
    """Rows of pi_raw flagged in `frozen_pi` keep their initial value"""

    def objective(alpha_raw: np.ndarray, pi_raw: np.ndarray) -> Tuple[float, UnconstrainedParams]:
        value, grad = nll_gradient(tensors, UnconstrainedParams(alpha_raw, pi_raw), single_layer=single_layer)
        if frozen_pi is not None:
            grad.pi_raw[frozen_pi] = 0.0
        return value, grad

    value, grad = objective(raw.alpha_raw, raw.pi_raw)
    if not math.isfinite(value):
        raise InferenceError(
            f"{label}: non-finite objective at initialization",
            diagnostics={"seed": seed, "initial_objective": value, "dropped_terms": tensors.n_dropped},
        )

    params = {"alpha": raw.alpha_raw.copy(), "pi": raw.pi_raw.copy()}
    adam = AdamOptimizer(lr=opt.learning_rate, beta1=opt.beta1, beta2=opt.beta2, epsilon=opt.eps_adam)
    monitor = StoppingMonitor(opt.rel_tol, opt.patience)
    monitor.update(value)

    initial_value = value
    best_value = value
    best = {k: v.copy() for k, v in params.items()}
    trace = [(0, value)]
    stop_reason = "max_iters"
    iteration = 0

    for iteration in range(1, opt.max_iters + 1):
        adam.step(params, {"alpha": grad.alpha_raw, "pi": grad.pi_raw})
        value, grad = objective(params["alpha"], params["pi"])
        if not math.isfinite(value):
            stop_reason = "diverged"
            break
        trace.append((iteration, value))
        if value < best_value:
            best_value = value
            best = {k: v.copy() for k, v in params.items()}
        if verbose and iteration % PROGRESS_EVERY == 0:
            print(f"    → {label} iteration {iteration}/{opt.max_iters} | objective {value:.6f}")
        if monitor.update(value):
            stop_reason = "tolerance"
            break

    return OptimizationRun(raw=UnconstrainedParams(best["alpha"], best["pi"]), value=best_value,
                           initial_value=initial_value, trace=trace, stop_reason=stop_reason,
                           n_iters=iteration, seed=seed)


def phase1_single_layer(cascades: CascadeSet, edges: np.ndarray, opt: OptimizerConfig,
                        n_nodes: Optional[int] = None, verbose: bool = False,
                        tensors: Optional[PrecomputedCascadeTensors] = None) -> PhaseOneResult:
    """Fit one shared rate per candidate edge; the fitted rates are the edge scores"""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise InferenceError("phase 1 needs at least one candidate edge")
    n = int(n_nodes) if n_nodes is not None else cascades.max_node() + 1
    if tensors is None:
        tensors = build_tensors(cascades, edges, n)

    seed = opt.restarts[0]
    raw = initial_params(len(edges), len(cascades), 1, make_rng(seed, STREAM_PHASE1_INIT))
    run = _adam_minimize(tensors, raw, opt, seed, single_layer=True, verbose=verbose, label="Phase 1")
    if verbose:
        print(f"  ✓ Phase 1 stopped by {run.stop_reason} after {run.n_iters} iterations "
              f"(objective {run.initial_value:.4f} → {run.value:.4f})")

    return PhaseOneResult(candidate_edges=edges, edge_scores=expit(run.raw.alpha_raw[0]), trace=run.trace,
                          stop_reason=run.stop_reason, initial_objective=run.initial_value,
                          final_objective=run.value, n_dropped=tensors.n_dropped)


def _rank_order(edges: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Descending score, ties by (src, dst)"""
    return np.lexsort((edges[:, 1], edges[:, 0], -np.asarray(scores, dtype=np.float64)))


def default_budget(n_true_edges: int, factor: float = config.BUDGET_FACTOR) -> int:
    if factor <= 0:
        raise ConfigError(f"budget factor must be positive (got {factor})")
    return max(int(math.floor(factor * n_true_edges + 0.5)), 1)


def select_edges(edges: np.ndarray, scores: np.ndarray, budget: int) -> np.ndarray:
    """Top-`budget` edges in rank order"""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if budget < 1:
        raise ConfigError(f"edge budget must be at least 1 (got {budget})")
    if budget > len(edges):
        warnings.warn(BudgetWarning(f"budget {budget} exceeds the {len(edges)} candidate edges; keeping all"),
                      stacklevel=2)
    return edges[_rank_order(edges, scores)[:budget]]


def select_by_threshold(edges: np.ndarray, scores: np.ndarray, delta: float) -> np.ndarray:
    """Edges scoring strictly above delta, in rank order"""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if not 0 <= delta < 1:
        raise ConfigError(f"score threshold must lie in [0, 1) (got {delta})")
    order = _rank_order(edges, scores)
    return edges[order[np.asarray(scores)[order] > delta]]


def _restart(tensors: PrecomputedCascadeTensors, n_layers: int, opt: OptimizerConfig, seed: int,
             verbose: bool, n_free: Optional[int] = None) -> OptimizationRun:
    """One phase-2 run; cascade rows from n_free on hold the uniform membership fixed"""
    raw = initial_params(tensors.n_edges, tensors.n_cascades, n_layers, make_rng(seed, STREAM_RESTART_INIT))
    frozen = None
    if n_free is not None and n_free < tensors.n_cascades:
        raw.pi_raw[n_free:] = uniform_pi_raw(tensors.n_cascades - n_free, n_layers)
        frozen = np.arange(tensors.n_cascades) >= n_free
    try:
        return _adam_minimize(tensors, raw, opt, seed, verbose=verbose, label=f"Phase 2 seed {seed}",
                              frozen_pi=frozen)
    except InferenceError as e:
        initial = e.diagnostics.get("initial_objective", math.inf)
        return OptimizationRun(raw=raw, value=math.inf, initial_value=initial, trace=[(0, initial)],
                               stop_reason="diverged", n_iters=0, seed=seed)


def phase2_multilayer(cascades: CascadeSet, phase_one: PhaseOneResult, n_layers: int, opt: OptimizerConfig,
                      n_nodes: Optional[int] = None, select_by: str = "nll", threads: int = 1,
                      verbose: bool = False, pooled: Optional[CascadeSet] = None) -> InferenceResult:
    """
    Joint fit of K layer rates over the selected edges and one membership
    vector per cascade. Every seed in opt.restarts is one restart; the restart
    with the lowest objective wins, or with select_by="pi_accuracy" the one
    whose memberships best match the cascades' recorded main layers.

    Cascades in `pooled` inform the rates only: their membership stays
    uniform and is not part of the result.
    """
    if n_layers < 2:
        raise ConfigError(f"multilayer decomposition needs K >= 2 (got {n_layers})")
    if select_by not in SELECT_BY:
        raise ConfigError(f"select_by must be one of {SELECT_BY} (got {select_by!r})")
    edges = phase_one.selected_edges
    if len(edges) == 0:
        raise InferenceError("phase 2 needs at least one selected edge")
    if len(cascades) == 0:
        raise InferenceError("phase 2 needs at least one cascade")
    labels = cascades.main_layers() if select_by == "pi_accuracy" else None
    n_free = len(cascades)
    n_pooled = len(pooled) if pooled is not None else 0
    fitted = CascadeSet(tuple(cascades) + tuple(pooled)) if n_pooled else cascades
    n = int(n_nodes) if n_nodes is not None else fitted.max_node() + 1
    tensors = build_tensors(fitted, edges, n)

    seeds = list(opt.restarts)
    runs: List[Optional[OptimizationRun]] = [None] * len(seeds)
    if threads <= 1 or len(seeds) == 1:
        for idx, seed in enumerate(seeds):
            runs[idx] = _restart(tensors, n_layers, opt, seed, verbose, n_free)
    else:
        with ThreadPoolExecutor(max_workers=min(threads, len(seeds))) as executor:
            future_to_index = {executor.submit(_restart, tensors, n_layers, opt, seed, False, n_free): idx
                               for idx, seed in enumerate(seeds)}
            for future in as_completed(future_to_index):
                runs[future_to_index[future]] = future.result()

    finite = [r for r in runs if math.isfinite(r.value)]
    if not finite:
        raise InferenceError("every phase-2 restart diverged",
                             diagnostics={"seeds": seeds, "dropped_terms": tensors.n_dropped},
                             traces=[r.trace for r in runs])

    summaries = []
    for run in runs:
        summary = run.summary()
        if labels is not None and math.isfinite(run.value):
            summary["pi_accuracy"] = best_pi_accuracy(stick_breaking(run.raw.pi_raw[:n_free])[0], labels)
        summaries.append(summary)
        if verbose:
            mark = "✓" if math.isfinite(run.value) else "✗"
            print(f"  {mark} Restart seed {run.seed}: {run.stop_reason} after {run.n_iters} iterations, "
                  f"objective {run.value:.4f}")

    # first in seed order wins ties
    if labels is None:
        chosen = min(finite, key=lambda r: r.value)
    else:
        accuracy = {s["seed"]: s.get("pi_accuracy", -1.0) for s in summaries}
        chosen = max(finite, key=lambda r: (accuracy[r.seed], -r.value))

    alpha_hat = expit(chosen.raw.alpha_raw)
    pi_hat, _, _ = stick_breaking(chosen.raw.pi_raw[:n_free])
    return InferenceResult(
        candidate_edges=phase_one.candidate_edges,
        edge_scores=phase_one.edge_scores,
        selected_edges=edges,
        alpha_hat=alpha_hat,
        pi_hat=pi_hat,
        cascade_ids=cascades.ids,
        objective_trace=chosen.trace,
        restart_seed=chosen.seed,
        n_nodes=n,
        provenance={"restarts": summaries, "select_by": select_by, "phase2_dropped_terms": tensors.n_dropped,
                    "n_cascades_pooled": n_pooled},
    )


def run_pipeline(cascades: CascadeSet, n_layers: int, opt1: OptimizerConfig, opt2: OptimizerConfig,
                 budget: Optional[int] = None, threshold: Optional[float] = None, n_nodes: Optional[int] = None,
                 select_by: str = "nll", phase2_min_size: Optional[int] = None, pool_small: bool = False,
                 threads: int = 1, verbose: bool = False) -> InferenceResult:
    """
    candidate edges → phase 1 → edge selection → phase 2.

    Exactly one of `budget` (top-k) and `threshold` (score > delta) picks
    E_S. With phase2_min_size only cascades larger than it get a membership
    in phase 2; the smaller ones are dropped, or with pool_small kept as
    rate evidence under a fixed uniform membership.
    Cascades are processed in id order, so file ordering never matters.
    """
    if n_layers < 1:
        raise ConfigError(f"number of layers must be at least 1 (got {n_layers})")
    if (budget is None) == (threshold is None):
        raise ConfigError("exactly one of an edge budget or a score threshold is required")
    if len(cascades) == 0:
        raise InferenceError("empty cascade set", diagnostics={"n_cascades": 0})

    cascades = CascadeSet(tuple(sorted(cascades, key=lambda c: c.id)))
    n = int(n_nodes) if n_nodes is not None else cascades.max_node() + 1
    timings: Dict[str, float] = {}
    start = time.perf_counter()

    ep = candidate_edges(cascades, n)
    if len(ep) == 0:
        raise InferenceError("no candidate edges: every cascade has a single activated node",
                             diagnostics={"n_cascades": len(cascades)})
    if verbose:
        print(f"  Phase 1: {len(ep)} candidate edges over {len(cascades)} cascades")

    phase_one = phase1_single_layer(cascades, ep, opt1, n_nodes=n, verbose=verbose)
    if budget is not None:
        es = select_edges(ep, phase_one.edge_scores, budget)
    else:
        es = select_by_threshold(ep, phase_one.edge_scores, threshold)
    if len(es) == 0:
        raise InferenceError(f"no candidate edge scores above the threshold {threshold}",
                             diagnostics={"n_candidate_edges": len(ep)})
    phase_one = replace(phase_one, selected_edges=es)
    timings["phase1"] = time.perf_counter() - start

    phase2_cascades, pooled = cascades, None
    if phase2_min_size is not None:
        phase2_cascades = filter_cascades(cascades, phase2_min_size)
        if len(phase2_cascades) == 0:
            raise InferenceError(f"no cascade larger than {phase2_min_size} is left for phase 2",
                                 diagnostics={"n_cascades": len(cascades)})
        if pool_small and len(phase2_cascades) < len(cascades):
            pooled = CascadeSet(tuple(c for c in cascades if c.size <= phase2_min_size))

    t2 = time.perf_counter()
    if n_layers == 1:
        score_of = dict(zip(map(tuple, ep.tolist()), phase_one.edge_scores.tolist()))
        result = InferenceResult(
            candidate_edges=ep,
            edge_scores=phase_one.edge_scores,
            selected_edges=es,
            alpha_hat=np.array([[score_of[tuple(e)] for e in es.tolist()]]),
            pi_hat=np.ones((len(phase2_cascades), 1)),
            cascade_ids=phase2_cascades.ids,
            objective_trace=phase_one.trace,
            restart_seed=opt1.restarts[0],
            n_nodes=n,
        )
    else:
        if verbose:
            pooled_note = f" (+{len(pooled)} pooled)" if pooled is not None else ""
            print(f"  Phase 2: {len(es)} selected edges, {len(phase2_cascades)} cascades{pooled_note}, K={n_layers}")
        result = phase2_multilayer(phase2_cascades, phase_one, n_layers, opt2, n_nodes=n,
                                   select_by=select_by, threads=threads, verbose=verbose, pooled=pooled)
    timings["phase2"] = time.perf_counter() - t2
    timings["total"] = time.perf_counter() - start

    provenance = {
        "n_layers": n_layers,
        "phase1_config": asdict(opt1),
        "phase2_config": asdict(opt2),
        "budget": budget,
        "threshold": threshold,
        "phase2_min_size": phase2_min_size,
        "pool_small": pool_small,
        "n_cascades": len(cascades),
        "n_cascades_phase2": len(phase2_cascades),
        "n_candidate_edges": len(ep),
        "n_selected_edges": len(es),
        "phase1_seed": opt1.restarts[0],
        "phase1_stop_reason": phase_one.stop_reason,
        "phase1_iterations": len(phase_one.trace) - 1,
        "phase1_dropped_terms": phase_one.n_dropped,
        "timings": timings,
    }
    provenance.update(result.provenance)
    return replace(result, provenance=provenance)
