"""
Core data model for multilayer diffusion networks and cascade logs,
plus the on-disk formats every other module reads and writes
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

NETWORK_HEADER = "layer\tsrc\tdst\trate"
EDGE_SCORE_HEADER = "src\tdst\tscore"
ID_MAP_HEADER = "id\thandle"

# RNG stream tags; every stream is Philox keyed by (seed, tag, index)
STREAM_NETWORK = 1
STREAM_CASCADE = 2      # index = cascade id
STREAM_PHASE1_INIT = 3
STREAM_RESTART_INIT = 4  # index = restart seed
STREAM_MEMBERSHIP = 5    # index = cascade id


class DiffusionNetworkError(Exception):
    """Base class for every error raised by this package"""


class ParseError(DiffusionNetworkError):
    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class InvariantError(DiffusionNetworkError):
    pass


class ConfigError(DiffusionNetworkError):
    pass


class InferenceError(DiffusionNetworkError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None, traces: Optional[List] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.traces = traces or []


class MetricError(DiffusionNetworkError):
    pass


class ZeroHazardWarning(UserWarning):
    """Activated non-seed nodes whose total incoming hazard is zero"""

    def __init__(self, pairs: List[Tuple[int, int]]):
        self.pairs = list(pairs)
        preview = ", ".join(f"(c={c}, j={j})" for c, j in self.pairs[:10])
        more = f" and {len(self.pairs) - 10} more" if len(self.pairs) > 10 else ""
        super().__init__(f"zero incoming hazard for {len(self.pairs)} activation(s): {preview}{more}")


class BudgetWarning(UserWarning):
    pass


class UndefinedMetricWarning(UserWarning):
    pass


def make_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for one documented stream"""
    if seed < 0 or index < 0:
        raise ConfigError(f"seeds and stream indices must be non-negative (got seed={seed}, index={index})")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _pair_codes(src: np.ndarray, dst: np.ndarray, n_nodes: int) -> np.ndarray:
    return src.astype(np.int64) * n_nodes + dst.astype(np.int64)


@dataclass(frozen=True, eq=False)
class MultilayerNetwork:
    """
    K-layer directed weighted graph over N nodes.

    Each layer is stored as parallel (src, dst, rate) arrays sorted by
    (src, dst). Absent entries mean a transmission rate of 0.
    """
    n_nodes: int
    n_layers: int
    src: Tuple[np.ndarray, ...]
    dst: Tuple[np.ndarray, ...]
    rate: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.n_layers < 1:
            raise InvariantError(f"a network needs at least one layer (got {self.n_layers})")
        if self.n_nodes < 0:
            raise InvariantError(f"negative node count {self.n_nodes}")
        if not (len(self.src) == len(self.dst) == len(self.rate) == self.n_layers):
            raise InvariantError("per-layer arrays do not match the declared layer count")

        srcs, dsts, rates = [], [], []
        for k in range(self.n_layers):
            s = np.asarray(self.src[k], dtype=np.int64).reshape(-1)
            d = np.asarray(self.dst[k], dtype=np.int64).reshape(-1)
            r = np.asarray(self.rate[k], dtype=np.float64).reshape(-1)
            if not (len(s) == len(d) == len(r)):
                raise InvariantError(f"layer {k}: src/dst/rate lengths differ")
            if len(s):
                if s.min() < 0 or d.min() < 0 or s.max() >= self.n_nodes or d.max() >= self.n_nodes:
                    raise InvariantError(f"layer {k}: node id outside [0, {self.n_nodes})")
                if np.any(s == d):
                    raise InvariantError(f"layer {k}: self-loop")
                if not np.all(np.isfinite(r)) or np.any(r <= 0.0) or np.any(r > 1.0):
                    raise InvariantError(f"layer {k}: rates must lie in (0, 1]")
            order = np.lexsort((d, s))
            s, d, r = s[order], d[order], r[order]
            codes = _pair_codes(s, d, self.n_nodes)
            if len(codes) > 1 and np.any(codes[1:] == codes[:-1]):
                raise InvariantError(f"layer {k}: duplicate edge")
            srcs.append(_frozen(s))
            dsts.append(_frozen(d))
            rates.append(_frozen(r))

        object.__setattr__(self, "src", tuple(srcs))
        object.__setattr__(self, "dst", tuple(dsts))
        object.__setattr__(self, "rate", tuple(rates))

    @classmethod
    def from_edges(cls, n_nodes: int, layers: Sequence[Sequence[Tuple[int, int, float]]]) -> "MultilayerNetwork":
        """Build from one list of (src, dst, rate) triples per layer"""
        src, dst, rate = [], [], []
        for edges in layers:
            edges = list(edges)
            src.append(np.array([e[0] for e in edges], dtype=np.int64))
            dst.append(np.array([e[1] for e in edges], dtype=np.int64))
            rate.append(np.array([e[2] for e in edges], dtype=np.float64))
        return cls(n_nodes, len(layers), tuple(src), tuple(dst), tuple(rate))

    def edges(self, k: int) -> np.ndarray:
        return np.column_stack([self.src[k], self.dst[k]]) if self.n_edges(k) else np.zeros((0, 2), dtype=np.int64)

    def n_edges(self, k: int) -> int:
        return len(self.src[k])

    @property
    def total_edges(self) -> int:
        return sum(self.n_edges(k) for k in range(self.n_layers))

    def edge_codes(self, k: int) -> np.ndarray:
        return _pair_codes(self.src[k], self.dst[k], self.n_nodes)

    def edge_set(self, k: int) -> set:
        return set(zip(self.src[k].tolist(), self.dst[k].tolist()))

    def alpha_dense(self) -> np.ndarray:
        """K x N x N array of rates (only sensible for small N)"""
        alpha = np.zeros((self.n_layers, self.n_nodes, self.n_nodes))
        for k in range(self.n_layers):
            alpha[k, self.src[k], self.dst[k]] = self.rate[k]
        return alpha

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultilayerNetwork):
            return NotImplemented
        if (self.n_nodes, self.n_layers) != (other.n_nodes, other.n_layers):
            return False
        return all(
            np.array_equal(self.src[k], other.src[k])
            and np.array_equal(self.dst[k], other.dst[k])
            and np.array_equal(self.rate[k], other.rate[k])
            for k in range(self.n_layers)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AggregatedNetwork:
    """Single-layer union of a multilayer network's edge sets, optionally scored"""
    n_nodes: int
    edges: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and np.any(e[:, 0] == e[:, 1]):
            raise InvariantError("aggregated network contains a self-loop")
        codes = _pair_codes(e[:, 0], e[:, 1], self.n_nodes)
        if len(np.unique(codes)) != len(codes):
            raise InvariantError("aggregated network contains a duplicate edge")
        object.__setattr__(self, "edges", _frozen(e))
        if self.scores is not None:
            s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if len(s) != len(e):
                raise InvariantError("one score per aggregated edge is required")
            object.__setattr__(self, "scores", _frozen(s))

    def __len__(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set:
        return set(map(tuple, self.edges.tolist()))

    def edge_codes(self) -> np.ndarray:
        return _pair_codes(self.edges[:, 0], self.edges[:, 1], self.n_nodes)


def aggregate(net: MultilayerNetwork) -> AggregatedNetwork:
    """E_A: union of all layers' edge sets, each pair once, sorted by (src, dst)"""
    if net.total_edges == 0:
        return AggregatedNetwork(net.n_nodes, np.zeros((0, 2), dtype=np.int64))
    codes = np.unique(np.concatenate([net.edge_codes(k) for k in range(net.n_layers)]))
    return AggregatedNetwork(net.n_nodes, np.column_stack([codes // max(net.n_nodes, 1), codes % max(net.n_nodes, 1)]))


def read_network(path) -> MultilayerNetwork:
    """Parse the network TSV format; every invariant violation names its line"""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")

    meta = lines[0].strip() if lines else ""
    if not meta.startswith("#"):
        raise ParseError(path, 1, "expected metadata line '# nodes=<N> layers=<K>'")
    fields = dict(part.split("=", 1) for part in meta[1:].split() if "=" in part)
    try:
        n_nodes = int(fields["nodes"])
        n_layers = int(fields["layers"])
    except (KeyError, ValueError):
        raise ParseError(path, 1, f"malformed metadata line: {meta!r}")
    if n_nodes < 0 or n_layers < 1:
        raise ParseError(path, 1, f"invalid sizes nodes={n_nodes} layers={n_layers}")

    if len(lines) < 2 or lines[1].rstrip("\r") != NETWORK_HEADER:
        raise ParseError(path, 2, f"expected header {NETWORK_HEADER!r}")

    layers: List[List[Tuple[int, int, float]]] = [[] for _ in range(n_layers)]
    seen = set()
    for line_no, raw in enumerate(lines[2:], start=3):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(path, line_no, f"expected 4 tab-separated fields, got {len(parts)}")
        try:
            k, i, j = int(parts[0]), int(parts[1]), int(parts[2])
            rate = float(parts[3])
        except ValueError:
            raise ParseError(path, line_no, f"malformed edge line: {line!r}")
        if not 0 <= k < n_layers:
            raise ParseError(path, line_no, f"layer {k} outside [0, {n_layers})")
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise ParseError(path, line_no, f"node id outside [0, {n_nodes})")
        if i == j:
            raise ParseError(path, line_no, f"self-loop on node {i}")
        if not (math.isfinite(rate) and 0.0 < rate <= 1.0):
            raise ParseError(path, line_no, f"rate {parts[3]} outside (0, 1]")
        if (k, i, j) in seen:
            raise ParseError(path, line_no, f"duplicate edge ({k}, {i}, {j})")
        seen.add((k, i, j))
        layers[k].append((i, j, rate))

    return MultilayerNetwork.from_edges(n_nodes, layers)


def write_network(net: MultilayerNetwork, path) -> None:
    """Write the network TSV; rates keep 17 significant digits so reads are bit-exact"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# nodes={net.n_nodes} layers={net.n_layers}\n")
        f.write(NETWORK_HEADER + "\n")
        for k in range(net.n_layers):
            for i, j, r in zip(net.src[k].tolist(), net.dst[k].tolist(), net.rate[k].tolist()):
                f.write(f"{k}\t{i}\t{j}\t{r:.17g}\n")


@dataclass(frozen=True)
class CascadeTruth:
    main_layer: int
    eps: float
    pi: Tuple[float, ...]

    def __post_init__(self):
        pi = tuple(float(p) for p in self.pi)
        object.__setattr__(self, "pi", pi)
        if not pi:
            raise InvariantError("truth membership vector is empty")
        if any(p < 0.0 or p > 1.0 for p in pi):
            raise InvariantError(f"membership entries must lie in [0, 1]: {pi}")
        if abs(math.fsum(pi) - 1.0) > 1e-12:
            raise InvariantError(f"membership vector does not sum to 1: {pi}")
        if not 0 <= self.main_layer < len(pi):
            raise InvariantError(f"main layer {self.main_layer} outside [0, {len(pi)})")


@dataclass(frozen=True, eq=False)
class Cascade:
    """
    One spreading trace. Only activated nodes are stored; a missing node
    means t = T (never activated before the horizon).
    """
    id: int
    horizon: float
    nodes: np.ndarray
    times: np.ndarray
    truth: Optional[CascadeTruth] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1)
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvariantError(f"cascade {self.id}: horizon must be positive and finite")
        if len(nodes) == 0:
            raise InvariantError(f"cascade {self.id}: no activated node")
        if len(nodes) != len(times):
            raise InvariantError(f"cascade {self.id}: nodes/times lengths differ")
        if np.any(nodes < 0):
            raise InvariantError(f"cascade {self.id}: negative node id")
        if not np.all(np.isfinite(times)) or np.any(times < 0.0):
            raise InvariantError(f"cascade {self.id}: negative or non-finite activation time")
        if np.any(times >= self.horizon):
            raise InvariantError(f"cascade {self.id}: activation time at or after horizon {self.horizon}")
        if len(np.unique(nodes)) != len(nodes):
            raise InvariantError(f"cascade {self.id}: node activated twice")
        order = np.lexsort((nodes, times))
        object.__setattr__(self, "nodes", _frozen(nodes[order]))
        object.__setattr__(self, "times", _frozen(times[order]))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def activation_time(self) -> Dict[int, float]:
        return dict(zip(self.nodes.tolist(), self.times.tolist()))

    @property
    def seed_nodes(self) -> np.ndarray:
        """Every node attaining the minimum activation time"""
        return self.nodes[self.times == self.times[0]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cascade):
            return NotImplemented
        return (
            self.id == other.id
            and self.horizon == other.horizon
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.times, other.times)
            and self.truth == other.truth
        )

    __hash__ = None


@dataclass(frozen=True)
class CascadeSet:
    cascades: Tuple[Cascade, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "cascades", tuple(self.cascades))

    def __len__(self) -> int:
        return len(self.cascades)

    def __iter__(self) -> Iterator[Cascade]:
        return iter(self.cascades)

    def __getitem__(self, idx) -> Cascade:
        return self.cascades[idx]

    @property
    def ids(self) -> np.ndarray:
        return np.array([c.id for c in self.cascades], dtype=np.int64)

    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.cascades], dtype=np.int64)

    def max_node(self) -> int:
        return max((int(c.nodes.max()) for c in self.cascades), default=-1)

    def has_truth(self) -> bool:
        return len(self.cascades) > 0 and all(c.truth is not None for c in self.cascades)

    def main_layers(self) -> np.ndarray:
        if not self.has_truth():
            raise MetricError("cascade set carries no ground-truth layer labels")
        return np.array([c.truth.main_layer for c in self.cascades], dtype=np.int64)

    def pi_matrix(self) -> np.ndarray:
        if not self.has_truth():
            raise MetricError("cascade set carries no ground-truth memberships")
        return np.array([c.truth.pi for c in self.cascades], dtype=np.float64)


def _cascade_from_record(record: Dict[str, Any]) -> Cascade:
    truth = None
    if record.get("truth") is not None:
        t = record["truth"]
        pi = [float(p) for p in t["pi"]]
        main_layer = int(t["main_layer"]) if "main_layer" in t else int(np.argmax(pi))
        truth = CascadeTruth(main_layer=main_layer, eps=float(t.get("eps", 1.0 - pi[main_layer])), pi=tuple(pi))
    events = record["events"]
    nodes = [int(e[0]) for e in events]
    times = [float(e[1]) for e in events]
    return Cascade(id=int(record["id"]), horizon=float(record["T"]), nodes=np.array(nodes, dtype=np.int64),
                   times=np.array(times, dtype=np.float64), truth=truth)


def read_cascades(path) -> CascadeSet:
    """Parse the cascade JSON-lines format; size-1 cascades are admitted"""
    path = Path(path)
    cascades = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                cascade = _cascade_from_record(record)
            except json.JSONDecodeError as e:
                raise ParseError(path, line_no, f"invalid JSON: {e.msg}")
            except (KeyError, TypeError, ValueError, IndexError) as e:
                raise ParseError(path, line_no, f"malformed cascade record: {e}")
            except InvariantError as e:
                raise ParseError(path, line_no, str(e))
            if cascade.id in seen_ids:
                raise ParseError(path, line_no, f"duplicate cascade id {cascade.id}")
            seen_ids.add(cascade.id)
            cascades.append(cascade)
    return CascadeSet(tuple(cascades))


def cascade_to_record(c: Cascade) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "id": int(c.id),
        "T": float(c.horizon),
        "events": [[n, t] for n, t in zip(c.nodes.tolist(), c.times.tolist())],
    }
    if c.truth is not None:
        record["truth"] = {"main_layer": int(c.truth.main_layer), "eps": float(c.truth.eps), "pi": list(c.truth.pi)}
    return record


def write_cascades(cs: CascadeSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for c in cs:
            f.write(json.dumps(cascade_to_record(c), separators=(",", ":")) + "\n")


def ingest_event_log(path, horizon: float) -> Tuple[CascadeSet, List[str]]:
    """
    Turn a raw `cascade,user,time` CSV with string handles into dense ids.

    Handles get ids in order of first appearance. Each cascade is shifted so
    its first event is at 0, keeps only the earliest event per user and
    drops events at or after the horizon. Returns the cascades (ordered by
    external cascade key) and the id -> handle list.
    """
    df = pd.read_csv(path, dtype={"cascade": str, "user": str})
    missing = {"cascade", "user", "time"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"event log is missing column(s): {sorted(missing)}")
    df["time"] = pd.to_numeric(df["time"], errors="raise").astype(float)

    handles = list(pd.unique(df["user"]))
    node_of = {h: i for i, h in enumerate(handles)}

    cascades = []
    for cascade_id, (_, group) in enumerate(df.groupby("cascade", sort=True)):
        group = group.sort_values(["time", "user"], kind="mergesort").drop_duplicates("user", keep="first")
        times = group["time"].to_numpy() - group["time"].min()
        keep = times < horizon
        nodes = np.array([node_of[h] for h in group["user"]], dtype=np.int64)[keep]
        cascades.append(Cascade(id=cascade_id, horizon=horizon, nodes=nodes, times=times[keep]))
    return CascadeSet(tuple(cascades)), handles


def write_id_map(handles: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(ID_MAP_HEADER + "\n")
        for i, h in enumerate(handles):
            f.write(f"{i}\t{h}\n")


def read_id_map(path) -> List[str]:
    df = pd.read_csv(path, sep="\t", dtype={"id": int, "handle": str}, keep_default_na=False)
    return df.sort_values("id")["handle"].tolist()


@dataclass(frozen=True, eq=False)
class InferenceResult:
    """
    Output of the two-phase pipeline.

    candidate_edges/edge_scores cover E_P; alpha_hat is K x |E_S| aligned
    with selected_edges; pi_hat is C x K aligned with cascade_ids.
    """
    candidate_edges: np.ndarray
    edge_scores: np.ndarray
    selected_edges: np.ndarray
    alpha_hat: np.ndarray
    pi_hat: np.ndarray
    cascade_ids: np.ndarray
    objective_trace: List[Tuple[int, float]]
    restart_seed: int
    n_nodes: int
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ep = np.asarray(self.candidate_edges, dtype=np.int64).reshape(-1, 2)
        es = np.asarray(self.selected_edges, dtype=np.int64).reshape(-1, 2)
        scores = np.asarray(self.edge_scores, dtype=np.float64).reshape(-1)
        alpha = np.asarray(self.alpha_hat, dtype=np.float64).reshape(-1, len(es))
        pi = np.asarray(self.pi_hat, dtype=np.float64)
        if pi.ndim == 1:
            pi = pi.reshape(-1, 1)
        if len(scores) != len(ep):
            raise InvariantError("one score per candidate edge is required")
        if np.any(scores < 0) or np.any(scores > 1) or np.any(alpha < 0) or np.any(alpha > 1):
            raise InvariantError("scores and rates must lie in [0, 1]")
        if len(pi) and np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
            raise InvariantError("every pi_hat row must sum to 1")
        if len(es):
            ep_codes = _pair_codes(ep[:, 0], ep[:, 1], self.n_nodes)
            es_codes = _pair_codes(es[:, 0], es[:, 1], self.n_nodes)
            if not np.all(np.isin(es_codes, ep_codes)):
                raise InvariantError("selected edges must be a subset of the candidate edges")
        object.__setattr__(self, "candidate_edges", _frozen(ep))
        object.__setattr__(self, "selected_edges", _frozen(es))
        object.__setattr__(self, "edge_scores", _frozen(scores))
        object.__setattr__(self, "alpha_hat", _frozen(alpha))
        object.__setattr__(self, "pi_hat", _frozen(pi))
        object.__setattr__(self, "cascade_ids", _frozen(np.asarray(self.cascade_ids, dtype=np.int64).reshape(-1)))

    @property
    def n_layers(self) -> int:
        return self.alpha_hat.shape[0]

    @property
    def final_objective(self) -> float:
        """Objective at the returned (best) iterate"""
        return min(v for _, v in self.objective_trace) if self.objective_trace else float("nan")

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        provenance = dict(self.provenance)
        if not include_timings:
            provenance.pop("timings", None)
        return {
            "n_nodes": int(self.n_nodes),
            "candidate_edges": self.candidate_edges.tolist(),
            "edge_scores": self.edge_scores.tolist(),
            "selected_edges": self.selected_edges.tolist(),
            "alpha_hat": self.alpha_hat.tolist(),
            "pi_hat": self.pi_hat.tolist(),
            "cascade_ids": self.cascade_ids.tolist(),
            "objective_trace": [[int(i), float(v)] for i, v in self.objective_trace],
            "restart_seed": int(self.restart_seed),
            "provenance": provenance,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InferenceResult":
        n_selected = len(data["selected_edges"])
        return cls(
            candidate_edges=np.array(data["candidate_edges"], dtype=np.int64).reshape(-1, 2),
            edge_scores=np.array(data["edge_scores"], dtype=np.float64),
            selected_edges=np.array(data["selected_edges"], dtype=np.int64).reshape(-1, 2),
            alpha_hat=np.array(data["alpha_hat"], dtype=np.float64).reshape(-1, n_selected),
            pi_hat=np.array(data["pi_hat"], dtype=np.float64),
            cascade_ids=np.array(data["cascade_ids"], dtype=np.int64),
            objective_trace=[(int(i), float(v)) for i, v in data["objective_trace"]],
            restart_seed=int(data["restart_seed"]),
            n_nodes=int(data["n_nodes"]),
            provenance=data.get("provenance", {}),
        )


def write_result(result: InferenceResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(result.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def read_result(path) -> InferenceResult:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, f"invalid JSON: {e.msg}")
    try:
        return InferenceResult.from_dict(data)
    except KeyError as e:
        raise ParseError(path, 1, f"result is missing field {e}")


def write_edge_scores(result: InferenceResult, path) -> None:
    """E_P scores, highest first, ties by (src, dst)"""
    ep, scores = result.candidate_edges, result.edge_scores
    order = np.lexsort((ep[:, 1], ep[:, 0], -scores)) if len(ep) else np.zeros(0, dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(EDGE_SCORE_HEADER + "\n")
        for idx in order.tolist():
            f.write(f"{ep[idx, 0]}\t{ep[idx, 1]}\t{scores[idx]:.17g}\n")


SNAP_CASCADES = "cascades.txt"
SNAP_CASCADE_INFO = "cascade_info.tsv"
SNAP_INFO_HEADER = "id\thorizon\tmain_layer"


def _snap_layer_file(k: int) -> str:
    return f"network_layer{k}.txt"


def _write_snap_nodes(f, n_nodes: int) -> None:
    for i in range(n_nodes):
        f.write(f"{i},{i}\n")
    f.write("\n")


def export_snap(cs: CascadeSet, out_dir, net: Optional[MultilayerNetwork] = None) -> List[Path]:
    """
    Write cascades (and optionally the true network) in the comma-separated
    text layout of the SNAP NetInf/NetRate tools, which FASTEN- and
    MMRate-style baselines also read.

    cascades.txt         one "id,name" line per node, a blank line, then one
                         line per cascade: "node,time,node,time,..." in
                         activation order
    cascade_info.tsv     id, horizon and true main layer (-1 if unknown) of
                         each cascade line, in the same order
    network_layer<k>.txt node block as above, then "src,dst,rate" per edge
                         of layer k

    Times and rates keep 17 significant digits.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_nodes = net.n_nodes if net is not None else cs.max_node() + 1
    if cs.max_node() >= n_nodes:
        raise InvariantError(f"cascade node {cs.max_node()} outside the network's {n_nodes} nodes")

    written = [out_dir / SNAP_CASCADES, out_dir / SNAP_CASCADE_INFO]
    with open(written[0], "w", encoding="utf-8", newline="\n") as f:
        _write_snap_nodes(f, n_nodes)
        for c in cs:
            f.write(",".join(f"{n},{t:.17g}" for n, t in zip(c.nodes.tolist(), c.times.tolist())) + "\n")
    with open(written[1], "w", encoding="utf-8", newline="\n") as f:
        f.write(SNAP_INFO_HEADER + "\n")
        for c in cs:
            main = c.truth.main_layer if c.truth is not None else -1
            f.write(f"{c.id}\t{c.horizon:.17g}\t{main}\n")

    if net is not None:
        for k in range(net.n_layers):
            path = out_dir / _snap_layer_file(k)
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                _write_snap_nodes(f, n_nodes)
                for i, j, r in zip(net.src[k].tolist(), net.dst[k].tolist(), net.rate[k].tolist()):
                    f.write(f"{i},{j},{r:.17g}\n")
            written.append(path)
    return written


def _read_snap_body(path) -> Tuple[int, List[Tuple[int, List[str]]]]:
    """Node count and the (line number, fields) rows after the blank separator"""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    try:
        blank = next(i for i, line in enumerate(lines) if not line.strip())
    except StopIteration:
        raise ParseError(path, len(lines), "missing blank line after the node block")
    rows = [(no, line.strip().split(",")) for no, line in enumerate(lines[blank + 1:], start=blank + 2) if line.strip()]
    return blank, rows


def import_snap(in_dir) -> Tuple[Optional[MultilayerNetwork], CascadeSet]:
    """Read back a directory written by export_snap; ground-truth memberships are not restored"""
    in_dir = Path(in_dir)
    n_nodes, rows = _read_snap_body(in_dir / SNAP_CASCADES)
    info_path = in_dir / SNAP_CASCADE_INFO
    info = pd.read_csv(info_path, sep="\t", dtype={"id": np.int64, "horizon": np.float64, "main_layer": np.int64})
    if len(info) != len(rows):
        raise ParseError(info_path, 1, f"{len(info)} info rows for {len(rows)} cascades")

    cascades = []
    for (line_no, fields), (cid, horizon) in zip(rows, zip(info["id"].tolist(), info["horizon"].tolist())):
        if len(fields) % 2:
            raise ParseError(in_dir / SNAP_CASCADES, line_no, "odd number of node,time fields")
        try:
            nodes = [int(x) for x in fields[0::2]]
            times = [float(x) for x in fields[1::2]]
            cascades.append(Cascade(cid, horizon, np.array(nodes), np.array(times)))
        except ValueError as e:
            raise ParseError(in_dir / SNAP_CASCADES, line_no, f"malformed cascade line: {e}")
        except InvariantError as e:
            raise ParseError(in_dir / SNAP_CASCADES, line_no, str(e))

    layers = []
    while (in_dir / _snap_layer_file(len(layers))).exists():
        path = in_dir / _snap_layer_file(len(layers))
        _, edge_rows = _read_snap_body(path)
        edges = []
        for line_no, fields in edge_rows:
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected src,dst,rate, got {len(fields)} fields")
            try:
                edges.append((int(fields[0]), int(fields[1]), float(fields[2])))
            except ValueError:
                raise ParseError(path, line_no, f"malformed edge line: {','.join(fields)!r}")
        layers.append(edges)
    net = MultilayerNetwork.from_edges(n_nodes, layers) if layers else None
    return net, CascadeSet(tuple(cascades))
