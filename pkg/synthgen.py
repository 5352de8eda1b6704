"""
Synthetic ground truth: log-normal directed configuration-model layers and
SIR cascades simulated on the membership-weighted network
"""
import heapq
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core import (
    STREAM_CASCADE,
    STREAM_MEMBERSHIP,
    STREAM_NETWORK,
    Cascade,
    CascadeSet,
    CascadeTruth,
    ConfigError,
    InvariantError,
    MultilayerNetwork,
    aggregate,
    make_rng,
)

# Share of 1 - overlap that is actually re-matched. Colliding stubs are removed
# afterwards, so overlap=0.5 realizes a layer overlap of about 0.58.
REWIRE_SHARE = 0.88


@dataclass(frozen=True)
class NetworkGenConfig:
    n_nodes: int = 1000
    n_layers: int = 2
    overlap: float = 0.0
    mu_in: float = 0.5
    sigma_in: float = 1.0
    mu_out: float = 0.0
    sigma_out: float = math.sqrt(2.0)
    rate_low: float = 0.01
    rate_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ConfigError(f"n_nodes must be at least 2 (got {self.n_nodes})")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be at least 1 (got {self.n_layers})")
        if not (self.sigma_in > 0 and self.sigma_out > 0):
            raise ConfigError("log-normal sigmas must be positive")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError(f"overlap must lie in [0, 1] (got {self.overlap})")
        if not 0.0 < self.rate_low < self.rate_high <= 1.0:
            raise ConfigError("rates must satisfy 0 < rate_low < rate_high <= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class CascadeGenConfig:
    horizon: float = 10.0
    recovery_rate: float = 2.0
    seed_prob: Optional[float] = None  # None means 1/N
    eps_max: float = 0.0
    n_cascades: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        # 0 disables recovery entirely
        if self.recovery_rate < 0:
            raise ConfigError("recovery_rate must be non-negative")
        if self.seed_prob is not None and not 0.0 < self.seed_prob <= 1.0:
            raise ConfigError("seed_prob must lie in (0, 1]")
        if not 0.0 <= self.eps_max < 1.0:
            raise ConfigError("eps_max must lie in [0, 1)")
        if self.n_cascades < 0:
            raise ConfigError("n_cascades must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def rho(self, n_nodes: int) -> float:
        return self.seed_prob if self.seed_prob is not None else 1.0 / n_nodes


def _balance(in_deg: np.ndarray, out_deg: np.ndarray, cap: int, rng: np.random.Generator) -> None:
    """Top up the smaller-sum sequence one uniformly chosen stub at a time"""
    while True:
        diff = int(in_deg.sum() - out_deg.sum())
        if diff == 0:
            return
        smaller = out_deg if diff > 0 else in_deg
        eligible = np.flatnonzero(smaller < cap)
        if len(eligible) == 0:
            raise InvariantError("cannot balance degree sequences under the N-1 cap")
        picks = rng.choice(eligible, size=abs(diff), replace=True)
        np.add.at(smaller, picks, 1)
        np.minimum(smaller, cap, out=smaller)


def sample_degree_sequences(cfg: NetworkGenConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Rounded, clipped log-normal in/out degrees with equal sums"""
    n, cap = cfg.n_nodes, cfg.n_nodes - 1
    in_deg = np.clip(np.rint(rng.lognormal(cfg.mu_in, cfg.sigma_in, n)), 0, cap).astype(np.int64)
    out_deg = np.clip(np.rint(rng.lognormal(cfg.mu_out, cfg.sigma_out, n)), 0, cap).astype(np.int64)
    _balance(in_deg, out_deg, cap, rng)
    return in_deg, out_deg


def _simple_edges(src: np.ndarray, dst: np.ndarray, n_nodes: int) -> np.ndarray:
    """Drop self-loops and parallel edges; result sorted by (src, dst)"""
    keep = src != dst
    codes = np.unique(src[keep].astype(np.int64) * n_nodes + dst[keep].astype(np.int64))
    return np.column_stack([codes // n_nodes, codes % n_nodes]).astype(np.int64)


def directed_configuration_model(in_degrees: Sequence[int], out_degrees: Sequence[int],
                                 rng: np.random.Generator) -> np.ndarray:
    """Stub matching, then removal of self-loops and parallel edges"""
    in_deg = np.asarray(in_degrees, dtype=np.int64)
    out_deg = np.asarray(out_degrees, dtype=np.int64)
    if len(in_deg) != len(out_deg):
        raise InvariantError("in/out degree sequences have different lengths")
    if in_deg.sum() != out_deg.sum():
        raise InvariantError(f"degree sums differ ({in_deg.sum()} vs {out_deg.sum()})")
    n = len(in_deg)
    out_stubs = np.repeat(np.arange(n), out_deg)
    in_stubs = rng.permutation(np.repeat(np.arange(n), in_deg))
    return _simple_edges(out_stubs, in_stubs, max(n, 1))


def rewire_edges(edges: np.ndarray, fraction: float, n_nodes: int, rng: np.random.Generator) -> np.ndarray:
    """
    Re-match the stubs of a uniformly chosen ceil(fraction*|E|) edges.

    Self-loops and parallel edges are allowed while rewiring and removed at
    the end, so high-degree nodes are not under-rewired.
    """
    m = len(edges)
    n_rewire = int(math.ceil(fraction * m))
    src = edges[:, 0].copy()
    dst = edges[:, 1].copy()
    if n_rewire:
        chosen = rng.choice(m, size=n_rewire, replace=False)
        dst[chosen] = dst[chosen][rng.permutation(n_rewire)]
    return _simple_edges(src, dst, n_nodes)


def generate_network(cfg: NetworkGenConfig) -> MultilayerNetwork:
    rng = make_rng(cfg.seed, STREAM_NETWORK)

    def fresh_layer() -> np.ndarray:
        in_deg, out_deg = sample_degree_sequences(cfg, rng)
        return directed_configuration_model(in_deg, out_deg, rng)

    structures = [fresh_layer()]
    for _ in range(1, cfg.n_layers):
        if cfg.overlap == 0.0:
            structures.append(fresh_layer())
        elif cfg.overlap == 1.0:
            structures.append(structures[0].copy())
        else:
            structures.append(rewire_edges(structures[0], REWIRE_SHARE * (1.0 - cfg.overlap), cfg.n_nodes, rng))

    rates = [rng.uniform(cfg.rate_low, cfg.rate_high, size=len(e)) for e in structures]
    return MultilayerNetwork(
        cfg.n_nodes, cfg.n_layers,
        tuple(e[:, 0] for e in structures),
        tuple(e[:, 1] for e in structures),
        tuple(rates),
    )


def layer_overlap(net: MultilayerNetwork) -> float:
    """Mean share of layer-k edges (k >= 2) that also exist on layer 1"""
    if net.n_layers < 2:
        return 1.0
    first = net.edge_codes(0)
    shares = [np.isin(net.edge_codes(k), first).mean() for k in range(1, net.n_layers) if net.n_edges(k)]
    return float(np.mean(shares)) if shares else 0.0


def layer_jaccard(net: MultilayerNetwork) -> float:
    if net.n_layers < 2:
        return 1.0
    first = net.edge_codes(0)
    values = []
    for k in range(1, net.n_layers):
        codes = net.edge_codes(k)
        union = len(np.union1d(first, codes))
        if union:
            values.append(len(np.intersect1d(first, codes)) / union)
    return float(np.mean(values)) if values else 0.0


def sample_membership(n_layers: int, eps_max: float, rng: np.random.Generator) -> CascadeTruth:
    """Main layer uniform, noise eps ~ U(0, eps_max) spread evenly over the other layers"""
    if n_layers < 1:
        raise ConfigError("n_layers must be at least 1")
    if not 0.0 <= eps_max < 1.0:
        raise ConfigError("eps_max must lie in [0, 1)")
    main_layer = int(rng.integers(n_layers))
    eps = float(rng.uniform(0.0, eps_max))
    if n_layers == 1:
        return CascadeTruth(main_layer=0, eps=0.0, pi=(1.0,))
    pi = np.full(n_layers, eps / (n_layers - 1))
    pi[main_layer] = 0.0
    pi[main_layer] = 1.0 - pi.sum()
    return CascadeTruth(main_layer=main_layer, eps=eps, pi=tuple(pi.tolist()))


@dataclass(frozen=True)
class EffectiveNetwork:
    """
    lambda_ij = sum_k pi_k alpha_ij^k as CSR over sources. Every aggregated
    pair is listed, zero-rate ones included, so the number of random draws
    per infected node does not depend on the membership.
    """
    indptr: np.ndarray
    targets: np.ndarray
    rates: np.ndarray


def effective_network(net: MultilayerNetwork, pi: Sequence[float]) -> EffectiveNetwork:
    pi = np.asarray(pi, dtype=np.float64)
    n = net.n_nodes
    codes = [net.edge_codes(k) for k in range(net.n_layers)]
    weights = [pi[k] * net.rate[k] for k in range(net.n_layers)]
    if sum(len(c) for c in codes) == 0:
        return EffectiveNetwork(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    unique, inverse = np.unique(np.concatenate(codes), return_inverse=True)
    lam = np.bincount(inverse, weights=np.concatenate(weights), minlength=len(unique))
    src = unique // n
    indptr = np.searchsorted(src, np.arange(n + 1), side="left").astype(np.int64)
    return EffectiveNetwork(indptr, (unique % n).astype(np.int64), lam)


def simulate_cascade(net: MultilayerNetwork, membership: Union[CascadeTruth, Sequence[float]],
                     cfg: CascadeGenConfig, rng: np.random.Generator, cascade_id: int = 0,
                     initial_infecteds: Optional[Sequence[int]] = None,
                     effective: Optional[EffectiveNetwork] = None) -> Cascade:
    """
    Exact continuous-time SIR run on the membership-weighted network.

    Each infected node draws its recovery time and one exponential delay per
    aggregated out-neighbour; an infection is scheduled when the delay beats recovery
    and the horizon. This event-driven form has the same law as the
    Gillespie algorithm for the Markov SIR process.
    """
    if isinstance(membership, CascadeTruth):
        truth = membership
    else:
        pi = tuple(float(p) for p in membership)
        main_layer = int(np.argmax(pi))
        truth = CascadeTruth(main_layer=main_layer, eps=1.0 - pi[main_layer], pi=pi)
    if len(truth.pi) != net.n_layers:
        raise InvariantError(f"membership has {len(truth.pi)} entries for a {net.n_layers}-layer network")
    if effective is None:
        effective = effective_network(net, truth.pi)

    n = net.n_nodes
    horizon = cfg.horizon
    if initial_infecteds is None:
        rho = cfg.rho(n)
        seeds = np.flatnonzero(rng.random(n) < rho)
        while len(seeds) == 0:
            seeds = np.flatnonzero(rng.random(n) < rho)
    else:
        seeds = np.unique(np.asarray(initial_infecteds, dtype=np.int64))

    queue = [(0.0, int(s)) for s in seeds]
    heapq.heapify(queue)
    infected: Dict[int, float] = {}
    gamma = cfg.recovery_rate

    while queue:
        t, node = heapq.heappop(queue)
        if node in infected:
            continue
        infected[node] = t
        duration = rng.exponential(1.0 / gamma) if gamma > 0 else math.inf
        lo, hi = effective.indptr[node], effective.indptr[node + 1]
        if hi == lo:
            continue
        rates = effective.rates[lo:hi]
        # unit draws scaled per pair; a zero rate never transmits
        unit = rng.standard_exponential(hi - lo)
        delays = np.divide(unit, rates, out=np.full(hi - lo, math.inf), where=rates > 0)
        for target, delay in zip(effective.targets[lo:hi].tolist(), delays.tolist()):
            if target in infected or delay >= duration or t + delay >= horizon:
                continue
            heapq.heappush(queue, (t + delay, target))

    nodes = np.fromiter(infected.keys(), dtype=np.int64, count=len(infected))
    times = np.fromiter(infected.values(), dtype=np.float64, count=len(infected))
    return Cascade(id=cascade_id, horizon=horizon, nodes=nodes, times=times, truth=truth)


def simulate_cascades(net: MultilayerNetwork, cfg: CascadeGenConfig, threads: int = 1) -> CascadeSet:
    """
    Cascade ids 0..C-1. Memberships and dynamics use separate streams per
    id, so configs differing only in eps_max share seeds, main layers and
    transmission draws. Output order never depends on scheduling.
    """
    cache: Dict[Tuple[float, ...], EffectiveNetwork] = {}

    def run(cascade_id: int) -> Cascade:
        truth = sample_membership(net.n_layers, cfg.eps_max, make_rng(cfg.seed, STREAM_MEMBERSHIP, cascade_id))
        rng = make_rng(cfg.seed, STREAM_CASCADE, cascade_id)
        effective = cache.get(truth.pi)
        if effective is None:
            effective = effective_network(net, truth.pi)
            if cfg.eps_max == 0.0:
                cache[truth.pi] = effective
        return simulate_cascade(net, truth, cfg, rng, cascade_id=cascade_id, effective=effective)

    results = [None] * cfg.n_cascades
    if threads <= 1:
        for cid in range(cfg.n_cascades):
            results[cid] = run(cid)
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            future_to_index = {executor.submit(run, cid): cid for cid in range(cfg.n_cascades)}
            for future in as_completed(future_to_index):
                results[future_to_index[future]] = future.result()
    return CascadeSet(tuple(results))


def filter_cascades(cs: CascadeSet, s_c: int) -> CascadeSet:
    """Keep cascades with more than s_c activated nodes, order and ids preserved"""
    if s_c < 0:
        raise ConfigError(f"size threshold must be non-negative (got {s_c})")
    return CascadeSet(tuple(c for c in cs if c.size > s_c))


def generate_dataset(netcfg: NetworkGenConfig, casccfg: CascadeGenConfig, s_c: int = 1,
                     threads: int = 1) -> Tuple[MultilayerNetwork, CascadeSet]:
    net = generate_network(netcfg)
    cascades = simulate_cascades(net, casccfg, threads=threads)
    cascades = filter_cascades(filter_cascades(cascades, 1), s_c)
    return net, cascades


def cascade_size_distribution(cs: CascadeSet) -> pd.DataFrame:
    sizes = pd.Series(cs.sizes(), dtype="int64")
    counts = sizes.value_counts().sort_index()
    return pd.DataFrame({"size": counts.index.astype("int64"), "count": counts.values.astype("int64")})


def truth_manifest(netcfg: NetworkGenConfig, casccfg: CascadeGenConfig, s_c: int,
                   net: MultilayerNetwork, n_simulated: int, cascades: CascadeSet) -> Dict:
    """Full config echo plus realized structure statistics"""
    return {
        "network": asdict(netcfg),
        "cascades": asdict(casccfg),
        "s_c": s_c,
        "n_aggregated_edges": len(aggregate(net)),
        "n_layer_edges": [net.n_edges(k) for k in range(net.n_layers)],
        "overlap": layer_overlap(net),
        "jaccard": layer_jaccard(net),
        "n_cascades_simulated": n_simulated,
        "n_cascades_kept": len(cascades),
    }
