"""
Survival-analysis negative log likelihood of cascades under exponential
transmission times, its sparse pair-list form, the sigmoid/stick-breaking
reparameterization and the exact gradient through it
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit, logit

from core import CascadeSet, InvariantError, ZeroHazardWarning


def exp_pdf(t: float, lam: float) -> float:
    if lam <= 0:
        raise ValueError(f"exponential rate must be positive (got {lam})")
    return lam * math.exp(-lam * t)


def survival(t: float, lam: float) -> float:
    if lam == 0:
        return 1.0
    return math.exp(-lam * t)


def hazard(t: float, lam: float) -> float:
    """Constant for the exponential distribution"""
    return float(lam)


def mix_rates(pi: Sequence[float], alpha_edge: Sequence[float]) -> float:
    """Effective rate lambda_ij^c = sum_k pi_k alpha_ij^k"""
    return float(np.dot(np.asarray(pi, dtype=np.float64), np.asarray(alpha_edge, dtype=np.float64)))


def nll_oracle(cascades: CascadeSet, alpha: np.ndarray, pi: np.ndarray) -> float:
    """
    Literal nested-loop negative log likelihood over the full pair space.

    alpha is K x N x N, pi is C x K aligned with the cascade order. Seeds
    (minimum-time nodes) get no activation term but still expose every
    never-activated node. Returns inf, with a ZeroHazardWarning listing the
    (cascade id, node) pairs, when an activated non-seed node has no
    incoming hazard.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64).reshape(len(cascades), -1)
    n_layers, n_nodes = alpha.shape[0], alpha.shape[1]

    total = 0.0
    zero_hazard = []
    for ci, c in enumerate(cascades):
        t = c.activation_time
        T = c.horizon
        t_min = float(c.times[0])

        def lam(i, j):
            return sum(pi[ci, k] * alpha[k, i, j] for k in range(n_layers))

        never = [n for n in range(n_nodes) if n not in t]
        for j, t_j in t.items():
            for n in never:
                total += (T - t_j) * lam(j, n)
            if t_j == t_min:
                continue
            earlier = [u for u, t_u in t.items() if t_u < t_j]
            for u in earlier:
                total += (t_j - t[u]) * lam(u, j)
            h = sum(lam(i, j) for i in earlier)
            if h <= 0:
                zero_hazard.append((c.id, j))
                continue
            total -= math.log(h)

    if zero_hazard:
        warnings.warn(ZeroHazardWarning(zero_hazard), stacklevel=2)
        return math.inf
    return total


@dataclass(frozen=True, eq=False)
class PrecomputedCascadeTensors:
    """
    Pair lists of every cascade restricted to an edge set.

    succ_*: successful exposures t_i < t_j < T (edge, cascade, log group, dt).
    fail_*: failed exposures t_i < T, j never activated (edge, cascade, T - t_i).
    Each log group is one activated non-seed node of one cascade with at
    least one candidate in-edge; nodes without one are listed in `dropped`.
    `exposure` is the C x E matrix of summed dt / waiting weights.
    """
    n_edges: int
    n_cascades: int
    cascade_ids: np.ndarray
    succ_edge: np.ndarray
    succ_cascade: np.ndarray
    succ_group: np.ndarray
    succ_dt: np.ndarray
    fail_edge: np.ndarray
    fail_cascade: np.ndarray
    fail_wait: np.ndarray
    group_cascade: np.ndarray
    group_node: np.ndarray
    exposure: sparse.csr_matrix
    dropped: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return len(self.group_cascade)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)

    @property
    def n_pairs(self) -> int:
        return len(self.succ_edge) + len(self.fail_edge)


def build_tensors(cascades: CascadeSet, edges: np.ndarray, n_nodes: int) -> PrecomputedCascadeTensors:
    """Pair lists for every cascade over the given (src, dst) edge array"""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n_edges = len(edges)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    sorted_src = edges[order, 0]
    indptr = np.searchsorted(sorted_src, np.arange(n_nodes + 1), side="left")

    succ = {"edge": [], "cascade": [], "group": [], "dt": []}
    fail = {"edge": [], "cascade": [], "wait": []}
    group_cascade, group_node, dropped = [], [], []
    n_groups = 0
    t_full = np.full(n_nodes, np.inf)

    for ci, c in enumerate(cascades):
        if c.nodes.max() >= n_nodes:
            raise InvariantError(f"cascade {c.id} references node {c.nodes.max()} outside [0, {n_nodes})")
        t_full[c.nodes] = c.times

        starts, ends = indptr[c.nodes], indptr[c.nodes + 1]
        counts = ends - starts
        total = int(counts.sum())
        if total:
            offsets = np.repeat(starts - (np.cumsum(counts) - counts), counts) + np.arange(total)
            e = order[offsets]
            t_i = np.repeat(c.times, counts)
            t_j = t_full[edges[e, 1]]

            is_fail = np.isinf(t_j)
            fail["edge"].append(e[is_fail])
            fail["cascade"].append(np.full(int(is_fail.sum()), ci, dtype=np.int64))
            fail["wait"].append(c.horizon - t_i[is_fail])

            is_succ = ~is_fail & (t_j > t_i)
            e_s = e[is_succ]
            targets = edges[e_s, 1]
            uniq, local_group = np.unique(targets, return_inverse=True)
            succ["edge"].append(e_s)
            succ["cascade"].append(np.full(len(e_s), ci, dtype=np.int64))
            succ["group"].append(local_group.reshape(-1) + n_groups)
            succ["dt"].append(t_j[is_succ] - t_i[is_succ])
            group_cascade.append(np.full(len(uniq), ci, dtype=np.int64))
            group_node.append(uniq)
            n_groups += len(uniq)
        else:
            uniq = np.zeros(0, dtype=np.int64)

        non_seed = c.nodes[c.times > c.times[0]]
        for j in np.setdiff1d(non_seed, uniq).tolist():
            dropped.append((int(c.id), int(j)))

        t_full[c.nodes] = np.inf

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    succ_edge, succ_cascade = cat(succ["edge"], np.int64), cat(succ["cascade"], np.int64)
    succ_dt = cat(succ["dt"], np.float64)
    fail_edge, fail_cascade = cat(fail["edge"], np.int64), cat(fail["cascade"], np.int64)
    fail_wait = cat(fail["wait"], np.float64)

    exposure = sparse.coo_matrix(
        (np.concatenate([succ_dt, fail_wait]),
         (np.concatenate([succ_cascade, fail_cascade]), np.concatenate([succ_edge, fail_edge]))),
        shape=(len(cascades), n_edges),
    ).tocsr()

    return PrecomputedCascadeTensors(
        n_edges=n_edges,
        n_cascades=len(cascades),
        cascade_ids=cascades.ids,
        succ_edge=succ_edge,
        succ_cascade=succ_cascade,
        succ_group=cat(succ["group"], np.int64),
        succ_dt=succ_dt,
        fail_edge=fail_edge,
        fail_cascade=fail_cascade,
        fail_wait=fail_wait,
        group_cascade=cat(group_cascade, np.int64),
        group_node=cat(group_node, np.int64),
        exposure=exposure,
        dropped=dropped,
    )


def _as_layers(tensors: PrecomputedCascadeTensors, alpha: np.ndarray,
               pi: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1, tensors.n_edges)
    if pi is None:
        if alpha.shape[0] != 1:
            raise InvariantError("single-layer mode takes exactly one rate per edge")
        pi = np.ones((tensors.n_cascades, 1))
    pi = np.asarray(pi, dtype=np.float64).reshape(tensors.n_cascades, alpha.shape[0])
    return alpha, pi


def _group_hazards(tensors: PrecomputedCascadeTensors, alpha: np.ndarray, pi: np.ndarray) -> np.ndarray:
    lam = np.einsum("pk,kp->p", pi[tensors.succ_cascade], alpha[:, tensors.succ_edge])
    return np.bincount(tensors.succ_group, weights=lam, minlength=tensors.n_groups)


def _zero_hazard_pairs(tensors: PrecomputedCascadeTensors, h: np.ndarray) -> List[Tuple[int, int]]:
    bad = np.flatnonzero(h <= 0)
    return [(int(tensors.cascade_ids[tensors.group_cascade[g]]), int(tensors.group_node[g])) for g in bad]


def nll_fast(tensors: PrecomputedCascadeTensors, alpha: np.ndarray, pi: Optional[np.ndarray] = None,
             floor: Optional[float] = None) -> float:
    """
    Sparse evaluation of the negative log likelihood.

    alpha is K x |E| (or |E| in single-layer mode); pi is C x K, or None for
    single-layer mode where every cascade has membership [1]. With `floor`
    the per-node hazard sums are clamped from below instead of yielding inf.
    """
    alpha, pi = _as_layers(tensors, alpha, pi)
    exposure_term = float(np.sum((tensors.exposure @ alpha.T) * pi))
    h = _group_hazards(tensors, alpha, pi)
    if floor is not None:
        h = np.maximum(h, floor)
    elif np.any(h <= 0):
        warnings.warn(ZeroHazardWarning(_zero_hazard_pairs(tensors, h)), stacklevel=2)
        return math.inf
    return exposure_term - float(np.sum(np.log(h)))


@dataclass(frozen=True, eq=False)
class UnconstrainedParams:
    alpha_raw: np.ndarray            # K x |E|
    pi_raw: np.ndarray               # C x (K - 1)

    @property
    def n_layers(self) -> int:
        return self.alpha_raw.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.alpha_raw.ravel(), self.pi_raw.ravel()])

    def with_flat(self, values: np.ndarray) -> "UnconstrainedParams":
        n_alpha = self.alpha_raw.size
        return UnconstrainedParams(values[:n_alpha].reshape(self.alpha_raw.shape),
                                   values[n_alpha:].reshape(self.pi_raw.shape))


def stick_breaking(pi_raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    pi_1 = s_1, pi_k = s_k (1 - sum_{j<k} pi_j), pi_K = remainder, s = sigmoid(raw).
    Returns (pi, s, remaining-before-k).
    """
    pi_raw = np.asarray(pi_raw, dtype=np.float64)
    n_rows, n_free = pi_raw.shape
    s = expit(pi_raw)
    pi = np.empty((n_rows, n_free + 1))
    remaining = np.empty((n_rows, n_free + 1))
    cumulative = np.zeros(n_rows)
    for k in range(n_free):
        remaining[:, k] = 1.0 - cumulative
        pi[:, k] = s[:, k] * remaining[:, k]
        cumulative = cumulative + pi[:, k]
    remaining[:, n_free] = 1.0 - cumulative
    pi[:, n_free] = np.maximum(1.0 - cumulative, 0.0)
    return pi, s, remaining


def transform_params(raw: UnconstrainedParams) -> Tuple[np.ndarray, np.ndarray]:
    return expit(raw.alpha_raw), stick_breaking(raw.pi_raw)[0]


def uniform_pi_raw(n_cascades: int, n_layers: int) -> np.ndarray:
    """Stick-breaking logits of the uniform membership, one row per cascade"""
    uniform = logit(1.0 / (n_layers - np.arange(n_layers - 1)))
    return np.tile(uniform, (n_cascades, 1)).reshape(n_cascades, n_layers - 1)


def initial_params(n_edges: int, n_cascades: int, n_layers: int, rng: np.random.Generator) -> UnconstrainedParams:
    """alpha near 0.1, pi uniform up to a small jitter"""
    alpha_raw = rng.uniform(-2.2, -2.0, size=(n_layers, n_edges))
    pi_raw = uniform_pi_raw(n_cascades, n_layers) + rng.uniform(-0.01, 0.01, size=(n_cascades, n_layers - 1))
    return UnconstrainedParams(alpha_raw, pi_raw.reshape(n_cascades, n_layers - 1))


def nll_gradient(tensors: PrecomputedCascadeTensors, raw: UnconstrainedParams,
                 single_layer: bool = False) -> Tuple[float, UnconstrainedParams]:
    """
    Value and exact gradient of nll_fast(transform_params(raw)).

    In single-layer mode pi is fixed at [1] and the pi gradient is empty.
    """
    alpha = expit(raw.alpha_raw)
    n_layers = alpha.shape[0]
    if single_layer or n_layers == 1:
        pi = np.ones((tensors.n_cascades, 1))
        s = remaining = None
    else:
        pi, s, remaining = stick_breaking(raw.pi_raw)

    h = _group_hazards(tensors, alpha, pi)
    if np.any(h <= 0):
        warnings.warn(ZeroHazardWarning(_zero_hazard_pairs(tensors, h)), stacklevel=2)
        return math.inf, UnconstrainedParams(np.zeros_like(raw.alpha_raw), np.zeros_like(raw.pi_raw))

    exposure_alpha = tensors.exposure @ alpha.T                      # C x K
    value = float(np.sum(exposure_alpha * pi)) - float(np.sum(np.log(h)))

    inv_h = 1.0 / h[tensors.succ_group]
    grad_alpha = np.asarray((tensors.exposure.T @ pi).T)            # K x E
    for k in range(n_layers):
        grad_alpha[k] -= np.bincount(tensors.succ_edge, weights=inv_h * pi[tensors.succ_cascade, k],
                                     minlength=tensors.n_edges)
    grad_alpha_raw = grad_alpha * alpha * (1.0 - alpha)

    if s is None:
        return value, UnconstrainedParams(grad_alpha_raw, np.zeros_like(raw.pi_raw))

    grad_pi = np.asarray(exposure_alpha).copy()                      # C x K
    for k in range(n_layers):
        grad_pi[:, k] -= np.bincount(tensors.succ_cascade, weights=inv_h * alpha[k, tensors.succ_edge],
                                     minlength=tensors.n_cascades)

    # backward through the stick: pi_K = R_K, pi_k = s_k R_k, R_k = 1 - sum_{j<k} pi_j
    grad_pi_raw = np.empty_like(raw.pi_raw)
    suffix = grad_pi[:, n_layers - 1].copy()
    for k in range(n_layers - 2, -1, -1):
        total_k = grad_pi[:, k] - suffix
        grad_pi_raw[:, k] = total_k * remaining[:, k] * s[:, k] * (1.0 - s[:, k])
        suffix = suffix + total_k * s[:, k]

    return value, UnconstrainedParams(grad_alpha_raw, grad_pi_raw)
