"""
Evaluation of inferred networks against generated ground truth
"""
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import average_precision_score, roc_auc_score

from core import (
    CascadeSet,
    InferenceResult,
    MetricError,
    MultilayerNetwork,
    UndefinedMetricWarning,
    aggregate,
)

MAX_MATCH_LAYERS = 8


@dataclass(frozen=True)
class EdgeRecovery:
    hits: int
    total: int

    @property
    def rate(self) -> float:
        return self.hits / self.total


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    pi_accuracy: float
    alpha_spearman: float
    pr_auc_per_layer: Tuple[float, ...]
    edge_recovery: EdgeRecovery
    matched_permutation: Tuple[int, ...]

    @property
    def pr_auc_mean(self) -> float:
        defined = [v for v in self.pr_auc_per_layer if not math.isnan(v)]
        return float(np.mean(defined)) if defined else math.nan

    def to_row(self) -> Dict[str, object]:
        row = {
            "auc": self.auc,
            "pi_accuracy": self.pi_accuracy,
            "alpha_spearman": self.alpha_spearman,
            "pr_auc_mean": self.pr_auc_mean,
            "edge_recovery_hits": self.edge_recovery.hits,
            "edge_recovery_total": self.edge_recovery.total,
            "edge_recovery_rate": self.edge_recovery.rate,
            "matched_permutation": "-".join(str(k) for k in self.matched_permutation),
        }
        for k, value in enumerate(self.pr_auc_per_layer):
            row[f"pr_auc_layer{k}"] = value
        return row


def _codes(edges, n_nodes: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return edges[:, 0] * n_nodes + edges[:, 1]


def _lookup(codes: np.ndarray, values: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """values at `queries` where present in `codes`, 0 elsewhere"""
    out = np.zeros(len(queries))
    if len(codes) == 0 or len(queries) == 0:
        return out
    sorter = np.argsort(codes, kind="stable")
    pos = np.clip(np.searchsorted(codes, queries, sorter=sorter), 0, len(codes) - 1)
    found = codes[sorter[pos]] == queries
    out[found] = values[sorter[pos[found]]]
    return out


def _pair_universe(scored_codes: np.ndarray, scores: np.ndarray, truth_codes: np.ndarray,
                   n_nodes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (y_true, y_score, weight) over all N(N-1) ordered pairs without
    materializing them: every unscored non-edge collapses into one
    zero-score negative weighted by how many pairs it stands for.
    """
    diagonal = (scored_codes // n_nodes) == (scored_codes % n_nodes)
    scored_codes, scores = scored_codes[~diagonal], scores[~diagonal]
    codes = np.union1d(scored_codes, truth_codes)
    y_score = _lookup(scored_codes, scores, codes)
    y_true = np.isin(codes, truth_codes).astype(np.int64)
    weight = np.ones(len(codes))
    rest = n_nodes * (n_nodes - 1) - len(codes)
    if rest > 0:
        y_true = np.append(y_true, 0)
        y_score = np.append(y_score, 0.0)
        weight = np.append(weight, float(rest))
    return y_true, y_score, weight


def roc_auc(scores: Mapping[Tuple[int, int], float], truth_edges: Iterable[Tuple[int, int]],
            n_nodes: Optional[int] = None, universe: Optional[Iterable[Tuple[int, int]]] = None) -> float:
    """
    Mann-Whitney AUC of a pair scoring against the true edges, ties counted 1/2.

    The universe defaults to every ordered non-self pair over n_nodes; pairs
    without a score count as 0.
    """
    truth = set(map(tuple, truth_edges))
    if universe is not None:
        pairs = list(map(tuple, universe))
        y_true = np.array([p in truth for p in pairs], dtype=np.int64)
        y_score = np.array([scores.get(p, 0.0) for p in pairs], dtype=np.float64)
        weight = None
    else:
        if n_nodes is None:
            n_nodes = 1 + max((max(p) for p in itertools.chain(scores, truth)), default=-1)
        edges = np.array(list(scores.keys()), dtype=np.int64).reshape(-1, 2)
        values = np.array(list(scores.values()), dtype=np.float64)
        y_true, y_score, weight = _pair_universe(_codes(edges, n_nodes), values,
                                                 _codes(np.array(sorted(truth)), n_nodes), n_nodes)
    return _weighted_auc(y_true, y_score, weight)


def _weighted_auc(y_true: np.ndarray, y_score: np.ndarray, weight: Optional[np.ndarray]) -> float:
    w = np.ones(len(y_true)) if weight is None else weight
    if not np.any((y_true == 1) & (w > 0)) or not np.any((y_true == 0) & (w > 0)):
        raise MetricError("AUC is undefined without both positive and negative pairs")
    return float(roc_auc_score(y_true, y_score, sample_weight=weight))


def edge_auc(result: InferenceResult, truth: MultilayerNetwork) -> float:
    """AUC of the phase-1 scores over every ordered pair of the truth network's nodes"""
    n = truth.n_nodes
    y_true, y_score, weight = _pair_universe(_codes(result.candidate_edges, n), np.asarray(result.edge_scores),
                                             aggregate(truth).edge_codes(), n)
    return _weighted_auc(y_true, y_score, weight)


def pi_accuracy(pi_hat: np.ndarray, truth_main_layers: Sequence[int],
                perm: Optional[Sequence[int]] = None) -> float:
    """
    Share of cascades whose argmax membership, after moving inferred layer k
    to truth layer perm[k], equals the true main layer. Ties go to the lowest index.
    """
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    labels = np.asarray(truth_main_layers, dtype=np.int64)
    if len(labels) != len(pi_hat):
        raise MetricError("one truth label per membership row is required")
    if len(labels) == 0:
        raise MetricError("pi accuracy is undefined for zero cascades")
    perm = tuple(range(pi_hat.shape[1])) if perm is None else tuple(perm)
    aligned = np.empty_like(pi_hat)
    aligned[:, list(perm)] = pi_hat
    return float(np.mean(np.argmax(aligned, axis=1) == labels))


def alpha_spearman(alpha_hat: np.ndarray, selected_edges: np.ndarray, truth: MultilayerNetwork,
                   perm: Optional[Sequence[int]] = None) -> float:
    """
    Spearman correlation over every true (layer, edge) entry; inferred rate 0
    where the edge was not selected. nan when either side is constant.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64).reshape(truth.n_layers, -1)
    perm = tuple(range(truth.n_layers)) if perm is None else tuple(perm)
    selected_codes = _codes(selected_edges, truth.n_nodes)

    inferred, true = [], []
    for k, t in enumerate(perm):
        true.append(truth.rate[t])
        inferred.append(_lookup(selected_codes, alpha_hat[k], truth.edge_codes(t)))
    true = np.concatenate(true)
    inferred = np.concatenate(inferred)
    if len(true) < 2:
        raise MetricError("rank correlation needs at least two true rates")
    if np.all(true == true[0]) or np.all(inferred == inferred[0]):
        return math.nan
    return float(spearmanr(inferred, true).statistic)


def pr_auc_layers(alpha_hat: np.ndarray, selected_edges: np.ndarray, truth: MultilayerNetwork,
                  perm: Optional[Sequence[int]] = None) -> Tuple[float, ...]:
    """Per truth layer average precision over every ordered pair; nan for layers without edges"""
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64).reshape(truth.n_layers, -1)
    perm = tuple(range(truth.n_layers)) if perm is None else tuple(perm)
    n = truth.n_nodes
    selected_codes = _codes(selected_edges, n)

    values = [math.nan] * truth.n_layers
    for k, t in enumerate(perm):
        if truth.n_edges(t) == 0:
            warnings.warn(UndefinedMetricWarning(f"layer {t} has no true edges; PR AUC undefined"), stacklevel=2)
            continue
        y_true, y_score, weight = _pair_universe(selected_codes, alpha_hat[k], truth.edge_codes(t), n)
        values[t] = float(average_precision_score(y_true, y_score, sample_weight=weight))
    return tuple(values)


def edge_recovery(selected_edges: np.ndarray, truth_edges: np.ndarray) -> EdgeRecovery:
    selected = set(map(tuple, np.asarray(selected_edges, dtype=np.int64).reshape(-1, 2).tolist()))
    truth = set(map(tuple, np.asarray(truth_edges, dtype=np.int64).reshape(-1, 2).tolist()))
    if not truth:
        raise MetricError("edge recovery is undefined without true edges")
    return EdgeRecovery(hits=len(selected & truth), total=len(truth))


def _permutations(n_layers: int):
    if n_layers > MAX_MATCH_LAYERS:
        raise MetricError(f"layer matching supports at most {MAX_MATCH_LAYERS} layers (got {n_layers})")
    return itertools.permutations(range(n_layers))


def best_pi_accuracy(pi_hat: np.ndarray, truth_main_layers: Sequence[int]) -> float:
    return max(pi_accuracy(pi_hat, truth_main_layers, p) for p in _permutations(np.shape(pi_hat)[1]))


def match_layers(pi_hat: np.ndarray, truth_main_layers: Optional[Sequence[int]],
                 alpha_hat: Optional[np.ndarray] = None, selected_edges: Optional[np.ndarray] = None,
                 truth: Optional[MultilayerNetwork] = None) -> Tuple[int, ...]:
    """
    Layer permutation (inferred k -> truth perm[k]) with the best pi accuracy.
    Ties go to the higher rate correlation, then to the lexicographically
    first permutation. The correlation only counts when alpha and the
    truth network are given.
    """
    if truth_main_layers is None:
        raise MetricError("layer matching requires ground-truth layer labels")
    use_alpha = alpha_hat is not None and selected_edges is not None and truth is not None

    best, best_key = None, None
    for perm in _permutations(np.shape(pi_hat)[1]):
        rho = -math.inf
        if use_alpha:
            try:
                rho = alpha_spearman(alpha_hat, selected_edges, truth, perm)
            except MetricError:
                rho = -math.inf
            if math.isnan(rho):
                rho = -math.inf
        key = (pi_accuracy(pi_hat, truth_main_layers, perm), rho)
        if best_key is None or key > best_key:
            best, best_key = perm, key
    return best


def evaluate(result: InferenceResult, truth: MultilayerNetwork, cascades: CascadeSet) -> MetricsReport:
    """Every metric of one inference result against its generating network and cascades"""
    if result.n_layers != truth.n_layers:
        raise MetricError(f"inferred {result.n_layers} layers but the truth network has {truth.n_layers}")
    label_of = {c.id: c.truth.main_layer for c in cascades if c.truth is not None}
    missing = [int(i) for i in result.cascade_ids if int(i) not in label_of]
    if missing:
        raise MetricError(f"{len(missing)} inferred cascades have no ground truth (first id {missing[0]})")
    labels = np.array([label_of[int(i)] for i in result.cascade_ids], dtype=np.int64)

    perm = match_layers(result.pi_hat, labels, result.alpha_hat, result.selected_edges, truth)
    return MetricsReport(
        auc=edge_auc(result, truth),
        pi_accuracy=pi_accuracy(result.pi_hat, labels, perm),
        alpha_spearman=alpha_spearman(result.alpha_hat, result.selected_edges, truth, perm),
        pr_auc_per_layer=pr_auc_layers(result.alpha_hat, result.selected_edges, truth, perm),
        edge_recovery=edge_recovery(result.selected_edges, aggregate(truth).edges),
        matched_permutation=perm,
    )
