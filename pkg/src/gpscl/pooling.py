"""Learnable view generators: TopK node selection and soft cluster coarsening."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .encoder import Affine, GinLayer, gin_layer, init_affine, init_gin_layer
from .errors import ConfigError, DimensionError
from .tensor import Tensor, index_rows, matmul, row_softmax, tanh, transpose

__all__ = [
    "TopKPooler",
    "ClusterPooler",
    "PooledGraph",
    "keep_count",
    "init_topk_pooler",
    "init_cluster_pooler",
    "topk_scores",
    "topk_select",
    "topk_pool",
    "topk_margin",
    "cluster_assign",
    "cluster_pool",
    "pool",
]


def keep_count(n: int, rho: float) -> int:
    """ceil(rho * n) clamped to [1, n]."""
    if n < 1:
        raise ConfigError("node count must be >= 1")
    if not 0 < rho <= 1:
        raise ConfigError(f"ratio must lie in (0, 1], got {rho}")
    # round first so that e.g. 0.3 * 10 = 3.0000000000000004 keeps 3 nodes
    return min(n, max(1, math.ceil(round(rho * n, 9))))


@dataclass
class TopKPooler:
    gnn: GinLayer
    score: Affine  # d_h -> 1
    rho: float

    family = "topk"

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.gnn.named_parameters(prefix + "gnn.")
        yield from self.score.named_parameters(prefix + "score.")


@dataclass
class ClusterPooler:
    gnn: GinLayer
    assign: Affine  # d_h -> k_max
    rho: float

    family = "cluster"

    @property
    def k_max(self) -> int:
        return self.assign.weight.cols

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.gnn.named_parameters(prefix + "gnn.")
        yield from self.assign.named_parameters(prefix + "assign.")


@dataclass
class PooledGraph:
    X: Tensor
    A: Tensor
    idx: tuple[int, ...] | None = None
    S: Tensor | None = None

    @property
    def n(self) -> int:
        return self.A.rows

    def validate(self, n_original: int, rho: float) -> None:
        m = keep_count(n_original, rho)
        if self.A.shape != (m, m) or self.X.rows != m:
            raise DimensionError(f"pooled graph has {self.X.rows} nodes, expected {m}")
        if self.idx is not None:
            idx = np.asarray(self.idx)
            if idx.min() < 0 or idx.max() >= n_original or np.any(np.diff(idx) <= 0):
                raise DimensionError("kept indices must be strictly increasing and in range")
        if self.S is not None:
            if not np.allclose(self.S.data.sum(axis=1), 1.0, atol=1e-6):
                raise DimensionError("assignment matrix is not row-stochastic")


def init_topk_pooler(rng, d_in: int, d_hidden: int, rho: float) -> TopKPooler:
    keep_count(1, rho)
    return TopKPooler(init_gin_layer(rng, d_in, d_hidden), init_affine(rng, d_hidden, 1), rho)


def init_cluster_pooler(rng, d_in: int, d_hidden: int, rho: float, max_nodes: int) -> ClusterPooler:
    k_max = keep_count(max_nodes, rho)
    return ClusterPooler(init_gin_layer(rng, d_in, d_hidden), init_affine(rng, d_hidden, k_max), rho)


# -- TopK -------------------------------------------------------------------


def topk_scores(graph, params: TopKPooler) -> Tensor:
    """Per-node attention scores in (-1, 1): tanh(affine(gin_layer(X, A)))."""
    return tanh(params.score(gin_layer(graph.X, graph.A, params.gnn)))


def topk_select(scores: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest scores, ties to the lower index, returned ascending."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(s.size), -s))
    return np.sort(order[:m])


def topk_margin(scores: np.ndarray, m: int) -> float:
    """Gap between the smallest kept and the largest dropped score (inf if nothing is dropped)."""
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))[::-1]
    if m >= s.size:
        return math.inf
    return float(s[m - 1] - s[m])


def topk_pool(graph, params: TopKPooler) -> PooledGraph:
    Z = topk_scores(graph, params)
    idx = topk_select(Z.data, keep_count(graph.A.rows, params.rho))
    X_pool = index_rows(graph.X, idx) * index_rows(Z, idx)
    A_pool = Tensor(graph.A.data[np.ix_(idx, idx)])
    return PooledGraph(X_pool, A_pool, idx=tuple(int(i) for i in idx))


# -- cluster ----------------------------------------------------------------


def _column_selector(k_max: int, m: int) -> Tensor:
    sel = np.zeros((k_max, m))
    sel[np.arange(m), np.arange(m)] = 1.0
    return Tensor(sel)


def cluster_assign(graph, params: ClusterPooler) -> Tensor:
    """Soft assignment S (n x m), softmax over the first m = keep_count(n, rho) clusters."""
    m = keep_count(graph.A.rows, params.rho)
    if m > params.k_max:
        raise DimensionError(f"graph needs {m} clusters but the pooler has {params.k_max}")
    logits = params.assign(gin_layer(graph.X, graph.A, params.gnn))
    if m < params.k_max:
        logits = matmul(logits, _column_selector(params.k_max, m))
    return row_softmax(logits)


def cluster_pool(graph, params: ClusterPooler | None = None, S: Tensor | None = None) -> PooledGraph:
    """X_pool = S^T X, A_pool = S^T A S. ``S`` may be supplied directly."""
    if S is None:
        S = cluster_assign(graph, params)
    if S.rows != graph.A.rows:
        raise DimensionError(f"assignment has {S.rows} rows for {graph.A.rows} nodes")
    St = transpose(S)
    return PooledGraph(matmul(St, graph.X), matmul(matmul(St, graph.A), S), S=S)


def pool(graph, params) -> PooledGraph:
    if isinstance(params, TopKPooler):
        return topk_pool(graph, params)
    if isinstance(params, ClusterPooler):
        return cluster_pool(graph, params)
    raise TypeError(f"not a pooler: {type(params).__name__}")
