"""Graph containers, TUDataset parsing/writing, synthetic corpora and batching."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import Tensor

DEFAULT_MAX_DEGREE = 10


@dataclass(frozen=True)
class Graph:
    """Node features ``X`` (n x d0), dense 0/1 symmetric adjacency ``A`` (n x n), optional label."""

    X: Tensor
    A: Tensor
    label: int | None = None

    def __post_init__(self):
        n = self.A.rows
        if n < 1:
            raise FormatError("graph must have at least one node")
        if self.A.shape != (n, n):
            raise FormatError(f"adjacency must be square, got {self.A.shape}")
        if self.X.rows != n:
            raise FormatError(f"X has {self.X.rows} rows but A has {n}")
        a = self.A.data
        if not np.array_equal(a, a.T):
            raise FormatError("adjacency must be symmetric")
        if not np.isin(a, (0.0, 1.0)).all():
            raise FormatError("adjacency entries must be 0 or 1")

    @property
    def n(self) -> int:
        return self.A.rows

    @classmethod
    def from_arrays(cls, X, A, label=None) -> "Graph":
        return cls(Tensor(X), Tensor(A), None if label is None else int(label))

    def permuted(self, perm) -> "Graph":
        """Relabel nodes: new node i is old node perm[i]."""
        perm = np.asarray(perm)
        return Graph(
            Tensor(self.X.data[perm]), Tensor(self.A.data[np.ix_(perm, perm)]), self.label
        )

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.X.data, other.X.data)
            and np.array_equal(self.A.data, other.A.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class GraphDataset:
    graphs: tuple[Graph, ...]
    num_classes: int
    feature_dim: int
    # "node_labels" when X one-hot encodes TU node labels, "degree" otherwise
    feature_source: str = "degree"
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.X.cols != self.feature_dim:
                raise FormatError("graphs disagree on feature dimension")
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise FormatError(f"label {g.label} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.graphs])

    @property
    def max_nodes(self) -> int:
        return max(g.n for g in self.graphs)


def degree_features(A: np.ndarray, max_degree: int = DEFAULT_MAX_DEGREE) -> np.ndarray:
    """One-hot node degree; the last column collects every degree >= max_degree."""
    deg = np.minimum(A.sum(axis=1).astype(np.int64), max_degree)
    X = np.zeros((A.shape[0], max_degree + 1))
    X[np.arange(A.shape[0]), deg] = 1.0
    return X


# -- TUDataset text format ---------------------------------------------------


def _read_ints(path: Path, per_line: int) -> list[list[int]]:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != per_line:
                raise FormatError(f"{path.name}:{lineno}: expected {per_line} values, got {len(tokens)}")
            try:
                rows.append([int(t) for t in tokens])
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-integer token in {line!r}") from None
    return rows


def parse_tudataset(directory, name: str, max_degree: int = DEFAULT_MAX_DEGREE) -> GraphDataset:
    """Read ``{name}_A.txt``, ``_graph_indicator.txt``, ``_graph_labels.txt`` (and optional ``_node_labels.txt``)."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")

    def path(suffix):
        return root / f"{name}_{suffix}.txt"

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not path(suffix).is_file():
            raise FileNotFoundError(f"missing TUDataset file: {path(suffix)}")

    indicator = np.array([r[0] for r in _read_ints(path("graph_indicator"), 1)], dtype=np.int64)
    graph_labels = [r[0] for r in _read_ints(path("graph_labels"), 1)]
    edges = np.array(_read_ints(path("A"), 2), dtype=np.int64).reshape(-1, 2)
    n_total = indicator.size
    n_graphs = len(graph_labels)
    if n_total == 0:
        raise FormatError("graph indicator is empty")
    if indicator.min() < 1 or indicator.max() > n_graphs:
        raise FormatError(
            f"graph indicator references graph ids {indicator.min()}..{indicator.max()} "
            f"but {n_graphs} graph labels are present"
        )
    if np.any(np.diff(indicator) < 0):
        raise FormatError("graph indicator must be non-decreasing")
    counts = np.bincount(indicator, minlength=n_graphs + 1)[1:]
    if (counts == 0).any():
        raise FormatError(f"graph id {int(np.argmin(counts)) + 1} has no nodes")

    node_labels = None
    if path("node_labels").is_file():
        node_labels = np.array([r[0] for r in _read_ints(path("node_labels"), 1)], dtype=np.int64)
        if node_labels.size != n_total:
            raise FormatError(f"{node_labels.size} node labels for {n_total} nodes")

    if edges.size and (edges.min() < 1 or edges.max() > n_total):
        raise FormatError("edge references a node id outside the indicator range")
    offsets = np.concatenate([[0], np.cumsum(counts)])
    adj = [np.zeros((c, c)) for c in counts]
    for u, v in edges:
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise FormatError(f"edge ({u},{v}) connects graph {gu} to graph {gv}")
        if u == v:
            continue
        base = offsets[gu - 1]
        a = adj[gu - 1]
        a[u - 1 - base, v - 1 - base] = 1.0
        a[v - 1 - base, u - 1 - base] = 1.0

    label_values = sorted(set(graph_labels))
    label_map = {v: i for i, v in enumerate(label_values)}

    if node_labels is not None:
        values = np.unique(node_labels)
        columns = np.searchsorted(values, node_labels)
        feature_dim = values.size
        source = "node_labels"
    else:
        feature_dim = max_degree + 1
        source = "degree"

    graphs = []
    for gid in range(n_graphs):
        a = adj[gid]
        lo, hi = offsets[gid], offsets[gid + 1]
        if node_labels is not None:
            X = np.zeros((hi - lo, feature_dim))
            X[np.arange(hi - lo), columns[lo:hi]] = 1.0
        else:
            X = degree_features(a, max_degree)
        graphs.append(Graph(Tensor(X), Tensor(a), label_map[graph_labels[gid]]))
    return GraphDataset(
        tuple(graphs),
        num_classes=len(label_values),
        feature_dim=feature_dim,
        feature_source=source,
        name=name,
        meta={"max_degree": max_degree, "label_values": label_values},
    )


def write_tudataset(dataset: GraphDataset, directory, name: str) -> None:
    """Serialize to TUDataset text; node labels are written only for one-hot node-label features."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    edge_lines, indicator, labels, node_labels = [], [], [], []
    base = 0
    for gid, g in enumerate(dataset.graphs, 1):
        rows, cols = np.nonzero(g.A.data)
        edge_lines.extend(f"{base + r + 1}, {base + c + 1}" for r, c in zip(rows, cols))
        indicator.extend([str(gid)] * g.n)
        labels.append(str(-1 if g.label is None else g.label))
        if dataset.feature_source == "node_labels":
            node_labels.extend(str(int(k)) for k in g.X.data.argmax(axis=1))
        base += g.n

    def dump(suffix, lines):
        with open(root / f"{name}_{suffix}.txt", "w", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))

    dump("A", edge_lines)
    dump("graph_indicator", indicator)
    dump("graph_labels", labels)
    if node_labels:
        dump("node_labels", node_labels)


# -- synthetic corpora ---------------------------------------------------------


def cycle_graph(n: int) -> np.ndarray:
    A = np.zeros((n, n))
    if n == 2:
        A[0, 1] = A[1, 0] = 1.0
    elif n > 2:
        i = np.arange(n)
        A[i, (i + 1) % n] = 1.0
        A[(i + 1) % n, i] = 1.0
    return A


def clique_graph(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def _er(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(np.float64)


def _two_blocks(rng, n, p_in, p_out):
    half = n // 2
    block = np.zeros((n, n), dtype=bool)
    block[:half, :half] = True
    block[half:, half:] = True
    probs = np.where(block, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    return (upper | upper.T).astype(np.float64)


def synth_dataset(
    kind: str,
    per_class: int,
    size_range: tuple[int, int] = (6, 12),
    seed: int = 0,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> GraphDataset:
    """Two-class synthetic benchmark with degree one-hot features.

    ``cycles_vs_cliques``: class 0 are n-cycles, class 1 n-cliques.
    ``two_community``: class 0 are Erdos-Renyi graphs, class 1 two-block
    stochastic block models of similar density.
    Graphs alternate between the classes; sizes are drawn uniformly from
    the inclusive ``size_range``.
    """
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    lo, hi = size_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad size range {size_range}")
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(per_class):
        for label in (0, 1):
            n = int(rng.integers(lo, hi + 1))
            if kind == "cycles_vs_cliques":
                A = cycle_graph(n) if label == 0 else clique_graph(n)
            elif kind == "two_community":
                A = _er(rng, n, 0.3) if label == 0 else _two_blocks(rng, n, 0.55, 0.05)
            else:
                raise ConfigError(f"unknown synthetic kind {kind!r}")
            graphs.append(Graph(Tensor(degree_features(A, max_degree)), Tensor(A), label))
    return GraphDataset(
        tuple(graphs),
        num_classes=2,
        feature_dim=max_degree + 1,
        feature_source="degree",
        name=kind,
        meta={"max_degree": max_degree, "seed": seed, "size_range": [lo, hi]},
    )


# -- batching -------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    members: tuple[Graph, ...]
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError("a batch needs at least 2 graphs")

    @property
    def size(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)


def batch_index_partition(n_items: int, batch_size: int, rng=None) -> list[np.ndarray]:
    """Split ``range(n_items)`` into chunks; a trailing chunk of one joins its predecessor."""
    if batch_size < 2:
        raise ConfigError("batch size must be >= 2")
    if n_items < 2:
        raise ConfigError("need at least 2 graphs to form a batch")
    order = np.arange(n_items) if rng is None else rng.permutation(n_items)
    chunks = [order[i : i + batch_size] for i in range(0, n_items, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def make_batches(dataset: GraphDataset, batch_size: int, seed: int = 0, shuffle: bool = True) -> list[Batch]:
    rng = np.random.default_rng(seed) if shuffle else None
    chunks = batch_index_partition(len(dataset), batch_size, rng)
    return [
        Batch(tuple(dataset.graphs[i] for i in idx), tuple(int(i) for i in idx)) for idx in chunks
    ]


def load_dataset(directory=None, name=None, synth=None, **synth_kwargs) -> GraphDataset:
    """Load from a TUDataset directory or build a synthetic corpus."""
    if synth is not None:
        return synth_dataset(synth, **synth_kwargs)
    if directory is None:
        raise ConfigError("either a dataset directory or a synthetic kind is required")
    directory = os.fspath(directory)
    if name is None:
        name = Path(directory).name
    return parse_tudataset(directory, name, synth_kwargs.get("max_degree", DEFAULT_MAX_DEGREE))
