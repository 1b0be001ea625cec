"""Frozen-embedding evaluation: k-fold linear probe and clustering agreement metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, FormatError

__all__ = [
    "EmbeddingTable",
    "ProbeReport",
    "stratified_folds",
    "fit_logistic",
    "linear_probe",
    "repeated_probe",
    "kmeans",
    "nmi",
    "ari",
    "clustering_acc",
    "contingency",
    "cluster_eval",
    "write_embeddings",
    "read_embeddings",
]


@dataclass
class EmbeddingTable:
    Z: np.ndarray  # M x d
    labels: np.ndarray  # M ints, -1 when unknown

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.Z.ndim != 2:
            raise FormatError("embedding matrix must be 2-D")
        if self.Z.shape[0] != self.labels.size:
            raise FormatError(f"{self.Z.shape[0]} embeddings but {self.labels.size} labels")
        if self.Z.shape[0] < 2:
            raise ConfigError("need at least 2 embeddings")
        if not np.isfinite(self.Z).all():
            raise FormatError("embeddings contain non-finite values")

    def __len__(self):
        return self.Z.shape[0]


@dataclass
class ProbeReport:
    accuracies: list[float]
    mean: float
    std: float
    folds: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "folds": self.folds, "accuracies": self.accuracies}


# -- embeddings file ------------------------------------------------------------


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Header ``M<TAB>d`` then one row per graph: d values and the label."""
    M, d = table.Z.shape
    lines = [f"{M}\t{d}"]
    for row, label in zip(table.Z, table.labels):
        lines.append("\t".join([*(repr(float(v)) for v in row), str(int(label))]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_embeddings(path) -> EmbeddingTable:
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty embedding file")
    head = lines[0].split("\t")
    try:
        M, d = (int(x) for x in head)
    except ValueError:
        raise FormatError(f"{path}: header must be 'M<TAB>d', got {lines[0]!r}") from None
    if len(lines) - 1 != M:
        raise FormatError(f"{path}: header announces {M} rows, found {len(lines) - 1}")
    Z = np.empty((M, d))
    labels = np.empty(M, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        fields = line.split("\t")
        if len(fields) != d + 1:
            raise FormatError(f"{path}: row {i + 1} has {len(fields)} fields, expected {d + 1}")
        try:
            Z[i] = [float(x) for x in fields[:d]]
            labels[i] = int(fields[d])
        except ValueError:
            raise FormatError(f"{path}: row {i + 1} is not numeric") from None
    return EmbeddingTable(Z, labels)


# -- linear probe ------------------------------------------------------------------


def stratified_folds(labels, folds: int, seed: int, groups=None) -> np.ndarray:
    """Fold id per sample; classes are spread round-robin after a seeded shuffle.

    With ``groups`` the assignment is made per group (label of the group's
    first member) so that every member of a group lands in the same fold.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    if groups is None:
        unit_ids = np.arange(labels.size)
        unit_labels = labels
    else:
        groups = np.asarray(groups)
        unit_ids, first = np.unique(groups, return_index=True)
        unit_labels = labels[first]
    unit_fold = np.empty(unit_ids.size, dtype=np.int64)
    for c in np.unique(unit_labels):
        members = np.flatnonzero(unit_labels == c)
        members = members[rng.permutation(members.size)]
        unit_fold[members] = np.arange(members.size) % folds
    if groups is None:
        return unit_fold
    lookup = dict(zip(unit_ids.tolist(), unit_fold.tolist()))
    return np.array([lookup[g] for g in groups.tolist()], dtype=np.int64)


def fit_logistic(X: np.ndarray, y: np.ndarray, num_classes: int, l2: float = 1e-3, tol: float = 1e-6, max_iter: int = 2000):
    """L2-regularised multinomial logistic regression by full-batch gradient descent.

    Minimises mean cross-entropy + l2/2 * ||W||^2 (bias unpenalised) with the
    step 1/L, L an upper bound on the Hessian. Returns (W, b).
    """
    n, d = X.shape
    Y = np.zeros((n, num_classes))
    Y[np.arange(n), y] = 1.0
    Xb = np.hstack([X, np.ones((n, 1))])
    lipschitz = 0.5 * np.linalg.norm(Xb, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    W = np.zeros((d + 1, num_classes))
    penalty = np.ones((d + 1, 1))
    penalty[-1] = 0.0
    for _ in range(max_iter):
        logits = Xb @ W
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = Xb.T @ (P - Y) / n + l2 * penalty * W
        if np.abs(G).max() < tol:
            break
        W -= step * G
    return W[:-1], W[-1]


def _standardize(train: np.ndarray, test: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return (train - mu) / sd, (test - mu) / sd


def linear_probe(table: EmbeddingTable, folds: int = 10, seed: int = 0, groups=None, l2: float = 1e-3) -> ProbeReport:
    """Stratified k-fold accuracy of a logistic-regression probe on frozen embeddings."""
    labels = table.labels
    if (labels < 0).any():
        raise ConfigError("linear probe needs every embedding to be labelled")
    classes, y = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise ConfigError("linear probe needs at least two classes")
    unit_labels = labels if groups is None else labels[np.unique(np.asarray(groups), return_index=True)[1]]
    smallest = np.bincount(np.unique(unit_labels, return_inverse=True)[1]).min()
    if smallest < folds:
        warnings.warn(f"smallest class has {smallest} members; reducing folds from {folds} to {smallest}")
        folds = int(smallest)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    fold_of = stratified_folds(labels, folds, seed, groups)
    accs = []
    for k in range(folds):
        test = fold_of == k
        train = ~test
        Xtr, Xte = _standardize(table.Z[train], table.Z[test])
        W, b = fit_logistic(Xtr, y[train], classes.size, l2=l2)
        pred = np.argmax(Xte @ W + b, axis=1)
        accs.append(float(np.mean(pred == y[test])))
    return ProbeReport(accs, float(np.mean(accs)), float(np.std(accs)), folds)


def repeated_probe(table: EmbeddingTable, folds: int = 10, seeds=range(5)) -> ProbeReport:
    """Mean +- std over several fold shuffles; ``accuracies`` holds the per-run means."""
    runs = [linear_probe(table, folds, s) for s in seeds]
    means = [r.mean for r in runs]
    return ProbeReport(means, float(np.mean(means)), float(np.std(means)), runs[0].folds)


# -- k-means -------------------------------------------------------------------------


def _kmeanspp(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    M = Z.shape[0]
    chosen = [int(rng.integers(M))]
    d2 = ((Z - Z[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(M, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(M), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((Z - Z[nxt]) ** 2).sum(axis=1))
    return Z[chosen].copy()


def _lloyd(Z: np.ndarray, centers: np.ndarray, max_iter: int):
    labels = None
    for _ in range(max_iter):
        dist = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = Z[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centre
                far = int(dist[np.arange(Z.shape[0]), labels].argmax())
                centers[c] = Z[far]
                labels[far] = c
    dist = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = dist.argmin(axis=1)
    inertia = float(dist[np.arange(Z.shape[0]), labels].sum())
    return labels, inertia


def kmeans(Z, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300, return_inertia: bool = False):
    """Lloyd's algorithm from k-means++ seeds; the run with the lowest inertia wins."""
    Z = np.asarray(Z, dtype=np.float64)
    if not 1 <= k <= Z.shape[0]:
        raise ConfigError(f"k={k} must lie in [1, {Z.shape[0]}]")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        labels, inertia = _lloyd(Z, _kmeanspp(Z, k, rng), max_iter)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best if return_inertia else best[0]


# -- clustering metrics ---------------------------------------------------------------


def contingency(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("label arrays must be 1-D and of equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """I(a; b) / sqrt(H(a) H(b)), natural logs.

    1.0 when both partitions are a single cluster, 0.0 when only one is.
    """
    if len(a) < 1:
        raise ConfigError("nmi needs at least one element")
    C = contingency(a, b)
    n = C.sum()
    ha = _entropy(C.sum(axis=1), n)
    hb = _entropy(C.sum(axis=0), n)
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    pa = C.sum(axis=1, keepdims=True) / n
    pb = C.sum(axis=0, keepdims=True) / n
    pab = C / n
    nz = pab > 0
    mi = float((pab[nz] * np.log(pab[nz] / (pa @ pb)[nz])).sum())
    return min(1.0, max(0.0, mi / math.sqrt(ha * hb)))


def _comb2(x):
    return x * (x - 1) / 2.0


def ari(a, b) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    if len(a) < 2:
        raise ConfigError("ari needs at least two elements")
    C = contingency(a, b)
    n = C.sum()
    index = _comb2(C).sum()
    sum_a = _comb2(C.sum(axis=1)).sum()
    sum_b = _comb2(C.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def clustering_acc(pred, truth) -> float:
    """Best matched fraction under a one-to-one cluster -> class map (Hungarian)."""
    C = contingency(pred, truth)
    if max(C.shape) > 64:
        raise ConfigError("clustering accuracy supports at most 64 clusters/classes")
    rows, cols = linear_sum_assignment(C, maximize=True)
    return float(C[rows, cols].sum() / C.sum())


def cluster_eval(table: EmbeddingTable, k: int | None = None, seed: int = 0) -> dict[str, float]:
    if (table.labels < 0).any():
        raise ConfigError("cluster evaluation needs ground-truth labels")
    if k is None:
        k = np.unique(table.labels).size
    pred = kmeans(table.Z, k, seed=seed)
    return {
        "nmi": nmi(pred, table.labels),
        "acc": clustering_acc(pred, table.labels),
        "ari": ari(pred, table.labels),
    }
