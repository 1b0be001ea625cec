import numpy as np
import pytest

from gpscl.graphs import Graph
from gpscl.tensor import Tensor

# key -> (passed, detail); passed is None for a criterion that could not run
ACCEPTANCE_RESULTS: dict[str, tuple[bool | None, str]] = {}


def random_adjacency(rng, n, p=0.5):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(float)


def random_graph(rng, n, d0, p=0.5, one_hot=False, label=None):
    A = random_adjacency(rng, n, p)
    if one_hot:
        X = np.zeros((n, d0))
        X[np.arange(n), rng.integers(0, d0, size=n)] = 1.0
    else:
        X = rng.uniform(-1, 1, size=(n, d0))
    return Graph(Tensor(X), Tensor(A), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(key: str, passed: bool | None, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[key] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {key}: {detail}")


def tiny_setup(seed, pooler="topk", hidden=8, n_graphs=4, n_range=(3, 6), **overrides):
    """A seeded 4-graph batch and a freshly initialised training state."""
    from gpscl.graphs import Batch, GraphDataset
    from gpscl.trainer import TrainConfig, init_state

    r = np.random.default_rng(seed)
    graphs = [
        random_graph(r, int(r.integers(n_range[0], n_range[1] + 1)), 3, p=0.6, label=i % 2)
        for i in range(n_graphs)
    ]
    ds = GraphDataset(graphs, num_classes=2, feature_dim=3)
    config = TrainConfig(hidden=hidden, batch_size=n_graphs, seed=seed, pooler=pooler, **overrides)
    state = init_state(config, ds)
    return state, Batch(tuple(graphs), tuple(range(n_graphs))), ds


def topk_stable(state, batch, gap=1e-3):
    """True when every TopK pooler keeps a well-separated node set on every graph."""
    from gpscl.pooling import TopKPooler, keep_count, topk_margin, topk_scores

    for role in ("omega_w", "omega_s"):
        p = getattr(state, role)
        if not isinstance(p, TopKPooler):
            continue
        for g in batch:
            if topk_margin(topk_scores(g, p).data, keep_count(g.n, p.rho)) <= gap:
                return False
    return True


# -- plain numpy reimplementation of the training loss ------------------------------


def _ld(t):
    # extended precision keeps the finite-difference noise floor well below the gradients
    return t.data.astype(np.longdouble)


def _np_affine(x, lin):
    return x @ _ld(lin.weight) + _ld(lin.bias)


def _np_gin(H, A, layer):
    combined = (1.0 + _ld(layer.eps)[0, 0]) * H + A @ H
    return _np_affine(np.maximum(_np_affine(combined, layer.lin1), 0.0), layer.lin2)


def _np_encode(X, A, enc):
    H = X
    for layer in enc.layers:
        H = _np_gin(H, A, layer)
    return H.sum(axis=0)


def _np_pool(X, A, pooler):
    n = X.shape[0]
    m = min(n, max(1, int(np.ceil(round(pooler.rho * n, 9)))))
    H = _np_gin(X, A, pooler.gnn)
    if pooler.family == "topk":
        s = np.tanh(_np_affine(H, pooler.score))[:, 0]
        idx = np.sort(sorted(range(n), key=lambda i: (-s[i], i))[:m])
        return X[idx] * s[idx, None], A[np.ix_(idx, idx)]
    logits = _np_affine(H, pooler.assign)[:, :m]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    S = e / e.sum(axis=1, keepdims=True)
    return S.T @ X, S.T @ A @ S


def _np_cos_matrix(P, Q):
    Pn = P / np.sqrt((P * P).sum(axis=1, keepdims=True))
    Qn = Q / np.sqrt((Q * Q).sum(axis=1, keepdims=True))
    return Pn @ Qn.T


def _np_softmax(M):
    e = np.exp(M - M.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def numpy_gps_loss(state, batch, terms=("L_sl", "L_cl")):
    """Sum of the requested losses with both poolers active, in long double and without the autodiff engine."""
    tau = state.config.tau
    graphs = [(g.X.data.astype(np.longdouble), g.A.data.astype(np.longdouble)) for g in batch]
    Z = np.array([_np_encode(X, A, state.phi) for X, A in graphs])
    H = {}
    for role in ("omega_w", "omega_s"):
        rows = []
        for X, A in graphs:
            Xp, Ap = _np_pool(X, A, getattr(state, role))
            h = _np_encode(Xp, Ap, state.encoder)
            p = state.predictor
            rows.append(_np_affine(np.maximum(_np_affine(h[None, :], p.lin1), 0.0), p.lin2)[0])
        H[role] = np.array(rows)
    l_sl = np.mean(1.0 - np.diag(_np_cos_matrix(Z, H["omega_w"])))
    mu = _np_softmax(_np_cos_matrix(H["omega_s"], Z) / tau)
    nu = _np_softmax(_np_cos_matrix(H["omega_w"], Z) / tau)
    l_cl = np.mean(0.5 * ((mu - nu) * (np.log(mu) - np.log(nu))).sum(axis=1))
    return sum({"L_sl": l_sl, "L_cl": l_cl}[k] for k in terms)


def numpy_fd_grad(f, t, h=1e-5):
    """Central differences of ``f()`` with respect to tensor ``t``, perturbed in place."""
    data = t.data
    out = np.zeros_like(data)
    for i in np.ndindex(data.shape):
        orig = data[i]
        data[i] = orig + h
        up = data[i]
        fp = f()
        data[i] = orig - h
        down = data[i]
        fm = f()
        data[i] = orig
        # divide by the step actually taken after rounding orig +- h
        out[i] = (fp - fm) / (np.longdouble(up) - np.longdouble(down))
    return out


# -- brute-force clustering metric definitions --------------------------------------


def set_partitions(M, max_blocks):
    """Every partition of range(M) into at most ``max_blocks`` blocks, as restricted growth strings."""
    out = []

    def grow(prefix, used):
        if len(prefix) == M:
            out.append(tuple(prefix))
            return
        for c in range(min(used + 1, max_blocks)):
            grow(prefix + [c], max(used, c + 1))

    grow([], 0)
    return out


def brute_nmi(a, b):
    import math

    n = len(a)
    A = {x: {i for i in range(n) if a[i] == x} for x in set(a)}
    B = {y: {i for i in range(n) if b[i] == y} for y in set(b)}
    ha = -sum(len(s) / n * math.log(len(s) / n) for s in A.values())
    hb = -sum(len(s) / n * math.log(len(s) / n) for s in B.values())
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    mi = 0.0
    for s in A.values():
        for t in B.values():
            k = len(s & t)
            if k:
                mi += k / n * math.log(k * n / (len(s) * len(t)))
    return mi / math.sqrt(ha * hb)


def brute_ari(a, b):
    """Adjusted Rand index by explicit counting over element pairs."""
    from itertools import combinations

    n = len(a)
    pairs = list(combinations(range(n), 2))
    both = sum(1 for i, j in pairs if a[i] == a[j] and b[i] == b[j])
    in_a = sum(1 for i, j in pairs if a[i] == a[j])
    in_b = sum(1 for i, j in pairs if b[i] == b[j])
    expected = in_a * in_b / len(pairs)
    maximum = (in_a + in_b) / 2
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)


def brute_acc(pred, truth):
    """Best one-to-one relabelling of clusters onto classes, by trying every injection."""
    from itertools import permutations

    clusters = sorted(set(pred))
    classes = sorted(set(truth))
    targets = classes + [None] * max(0, len(clusters) - len(classes))
    best = 0
    for perm in permutations(targets, len(clusters)):
        mapping = dict(zip(clusters, perm))
        best = max(best, sum(1 for p, t in zip(pred, truth) if mapping[p] == t))
    return best / len(pred)
