"""Adversarial pretraining loop: poolers ascend, encoder descends, target follows by EMA."""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import (
    Encoder,
    Predictor,
    copy_params,
    encode,
    init_encoder,
    init_predictor,
    predict,
)
from .errors import ConfigError, FormatError, NumericError, StateError, VersionError
from .graphs import Batch, GraphDataset, make_batches
from .objective import BatchViews, batch_objective
from .pooling import (
    ClusterPooler,
    TopKPooler,
    init_cluster_pooler,
    init_topk_pooler,
    pool,
)
from .tensor import Tensor, concat_rows, grad, no_grad

logger = logging.getLogger(__name__)

ABLATIONS = ("none", "no_weak", "no_strong", "no_sl", "no_adv")
POOLERS = ("topk", "cluster")
CHECKPOINT_MAGIC = b"GPSCKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.01
    # step size for the pooler updates; None shares ``lr``
    lr_pool: float | None = None
    gamma: float = 0.99
    tau: float = 0.5
    rho_weak: float = 0.9
    rho_strong: float = 0.4
    pooler: str = "topk"
    # family of the strong pooler; None uses ``pooler``
    pooler_strong: str | None = None
    ablation: str = "none"
    seed: int = 0
    hidden: int = 512
    num_layers: int = 2
    pool_hidden: int | None = None
    # loss switches; None derives them from ``ablation``
    use_sl: bool | None = None
    use_cl: bool | None = None
    # reject ablations that contradict the loss switches instead of rewiring them
    strict_ablation: bool = False
    checkpoint_every: int = 0
    record_time: bool = False
    debug: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        for fam in (self.pooler, self.strong_family):
            if fam not in POOLERS:
                raise ConfigError(f"unknown pooler family {fam!r}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.lr <= 0 or (self.lr_pool is not None and self.lr_pool <= 0):
            raise ConfigError("learning rates must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.hidden < 1 or self.num_layers < 1:
            raise ConfigError("hidden size and layer count must be positive")
        for rho in (self.rho_weak, self.rho_strong):
            if not 0 < rho <= 1:
                raise ConfigError(f"pooling ratio {rho} outside (0, 1]")
        single_view = self.ablation in ("no_weak", "no_strong")
        if not single_view and not self.rho_weak > self.rho_strong:
            raise ConfigError("rho_weak must exceed rho_strong")
        if self.strict_ablation:
            need_sl = True if self.use_sl is None else self.use_sl
            need_cl = True if self.use_cl is None else self.use_cl
            if single_view and need_cl:
                raise ConfigError(
                    f"ablation {self.ablation} removes a view but consistency learning needs both views"
                )
            if self.ablation == "no_sl" and need_sl:
                raise ConfigError("ablation no_sl contradicts enabled similarity learning")
        sl, cl = self.losses
        if not (sl or cl):
            raise ConfigError("at least one loss must be enabled")

    @property
    def strong_family(self) -> str:
        return self.pooler_strong or self.pooler

    @property
    def pool_lr(self) -> float:
        return self.lr if self.lr_pool is None else self.lr_pool

    @property
    def uses_weak(self) -> bool:
        return self.ablation != "no_weak"

    @property
    def uses_strong(self) -> bool:
        return self.ablation != "no_strong"

    @property
    def losses(self) -> tuple[bool, bool]:
        """(use_sl, use_cl) after applying the ablation."""
        sl = self.ablation != "no_sl" and self.use_sl is not False
        cl = self.ablation not in ("no_weak", "no_strong") and self.use_cl is not False
        return sl, cl

    def pooler_routes(self) -> dict[str, tuple[str, float]]:
        """Map pooler role -> (loss driving it, update sign)."""
        sign = -1.0 if self.ablation == "no_adv" else 1.0
        sl, cl = self.losses
        routes = {}
        if self.uses_weak:
            routes["omega_w"] = ("L_sl" if sl else "L_cl", sign)
        if self.uses_strong:
            # without the weak view, similarity learning runs on the strong view
            routes["omega_s"] = ("L_cl" if cl else "L_sl", sign)
        return routes

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def component_seed(seed: int, component: str, *counters: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for (seed, component, counters...)."""
    return np.random.SeedSequence([int(seed), zlib.crc32(component.encode()), *map(int, counters)])


def component_rng(seed: int, component: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(component_seed(seed, component, *counters))


@dataclass
class TrainState:
    config: TrainConfig
    encoder: Encoder
    predictor: Predictor
    phi: Encoder
    omega_w: TopKPooler | ClusterPooler | None
    omega_s: TopKPooler | ClusterPooler | None
    feature_dim: int
    max_nodes: int
    epoch: int = 0
    step: int = 0
    phi_updates: int = 0
    history: list = field(default_factory=list, compare=False)

    def theta_params(self) -> list[tuple[str, Tensor]]:
        return list(self.encoder.named_parameters("theta.encoder.")) + list(
            self.predictor.named_parameters("theta.predictor.")
        )

    def pooler_params(self, role: str) -> list[tuple[str, Tensor]]:
        module = getattr(self, role)
        return [] if module is None else list(module.named_parameters(role + "."))

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = self.theta_params()
        out += list(self.phi.named_parameters("phi."))
        out += self.pooler_params("omega_w") + self.pooler_params("omega_s")
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_tensors()}

    @property
    def rng_state(self) -> dict:
        return {"seed": self.config.seed, "counter": self.epoch}


def _freeze(encoder: Encoder) -> None:
    for _, t in encoder.named_parameters():
        t.data.setflags(write=False)


def _make_pooler(family, rng, d_in, d_hidden, rho, max_nodes):
    if family == "topk":
        return init_topk_pooler(rng, d_in, d_hidden, rho)
    return init_cluster_pooler(rng, d_in, d_hidden, rho, max_nodes)


def _build_state(config: TrainConfig, feature_dim: int, max_nodes: int) -> TrainState:
    seed = config.seed
    rng = component_rng(seed, "theta")
    encoder = init_encoder(rng, feature_dim, config.hidden, config.num_layers)
    predictor = init_predictor(rng, config.hidden)
    phi = copy_params(encoder, requires_grad=False)
    _freeze(phi)
    ph = config.pool_hidden or config.hidden
    omega_w = omega_s = None
    if config.uses_weak:
        omega_w = _make_pooler(
            config.pooler, component_rng(seed, "omega_w"), feature_dim, ph, config.rho_weak, max_nodes
        )
    if config.uses_strong:
        omega_s = _make_pooler(
            config.strong_family, component_rng(seed, "omega_s"), feature_dim, ph, config.rho_strong, max_nodes
        )
    return TrainState(config, encoder, predictor, phi, omega_w, omega_s, feature_dim, max_nodes)


def init_state(config: TrainConfig, dataset: GraphDataset) -> TrainState:
    if len(dataset) < 2:
        raise ConfigError("pretraining needs at least 2 graphs")
    return _build_state(config, dataset.feature_dim, dataset.max_nodes)


# -- forward pass -------------------------------------------------------------


def target_embeddings(state: TrainState, graphs) -> Tensor:
    with no_grad():
        return concat_rows([encode(g, state.phi) for g in graphs])


def online_embedding(state: TrainState, view) -> Tensor:
    return predict(encode(view, state.encoder), state.predictor)


def forward(state: TrainState, batch) -> tuple[BatchViews, dict]:
    """Pool every graph into its views and embed them; returns the views and the pooled graphs."""
    graphs = list(batch)
    Z = target_embeddings(state, graphs)
    pooled = {}
    H = {}
    for role in ("omega_w", "omega_s"):
        pooler = getattr(state, role)
        if pooler is None:
            continue
        views = [pool(g, pooler) for g in graphs]
        pooled[role] = views
        H[role] = concat_rows([online_embedding(state, v) for v in views])
    views = BatchViews(Z, H.get("omega_w"), H.get("omega_s"), state.config.tau)
    if state.config.debug:
        views.validate()
        for role, rho in (("omega_w", state.config.rho_weak), ("omega_s", state.config.rho_strong)):
            for g, p in zip(graphs, pooled.get(role, ())):
                p.validate(g.n, rho)
    return views, pooled


def compute_losses(state: TrainState, batch) -> dict[str, Tensor]:
    views, _ = forward(state, batch)
    sl, cl = state.config.losses
    return batch_objective(views, use_sl=sl, use_cl=cl)


def loss_values(state: TrainState, batch) -> dict[str, float]:
    with no_grad():
        return {k: v.item() for k, v in compute_losses(state, batch).items()}


# -- updates ----------------------------------------------------------------------


def momentum_update(phi: Encoder, theta: Encoder, gamma: float) -> None:
    """phi <- gamma * phi + (1 - gamma) * theta, entrywise; phi stays read-only."""
    if not 0 <= gamma <= 1:
        raise ConfigError("gamma must lie in [0, 1]")
    targets = list(phi.named_parameters())
    sources = list(theta.named_parameters())
    if [n for n, _ in targets] != [n for n, _ in sources]:
        raise ConfigError("target and online encoders have different structure")
    for (name, tp), (_, tt) in zip(targets, sources):
        if tp.shape != tt.shape:
            raise ConfigError(f"shape mismatch for {name}: {tp.shape} vs {tt.shape}")
    for (_, tp), (_, tt) in zip(targets, sources):
        new = gamma * tp.data + (1.0 - gamma) * tt.data
        new.setflags(write=False)
        tp.data = new


def step_gradients(state: TrainState, losses: dict[str, Tensor]) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of each enabled loss with respect to every trainable tensor.

    Returns ``{loss_name: {tensor_name: grad}}``.
    """
    trainable = state.theta_params() + state.pooler_params("omega_w") + state.pooler_params("omega_s")
    names = [n for n, _ in trainable]
    tensors = [t for _, t in trainable]
    sl, cl = state.config.losses
    active = [k for k, on in (("L_sl", sl), ("L_cl", cl)) if on]
    out = {}
    for i, key in enumerate(active):
        grads = grad(losses[key], tensors, retain_graph=i < len(active) - 1)
        out[key] = dict(zip(names, grads))
    return out


def _check_phi(state: TrainState, snapshot) -> None:
    for (name, t), before in zip(state.phi.named_parameters("phi."), snapshot):
        if t.requires_grad or t.grad is not None:
            raise StateError(f"{name} acquired gradient tracking")
        if t.data is not before or t.data.flags.writeable:
            raise StateError(f"{name} was modified outside the momentum update")


def train_step(state: TrainState, batch) -> dict[str, float]:
    """One adversarial step; returns the pre-update losses.

    Poolers move along +grad of their loss (-grad under ``no_adv``), the
    online encoder and predictor along -grad of the summed losses, then the
    target encoder is mixed towards the online encoder.
    """
    cfg = state.config
    snapshot = [t.data for _, t in state.phi.named_parameters()]
    losses = compute_losses(state, batch)
    values = {k: v.item() for k, v in losses.items()}
    if not all(np.isfinite(v) for v in values.values()):
        raise NumericError(f"non-finite loss {values}")
    grads = step_gradients(state, losses)

    updates: list[tuple[Tensor, np.ndarray]] = []
    for name, t in state.theta_params():
        total = sum(g[name] for g in grads.values())
        updates.append((t, t.data - cfg.lr * total))
    for role, (key, sign) in cfg.pooler_routes().items():
        if key not in grads:
            continue
        for name, t in state.pooler_params(role):
            updates.append((t, t.data + sign * cfg.pool_lr * grads[key][name]))
    for _, new in updates:
        if not np.isfinite(new).all():
            raise NumericError("parameter update produced non-finite values")
    if cfg.debug:
        _check_phi(state, snapshot)
    for t, new in updates:
        t.data = new
        t.zero_grad()
    momentum_update(state.phi, state.encoder, cfg.gamma)
    state.phi_updates += 1
    state.step += 1
    return values


# -- training driver ----------------------------------------------------------------


def epoch_batches(state: TrainState, dataset: GraphDataset, epoch: int) -> list[Batch]:
    seed = int(component_seed(state.config.seed, "batches", epoch).generate_state(1)[0])
    return make_batches(dataset, state.config.batch_size, seed=seed, shuffle=True)


def run_epoch(state: TrainState, dataset: GraphDataset) -> dict:
    epoch = state.epoch + 1
    start = time.perf_counter()
    sums = {"L_sl": 0.0, "L_cl": 0.0}
    batches = epoch_batches(state, dataset, epoch)
    for batch in batches:
        vals = train_step(state, batch)
        for k in sums:
            sums[k] += vals[k]
    state.epoch = epoch
    record = {
        "epoch": epoch,
        "L_sl": sums["L_sl"] / len(batches),
        "L_cl": sums["L_cl"] / len(batches),
        "wall_ms": round((time.perf_counter() - start) * 1000.0, 3) if state.config.record_time else None,
    }
    state.history.append(record)
    return record


def fit(config: TrainConfig, dataset: GraphDataset, state: TrainState | None = None, callback=None) -> TrainState:
    """Train in memory for ``config.epochs`` epochs (continuing ``state`` if given)."""
    if state is None:
        state = init_state(config, dataset)
    for _ in range(config.epochs - state.epoch):
        record = run_epoch(state, dataset)
        logger.debug("epoch %d: L_sl=%.6f L_cl=%.6f", record["epoch"], record["L_sl"], record["L_cl"])
        if callback is not None:
            callback(state, record)
    return state


def metrics_line(record: dict) -> str:
    return json.dumps(record) + "\n"


def pretrain(config: TrainConfig, dataset: GraphDataset, out_dir) -> Path:
    """Run the full training loop, writing ``metrics.jsonl`` and ``checkpoint.gps`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.gps"
    with open(metrics_path, "w", newline="\n") as fh:

        def on_epoch(state, record):
            fh.write(metrics_line(record))
            fh.flush()
            every = config.checkpoint_every
            if every and state.epoch % every == 0 and state.epoch < config.epochs:
                save_checkpoint(state, out / f"checkpoint_epoch{state.epoch:04d}.gps")

        state = fit(config, dataset, callback=on_epoch)
    save_checkpoint(state, ckpt_path)
    return ckpt_path


def embed_dataset(state: TrainState, dataset) -> np.ndarray:
    """Momentum-encoder embeddings, one row per graph."""
    if dataset.feature_dim != state.phi.in_dim:
        raise ConfigError(
            f"dataset feature dimension {dataset.feature_dim} does not match encoder input {state.phi.in_dim}"
        )
    with no_grad():
        return np.vstack([encode(g, state.phi).data for g in dataset])


# -- checkpoints ----------------------------------------------------------------------
# layout: magic | u32 version | u64 header length | JSON header | float64 LE blob


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    tensors, blobs, offset = [], [], 0
    for name, t in state.named_tensors():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        tensors.append({"name": name, "rows": arr.shape[0], "cols": arr.shape[1], "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "phi_updates": state.phi_updates,
        "rng": state.rng_state,
        "feature_dim": state.feature_dim,
        "max_nodes": state.max_nodes,
        "tensors": tensors,
        "data_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> TrainState:
    raw = Path(path).read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + 12
    if len(raw) < prefix or not raw.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a gpscl checkpoint")
    version, head_len = struct.unpack("<IQ", raw[len(CHECKPOINT_MAGIC) : prefix])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < prefix + head_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[prefix : prefix + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    blob = raw[prefix + head_len :]
    if len(blob) != header["data_bytes"]:
        raise FormatError(f"{path}: expected {header['data_bytes']} data bytes, found {len(blob)}")

    config = TrainConfig.from_dict(header["config"])
    state = _build_state(config, header["feature_dim"], header["max_nodes"])
    slots = dict(state.named_tensors())
    entries = {e["name"]: e for e in header["tensors"]}
    if set(entries) != set(slots):
        raise FormatError(f"{path}: tensor names do not match the configured model")
    for name, t in slots.items():
        e = entries[name]
        if (e["rows"], e["cols"]) != t.shape:
            raise FormatError(f"{path}: {name} has shape {(e['rows'], e['cols'])}, expected {t.shape}")
        count = e["rows"] * e["cols"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).astype(np.float64)
        arr = arr.reshape(e["rows"], e["cols"])
        if name.startswith("phi."):
            arr.setflags(write=False)
        t.data = arr
        t.zero_grad()
    state.epoch = header["epoch"]
    state.step = header["step"]
    state.phi_updates = header["phi_updates"]
    return state
