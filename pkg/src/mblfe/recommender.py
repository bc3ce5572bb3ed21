"""Target-behavior scoring, the joint objective, training loop and snapshots."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import moe
from .dataset import Dataset, merged_interaction_set, sample_bpr_triples
from .numerics import tape as T
from .numerics.checkpoint import CheckpointError, read_container, write_container
from .numerics.params import ConfigError, ParamStore, adam_step, init_normal, init_xavier_uniform
from .propagation import aggregate_behaviors, behavior_weights, build_adjacency, enhancement_loss, run_lightgcn

log = logging.getLogger(__name__)

USER_EMB = "P"
ITEM_EMB = "Q"
PROJECTION = "W_map"

_ALIASES = {"d": "dim", "K": "num_experts", "L": "layers"}


@dataclass
class TrainingConfig:
    dim: int = 64
    num_experts: int = 8
    layers: int = 2
    lr: float = 1e-3
    tau: float = 0.5
    alpha: float = 0.1
    gamma: float = 1e-4
    batch_size: int = 1024
    epochs: int = 50
    seed: int = 2024
    cutoffs: tuple = (10, 20)
    # cap on entities per contrastive term; the in-batch estimator is quadratic
    nce_sample: int = 128
    init_std: float = 0.01

    def __post_init__(self):
        self.cutoffs = tuple(int(c) for c in self.cutoffs)
        self.validate()

    def validate(self):
        if self.dim <= 0 or self.dim % 2:
            raise ConfigError(f"dim must be positive and even, got {self.dim}")
        if self.num_experts < 2:
            raise ConfigError(f"num_experts must be >= 2, got {self.num_experts}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.batch_size <= 0 or self.epochs < 0 or self.nce_sample < 1:
            raise ConfigError("batch_size and nce_sample must be positive, epochs non-negative")
        if not self.cutoffs or min(self.cutoffs) <= 0:
            raise ConfigError(f"cutoffs must be positive, got {self.cutoffs}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["cutoffs"] = list(self.cutoffs)
        return d

    @classmethod
    def from_dict(cls, mapping):
        """Build from string or typed values; unknown keys are rejected."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            key = _ALIASES.get(key, key)
            if key not in types:
                raise ConfigError(f"unknown training option {key!r}")
            default = getattr(cls, key, None)
            if key == "cutoffs":
                kwargs[key] = tuple(int(c) for c in (raw.split(",") if isinstance(raw, str) else raw))
            elif isinstance(default, int) and not isinstance(default, bool):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


def param_shapes(config, num_users, num_items):
    d, h = config.dim, config.dim // 2
    shapes = {USER_EMB: (num_users, d), ITEM_EMB: (num_items, d),
              moe.GATE_W: (config.num_experts, d), moe.GATE_NOISE: (config.num_experts, d)}
    for k in range(config.num_experts):
        w1, b1, w2, b2 = moe.expert_param_names(k)
        shapes.update({w1: (h, d), b1: (h,), w2: (d, h), b2: (d,)})
    shapes[PROJECTION] = (d, d)
    return shapes


def init_params(config, num_users, num_items, dtype=np.float32, seed=None):
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = ParamStore(dtype)
    init_normal(store, USER_EMB, (num_users, config.dim), rng, config.init_std)
    init_normal(store, ITEM_EMB, (num_items, config.dim), rng, config.init_std)
    moe.init_moe_params(store, config.dim, config.num_experts, rng, config.init_std)
    init_xavier_uniform(store, PROJECTION, (config.dim, config.dim), rng)
    return store


def project_factor(e, W_map):
    """Row-vector projection e^T W_map into the target behavior space."""
    return T.value(e) @ T.value(W_map)


def score(user_fs, item_fs, W_map):
    """Sum over the user's selected experts of <projected user factor, item factor>."""
    W = T.value(W_map)
    total = 0.0
    for k in user_fs.selected:
        total += float(project_factor(user_fs.factors[k], W) @ item_fs.factors[k])
    return total


def rec_loss(z_pos, z_neg):
    """Batch mean of -ln sigma(z_ui - z_uj)."""
    return -T.mean(T.log_sigmoid(T.lift(z_pos) - z_neg))


def total_loss(l_enh, l_net, l_rec, gamma, tape):
    """L_enh + L_net + L_rec + gamma * squared L2 norm of every parameter in the store."""
    for name, part in (("L_enh", l_enh), ("L_net", l_net), ("L_rec", l_rec)):
        v = np.asarray(T.value(part))
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite {name} = {v}")
    out = T.lift(l_enh) + l_net + l_rec
    if gamma:
        reg = None
        for name in tape.store.names():
            term = T.square_sum(tape.param(name))
            reg = term if reg is None else reg + term
        out = out + reg * gamma
    return out


@dataclass
class Batch:
    triples: list          # per behavior, (n, 3) arrays of (user, pos, neg)
    merged: tuple          # (users, items, labels)
    target: np.ndarray     # (n, 3) target-behavior triples
    nce_users: np.ndarray
    nce_items: np.ndarray

    def gate_users(self):
        return np.unique(np.concatenate([self.merged[0], self.target[:, 0], self.nce_users]))

    def factor_items(self):
        return np.unique(np.concatenate(
            [self.merged[1], self.target[:, 1], self.target[:, 2], self.nce_items]))


def _triples_array(triples):
    return np.asarray(triples, dtype=np.int64).reshape(-1, 3)


def _subsample(values, cap, rng):
    values = np.unique(values)
    if len(values) > cap:
        values = np.sort(rng.choice(values, size=cap, replace=False))
    return values


def sample_epoch(dataset, config, rng):
    """Fresh samples for every loss, split into interleaved mini-batches."""
    triples = [_triples_array(sample_bpr_triples(m, len(m), rng)) for m in dataset.behaviors]
    target = _triples_array(sample_bpr_triples(dataset.target, len(dataset.target), rng))
    mu, mi, ml = merged_interaction_set(dataset, rng)
    perm = rng.permutation(len(mu))
    mu, mi, ml = mu[perm], mi[perm], ml[perm]
    n_batches = max(1, -(-len(target) // config.batch_size))
    tri_chunks = [np.array_split(t, n_batches) for t in triples]
    tgt_chunks = np.array_split(target, n_batches)
    idx_chunks = np.array_split(np.arange(len(mu)), n_batches)
    batches = []
    for b in range(n_batches):
        idx = idx_chunks[b]
        merged = (mu[idx], mi[idx], ml[idx])
        batches.append(Batch(
            triples=[c[b] for c in tri_chunks],
            merged=merged,
            target=tgt_chunks[b],
            nce_users=_subsample(merged[0], config.nce_sample, rng),
            nce_items=_subsample(merged[1], config.nce_sample, rng),
        ))
    return batches


def _positions(sorted_ids, ids):
    return np.searchsorted(sorted_ids, ids)


class MBLFE:
    """The full model bound to one training graph and one ParamStore."""

    def __init__(self, config: TrainingConfig, dataset: Dataset, store=None, dtype=np.float32):
        self.config = config
        self.dataset = dataset
        if store is None:
            store = init_params(config, dataset.num_users, dataset.num_items, dtype)
        expected = param_shapes(config, dataset.num_users, dataset.num_items)
        check_shapes(store.params, expected)
        self.store = store
        dt = store.dtype
        self.adjacency = [build_adjacency(m).matrix(dt) for m in dataset.behaviors]
        self.user_weights, self.item_weights = behavior_weights(dataset)

    @property
    def num_experts(self):
        return self.config.num_experts

    def enhance(self, fetch):
        P, Q = fetch(USER_EMB), fetch(ITEM_EMB)
        per_user, per_item = [], []
        for A in self.adjacency:
            p_m, q_m = run_lightgcn(A, P, Q, self.config.layers)
            per_user.append(p_m)
            per_item.append(q_m)
        p_tilde = aggregate_behaviors(per_user, self.user_weights)
        q_tilde = aggregate_behaviors(per_item, self.item_weights)
        return per_user, per_item, p_tilde, q_tilde

    def losses(self, tape, batch, train_mode=True, rng=None, noise=None):
        """Forward pass for one batch; returns the component losses and the total."""
        cfg = self.config
        per_user, per_item, p_tilde, q_tilde = self.enhance(tape.param)
        l_enh = enhancement_loss(batch.triples, per_user, per_item)

        experts = moe.fetch_experts(tape.param, cfg.num_experts)
        g_users = batch.gate_users()
        f_items = batch.factor_items()
        x = T.take(p_tilde, g_users)
        gate = moe.gate_forward(x, tape.param(moe.GATE_W), tape.param(moe.GATE_NOISE),
                                noise=noise, train_mode=train_mode, rng=rng)
        gated, raw = moe.user_factors(x, gate, experts)
        item_f = moe.all_expert_outputs(T.take(q_tilde, f_items), experts)

        zero = T.Node(np.zeros((), dtype=self.store.dtype))
        mu, mi, ml = batch.merged
        if len(mu):
            l_log = moe.interaction_loss(T.take(gated, _positions(g_users, mu)),
                                         T.take(item_f, _positions(f_items, mi)), ml)
        else:
            l_log = zero
        l_nce = moe.contrastive_loss(T.take(raw, _positions(g_users, batch.nce_users)),
                                     T.take(item_f, _positions(f_items, batch.nce_items)), cfg.tau)
        l_net = moe.net_loss(l_log, l_nce, cfg.alpha)

        tgt = batch.target
        if len(tgt):
            eu = T.take(gated, _positions(g_users, tgt[:, 0]))
            proj = T.einsum("nkd,de->nke", eu, tape.param(PROJECTION))
            z_pos = moe.factor_scores(proj, T.take(item_f, _positions(f_items, tgt[:, 1])))
            z_neg = moe.factor_scores(proj, T.take(item_f, _positions(f_items, tgt[:, 2])))
            l_rec = rec_loss(z_pos, z_neg)
        else:
            l_rec = zero
        total = total_loss(l_enh, l_net, l_rec, cfg.gamma, tape)
        return {"L_enh": l_enh, "L_log": l_log, "L_nce": l_nce, "L_net": l_net,
                "L_rec": l_rec, "total": total}

    def inference(self):
        return Inference.from_model(self)


@dataclass
class Inference:
    """Immutable eval-mode view: enhanced embeddings and all item factors."""
    p_tilde: np.ndarray
    q_tilde: np.ndarray
    item_factors: np.ndarray   # (|I|, K, d)
    W_map: np.ndarray
    store: ParamStore
    num_experts: int

    @classmethod
    def from_model(cls, model):
        _, _, p, q = model.enhance(model.store.__getitem__)
        experts = moe.fetch_experts(model.store.__getitem__, model.num_experts)
        item_f = moe.all_expert_outputs(q, experts).value
        return cls(p.value, q.value, item_f, model.store[PROJECTION], model.store, model.num_experts)

    @property
    def num_items(self):
        return self.q_tilde.shape[0]

    def gate(self, users):
        s = self.store
        return moe.gate_forward(self.p_tilde[np.asarray(users)], s[moe.GATE_W], s[moe.GATE_NOISE])

    def raw_user_factors(self, users):
        experts = moe.fetch_experts(self.store.__getitem__, self.num_experts)
        return moe.all_expert_outputs(self.p_tilde[np.asarray(users)], experts).value

    def user_factors(self, users):
        gate = self.gate(users)
        gated = self.raw_user_factors(users) * gate.gate_values.value[:, :, None]
        return gated, gate

    def scores(self, users):
        """(len(users), |I|) target-behavior scores z_ui."""
        gated, _ = self.user_factors(users)
        proj = np.einsum("bkd,de->bke", gated, self.W_map)
        return np.einsum("bkd,ikd->bi", proj, self.item_factors)


class TrainingDiverged(FloatingPointError):
    pass


def train_epoch(model, rng):
    """One pass: per batch a full forward, one backward, one Adam step."""
    store, cfg = model.store, model.config
    sums: dict[str, float] = {}
    batches = sample_epoch(model.dataset, cfg, rng)
    for batch in batches:
        store.zero_grads()
        tape = T.Tape(store)
        try:
            parts = model.losses(tape, batch, train_mode=True, rng=rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(str(exc)) from exc
        total = parts["total"]
        if not np.isfinite(total.value):
            raise TrainingDiverged(f"non-finite total loss {total.value}")
        tape.backward(total)
        adam_step(store, cfg.lr)
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + float(v.value)
    return {k: v / len(batches) for k, v in sums.items()}


def epoch_rng(seed, epoch):
    return np.random.default_rng([seed, epoch])


LOG_FIELDS = ("L_enh", "L_net", "L_rec", "total")


def train(model, epochs=None, log_path=None, snapshot_path=None, split_seed=None,
          start_epoch=0, on_epoch=None):
    """Fixed-budget training; the snapshot is rewritten after every good epoch."""
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    history = []
    for epoch in range(start_epoch, start_epoch + epochs):
        metrics = train_epoch(model, epoch_rng(cfg.seed, epoch))
        history.append(metrics)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={metrics[k]:.5f}" for k in LOG_FIELDS))
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write("\t".join([str(epoch)] + [repr(float(np.float32(metrics[k]))) for k in LOG_FIELDS]) + "\n")
        if snapshot_path is not None:
            save_snapshot(model.store, cfg, snapshot_path, epoch=epoch + 1, split_seed=split_seed)
        if on_epoch is not None:
            on_epoch(epoch, metrics)
    return history


@dataclass
class ModelSnapshot:
    store: ParamStore
    config: TrainingConfig
    epoch: int
    split_seed: int | None
    num_users: int
    num_items: int
    extra: dict = field(default_factory=dict)


def check_shapes(arrays, expected):
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"missing parameter {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: have {tuple(arrays[name].shape)}, config expects {tuple(shape)}")
    unknown = sorted(set(arrays) - set(expected))
    if unknown:
        raise CheckpointError(f"unexpected parameters {unknown}")


def save_snapshot(store, config, path, epoch=0, split_seed=None, extra=None):
    meta = {"config": config.to_dict(), "epoch": int(epoch), "split_seed": split_seed,
            "num_users": int(store[USER_EMB].shape[0]), "num_items": int(store[ITEM_EMB].shape[0]),
            "extra": extra or {}}
    write_container(path, store.params, meta)


def load_snapshot(path, config=None):
    """Read a snapshot; shapes are checked against ``config`` (or the echoed one)."""
    manifest, arrays = read_container(path)
    meta = manifest["meta"]
    saved_cfg = TrainingConfig.from_dict(meta["config"])
    cfg = saved_cfg if config is None else config
    check_shapes(arrays, param_shapes(cfg, meta["num_users"], meta["num_items"]))
    store = ParamStore(np.float32)
    for e in manifest["params"]:
        store.add(e["name"], arrays[e["name"]])
    return ModelSnapshot(store, cfg, meta["epoch"], meta["split_seed"], meta["num_users"],
                         meta["num_items"], meta.get("extra", {}))
