"""Gating expert network: adaptive-threshold noisy gating, experts, and their losses.

Batched functions take ``x`` of shape (B, d) and produce factor tensors of
shape (B, K, d). A 1-D input is treated as a batch of one and squeezed back.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import tape as T
from .numerics.params import ConfigError, init_normal, init_xavier_uniform, init_zeros

GATE_W = "gate.W_g"
GATE_NOISE = "gate.W_noise"


def expert_param_names(k):
    return (f"expert{k}.W1", f"expert{k}.b1", f"expert{k}.W2", f"expert{k}.b2")


def init_moe_params(store, dim, num_experts, rng, gate_std=0.01):
    if dim % 2 or dim <= 0:
        raise ConfigError(f"embedding size must be positive and even, got {dim}")
    if num_experts < 2:
        raise ConfigError(f"need at least 2 experts, got {num_experts}")
    init_normal(store, GATE_W, (num_experts, dim), rng, gate_std)
    init_normal(store, GATE_NOISE, (num_experts, dim), rng, gate_std)
    h = dim // 2
    for k in range(num_experts):
        w1, b1, w2, b2 = expert_param_names(k)
        init_xavier_uniform(store, w1, (h, dim), rng)
        init_zeros(store, b1, (h,))
        init_xavier_uniform(store, w2, (dim, h), rng)
        init_zeros(store, b2, (dim,))


def fetch_experts(fetch, num_experts):
    """Expert parameter tuples via ``fetch`` (``tape.param`` or ``store.__getitem__``)."""
    return [tuple(fetch(n) for n in expert_param_names(k)) for k in range(num_experts)]


@dataclass
class GateDecision:
    probabilities: T.Node
    gate_values: T.Node
    selected: np.ndarray
    threshold: float
    fallback: np.ndarray

    @property
    def selected_sets(self):
        sel = np.atleast_2d(self.selected)
        return [tuple(np.flatnonzero(row).tolist()) for row in sel]


def select_experts(probs):
    """Mask of experts whose probability strictly exceeds the mean 1/K.

    A row with no such entry (exactly uniform) falls back to its argmax, ties
    to the lowest index. Returns (mask, fallback_rows).
    """
    probs = np.atleast_2d(probs)
    K = probs.shape[1]
    threshold = 1.0 / K
    # mean of a softmax row is 1/K up to rounding
    assert np.all(np.abs(probs.mean(axis=1) - threshold) <= 1e-6 / K + 1e-7), "gate input is not a softmax"
    mask = probs > threshold
    empty = ~mask.any(axis=1)
    if empty.any():
        rows = np.flatnonzero(empty)
        mask[rows, np.argmax(probs[rows], axis=1)] = True
    return mask, empty


def gate_forward(x, w_g, w_noise, noise=None, train_mode=False, rng=None):
    """softmax(W_g x + noise * softplus(W_noise x)), thresholded at the mean.

    In train mode a fresh standard-normal draw is taken from ``rng`` unless an
    explicit ``noise`` array is given (frozen draw). In eval mode no noise is used.
    """
    x = T.lift(x)
    squeeze = x.value.ndim == 1
    if squeeze:
        x = T.reshape(x, (1, -1))
    logits = T.matmul(x, T.transpose(w_g))
    if train_mode:
        if noise is None:
            if rng is None:
                raise ValueError("train-mode gating needs an rng or a frozen noise draw")
            noise = rng.standard_normal(logits.shape)
        noise = np.asarray(noise, dtype=logits.dtype).reshape(logits.shape)
        logits = logits + noise * T.softplus(T.matmul(x, T.transpose(w_noise)))
    probs = T.softmax(logits, axis=1)
    mask, fallback = select_experts(probs.value)
    gates = probs * mask.astype(probs.dtype)
    K = probs.shape[1]
    if squeeze:
        probs = T.reshape(probs, (K,))
        gates = T.reshape(gates, (K,))
        mask, fallback = mask[0], fallback[0]
    return GateDecision(probs, gates, mask, 1.0 / K, fallback)


def expert_forward(x, W1, b1, W2, b2):
    """W2 tanh(W1 x + b1) + b2 for a single d-vector or a (B, d) batch."""
    x = T.lift(x)
    if x.value.ndim == 1:
        h = T.tanh(T.matmul(W1, T.reshape(x, (-1, 1))) + T.reshape(T.lift(b1), (-1, 1)))
        return T.reshape(T.matmul(W2, h), (-1,)) + b2
    h = T.tanh(T.matmul(x, T.transpose(W1)) + b1)
    return T.matmul(h, T.transpose(W2)) + b2


def all_expert_outputs(x, experts):
    """Outputs of every expert for a (B, d) batch, shape (B, K, d)."""
    W1 = T.stack([e[0] for e in experts])
    b1 = T.stack([e[1] for e in experts])
    W2 = T.stack([e[2] for e in experts])
    b2 = T.stack([e[3] for e in experts])
    h = T.tanh(T.einsum("bd,khd->bkh", x, W1) + b1)
    return T.einsum("bkh,kdh->bkd", h, W2) + b2


def user_factors(x, gate, experts):
    """Gated user factors t_k * E_k(x), plus the ungated outputs, both (B, K, d)."""
    raw = all_expert_outputs(x, experts)
    gated = raw * T.expand_dims(gate.gate_values, 2)
    return gated, raw


@dataclass
class FactorSet:
    owner: int
    factors: np.ndarray
    gate: GateDecision | None = None

    @property
    def selected(self):
        if self.gate is None:
            return tuple(range(len(self.factors)))
        return tuple(np.flatnonzero(self.gate.selected).tolist())


def extract_user_factors(p_tilde, store, num_experts, train_mode=False, rng=None, owner=-1):
    """Gate one user embedding and evaluate only the selected experts."""
    p = np.asarray(p_tilde)
    gate = gate_forward(p, store[GATE_W], store[GATE_NOISE], train_mode=train_mode, rng=rng)
    factors = np.zeros((num_experts, p.shape[0]), dtype=p.dtype)
    t = gate.gate_values.value
    for k in np.flatnonzero(gate.selected):
        params = [store[n] for n in expert_param_names(k)]
        factors[k] = t[k] * expert_forward(p, *params).value
    return FactorSet(owner, factors, gate)


def extract_item_factors(q_tilde, store, num_experts, owner=-1, experts=None):
    """Item factors with every gate fixed at 1 (optionally restricted to ``experts``)."""
    q = np.asarray(q_tilde)
    factors = np.zeros((num_experts, q.shape[0]), dtype=q.dtype)
    for k in (range(num_experts) if experts is None else experts):
        params = [store[n] for n in expert_param_names(k)]
        factors[k] = expert_forward(q, *params).value
    return FactorSet(owner, factors)


def contrastive_term(factors, tau):
    """In-batch consistency/independence loss for one entity type.

    ``factors`` is (B, K, d). For every ordered pair (a, b), including a == b,
    and every expert k, the term is -log of exp(<e_a^k, e_b^k>/tau) over the
    sum of exp(<e_a^j, e_b^k>/tau) for all j. Averaged over the B*B*K terms.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    factors = T.lift(factors)
    K = factors.shape[1]
    sims = T.einsum("ajd,bkd->abjk", factors, factors) * (1.0 / tau)
    lse = T.logsumexp(sims, axis=2)
    diag = np.arange(K)
    pos = T.take(sims, (slice(None), slice(None), diag, diag))
    return T.mean(lse - pos)


def contrastive_loss(user_factors, item_factors, tau):
    return contrastive_term(user_factors, tau) + contrastive_term(item_factors, tau)


def factor_scores(user_f, item_f):
    """sum_k <e_u^k, e_i^k> row-wise for (B, K, d) user and item factors."""
    return T.sum(T.sum(user_f * item_f, axis=2), axis=1)


def interaction_loss(user_f, item_f, labels):
    """Batch-mean binary cross-entropy of sigma(sum_k <e_u^k, e_i^k>).

    User factors outside the selected set are exact zeros, so the sum runs
    over the user's selected experts only.
    """
    z = factor_scores(user_f, item_f)
    y = np.asarray(labels, dtype=z.dtype)
    ll = T.log_sigmoid(z) * y + T.log_sigmoid(-z) * (1 - y)
    return -T.mean(ll)


def net_loss(l_log, l_nce, alpha):
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return l_log + l_nce * alpha

