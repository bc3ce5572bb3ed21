"""Embedding enhancement: per-behavior LightGCN and frequency-weighted aggregation.

Embeddings are stored row-major, one row per user/item (``|U| x d``).
Functions accept arrays or tape nodes and return nodes; call ``.value`` for
the array.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .numerics import tape as T

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizedAdjacency:
    behavior_id: int
    users: np.ndarray
    items: np.ndarray
    coefficients: np.ndarray
    num_users: int
    num_items: int

    def matrix(self, dtype=np.float64):
        """Sparse |U| x |I| matrix with entries 1/sqrt(|N_u| |N_i|)."""
        return sp.csr_matrix((self.coefficients.astype(dtype), (self.users, self.items)),
                             shape=(self.num_users, self.num_items))

    def __len__(self):
        return len(self.users)


def build_adjacency(matrix):
    du = matrix.user_counts[matrix.users].astype(np.float64)
    di = matrix.item_counts[matrix.items].astype(np.float64)
    coeff = 1.0 / (np.sqrt(du) * np.sqrt(di))
    return NormalizedAdjacency(matrix.behavior_id, matrix.users.copy(), matrix.items.copy(),
                               coeff, matrix.num_users, matrix.num_items)


def _as_sparse(adj, dtype):
    return adj if sp.issparse(adj) else adj.matrix(dtype)


def propagate_layer(adj, user_emb, item_emb):
    """One hop: users gather normalized item rows and vice versa."""
    user_emb, item_emb = T.lift(user_emb), T.lift(item_emb)
    if user_emb.shape[1] != item_emb.shape[1]:
        raise ValueError(f"embedding widths differ: {user_emb.shape[1]} vs {item_emb.shape[1]}")
    A = _as_sparse(adj, user_emb.dtype)
    if A.shape != (user_emb.shape[0], item_emb.shape[0]):
        raise ValueError(f"adjacency {A.shape} does not match embeddings "
                         f"{user_emb.shape[0]} users x {item_emb.shape[0]} items")
    return T.spmm(A, item_emb), T.spmm(A.T.tocsr(), user_emb)


def run_lightgcn(adj, P, Q, layers):
    """Sum of layer-0..L embeddings (layer 0 included, no averaging)."""
    if layers < 1:
        raise ValueError("layer count must be >= 1")
    P, Q = T.lift(P), T.lift(Q)
    A = _as_sparse(adj, P.dtype)
    p_l, q_l = P, Q
    p_sum, q_sum = P, Q
    for _ in range(layers):
        p_l, q_l = propagate_layer(A, p_l, q_l)
        p_sum = p_sum + p_l
        q_sum = q_sum + q_l
    return p_sum, q_sum


def _weights(counts):
    counts = counts.astype(np.float64)
    total = counts.sum(axis=1, keepdims=True)
    M = counts.shape[1]
    # cold entities get uniform weights so their aggregate is not annihilated
    return np.where(total > 0, counts / np.where(total > 0, total, 1), 1.0 / M)


def behavior_weights(dataset):
    """Per-entity behavior weights n^m / sum_j n^j, shapes (|U|, M) and (|I|, M)."""
    return _weights(dataset.user_counts()), _weights(dataset.item_counts())


def aggregate_behaviors(per_behavior, weights):
    """Weighted sum over behaviors of per-behavior embedding matrices."""
    if len(per_behavior) != weights.shape[1]:
        raise ValueError("one weight column per behavior required")
    out = None
    for m, emb in enumerate(per_behavior):
        emb = T.lift(emb)
        term = emb * weights[:, m:m + 1].astype(emb.dtype)
        out = term if out is None else out + term
    return out


def bpr_loss(user_emb, item_emb, users, pos, neg):
    """Batch mean of -ln sigma(<p_u, q_i> - <p_u, q_j>)."""
    pu = T.take(user_emb, users)
    qi = T.take(item_emb, pos)
    qj = T.take(item_emb, neg)
    margin = T.sum(pu * (qi - qj), axis=1)
    return -T.mean(T.log_sigmoid(margin))


def enhancement_loss(triples, user_embs, item_embs):
    """Mean over behaviors of batch-averaged per-behavior BPR losses.

    ``triples[m]`` is an (n, 3) integer array of (user, pos, neg) for behavior m;
    a behavior with no triples contributes 0.
    """
    M = len(user_embs)
    total = None
    for m in range(M):
        tr = np.asarray(triples[m], dtype=np.int64).reshape(-1, 3)
        if len(tr) == 0:
            log.debug("behavior %d: empty triple batch, contributes 0", m)
            continue
        lm = bpr_loss(user_embs[m], item_embs[m], tr[:, 0], tr[:, 1], tr[:, 2])
        total = lm if total is None else total + lm
    if total is None:
        dtype = T.lift(user_embs[0]).dtype
        return T.Node(np.zeros((), dtype=dtype))
    return total * (1.0 / M)
