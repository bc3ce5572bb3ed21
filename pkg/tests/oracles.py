"""Independent reference computations used by the tests.

Nothing here calls the code paths it checks: propagation uses a dense
bipartite adjacency, ranking uses Python's sort, scores are rebuilt entity by
entity.
"""
import math

import numpy as np

from mblfe import moe
from mblfe.recommender import PROJECTION, score


def dense_normalized_adjacency(pairs, num_users, num_items):
    n = num_users + num_items
    A = np.zeros((n, n))
    for u, i in pairs:
        A[u, num_users + i] = A[num_users + i, u] = 1.0
    deg = A.sum(axis=1)
    inv = np.where(deg > 0, 1 / np.sqrt(np.where(deg > 0, deg, 1)), 0.0)
    return inv[:, None] * A * inv[None, :]


def dense_lightgcn(pairs, P, Q, layers):
    U, I = len(P), len(Q)
    A = dense_normalized_adjacency(pairs, U, I)
    X = np.vstack([P, Q])
    out = X.copy()
    power = X
    for _ in range(layers):
        power = A @ power
        out = out + power
    return out[:U], out[U:]


def dense_enhanced(dataset, store, layers):
    """p~, q~ via dense propagation and explicit per-entity behavior weights."""
    P, Q = store["P"], store["Q"]
    M = dataset.num_behaviors
    p_tilde = np.zeros_like(P)
    q_tilde = np.zeros_like(Q)
    for m in dataset.behaviors:
        pm, qm = dense_lightgcn(m.pairs().tolist(), P, Q, layers)
        for u in range(len(P)):
            tot = sum(b.user_counts[u] for b in dataset.behaviors)
            w = m.user_counts[u] / tot if tot else 1 / M
            p_tilde[u] += w * pm[u]
        for i in range(len(Q)):
            tot = sum(b.item_counts[i] for b in dataset.behaviors)
            w = m.item_counts[i] / tot if tot else 1 / M
            q_tilde[i] += w * qm[i]
    return p_tilde, q_tilde


def naive_ranks(dataset, store, layers, num_experts, test):
    """Rank every held-out item by rebuilding each score from per-entity factors."""
    p_tilde, q_tilde = dense_enhanced(dataset, store, layers)
    items = [moe.extract_item_factors(q_tilde[i], store, num_experts, owner=i)
             for i in range(dataset.num_items)]
    ranks = []
    for u, held in sorted(test):
        uf = moe.extract_user_factors(p_tilde[u], store, num_experts, owner=u)
        seen = set(dataset.target.user_adj[u].tolist())
        cands = [i for i in range(dataset.num_items) if i not in seen]
        scored = sorted(((-score(uf, items[i], store[PROJECTION]), i) for i in cands))
        ranks.append((u, held, 1 + [i for _, i in scored].index(held)))
    return ranks


def naive_metrics(ranks, k):
    hr = sum(1 for r in ranks if r <= k) / len(ranks)
    ndcg = sum(1 / math.log2(r + 1) for r in ranks if r <= k) / len(ranks)
    return hr, ndcg
