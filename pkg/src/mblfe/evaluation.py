"""Leave-one-out full-ranking evaluation, expert-selection statistics, factor export."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .numerics.params import ConfigError


def rank_from_scores(scores, held_item, excluded=()):
    """1-based position of ``held_item`` among non-excluded items.

    Sorted by descending score, ties broken by ascending item index.
    """
    scores = np.asarray(scores)
    cand = np.ones(len(scores), dtype=bool)
    cand[np.asarray(list(excluded), dtype=np.int64)] = False
    if not cand[held_item]:
        raise ValueError(f"held item {held_item} is excluded from the candidates")
    s = scores[held_item]
    better = np.count_nonzero(cand & (scores > s))
    tied_before = np.count_nonzero(cand[:held_item] & (scores[:held_item] == s))
    return int(1 + better + tied_before)


def rank_held_out(scorer, user, held_item, train_items):
    """Rank of the held-out item for one user; ``scorer.scores`` gives full score rows."""
    scores = _score_rows(scorer, np.array([user]))[0]
    return rank_from_scores(scores, held_item, train_items)


def hr_at_k(rank, k):
    if k <= 0:
        raise ConfigError(f"cutoff must be positive, got {k}")
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1 if rank <= k else 0


def ndcg_at_k(rank, k):
    # single relevant item: IDCG = 1
    return 1.0 / math.log2(rank + 1) if hr_at_k(rank, k) else 0.0


@dataclass
class EvalResult:
    cutoffs: tuple
    hr: dict
    ndcg: dict
    ranks: list = field(default_factory=list)   # (user, item, rank)

    @property
    def num_users(self):
        return len(self.ranks)

    def metric_lines(self):
        return [json.dumps({"cutoff": k, "hr": self.hr[k], "ndcg": self.ndcg[k]}) for k in self.cutoffs]

    def write(self, metrics_path, ranks_path=None):
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.metric_lines()) + "\n")
        if ranks_path is not None:
            with open(ranks_path, "w", encoding="utf-8") as fh:
                for u, i, r in self.ranks:
                    fh.write(f"{u}\t{i}\t{r}\n")


def _score_rows(scorer, users):
    fn = scorer.scores if hasattr(scorer, "scores") else scorer
    return np.asarray(fn(users))


def metrics_from_ranks(ranks, cutoffs):
    n = len(ranks)
    hr = {k: math.fsum(hr_at_k(r, k) for r in ranks) / n for k in cutoffs}
    ndcg = {k: math.fsum(ndcg_at_k(r, k) for r in ranks) / n for k in cutoffs}
    return hr, ndcg


def evaluate(scorer, test, train_dataset, cutoffs=(10, 20), batch_size=256):
    """Average HR@k / NDCG@k over the held-out pairs.

    Candidates are all items minus the user's target-behavior training items.
    ``scorer`` is an :class:`~mblfe.recommender.Inference` or any callable
    mapping a user index array to a (B, |I|) score matrix.
    """
    if not test:
        raise ValueError("empty test set")
    cutoffs = tuple(int(k) for k in cutoffs)
    if min(cutoffs) <= 0:
        raise ConfigError(f"cutoffs must be positive, got {cutoffs}")
    test = sorted(test)
    target = train_dataset.target
    ranks = []
    for start in range(0, len(test), batch_size):
        chunk = test[start:start + batch_size]
        rows = _score_rows(scorer, np.array([u for u, _ in chunk]))
        for (u, i), row in zip(chunk, rows):
            ranks.append((u, i, rank_from_scores(row, i, target.user_adj[u])))
    hr, ndcg = metrics_from_ranks([r for *_, r in ranks], cutoffs)
    return EvalResult(cutoffs, hr, ndcg, ranks)


def popularity_scorer(train_dataset, behavior=None):
    """Scores every item by its interaction count in one behavior (target by default)."""
    m = train_dataset.target if behavior is None else train_dataset.behaviors[behavior]
    counts = m.item_counts.astype(np.float64)
    return lambda users: np.tile(counts, (len(users), 1))


@dataclass
class SelectionStats:
    histogram: dict          # selected-expert count -> number of users
    expert_usage: np.ndarray  # users selecting each expert
    num_experts: int

    @property
    def num_users(self):
        return sum(self.histogram.values())

    @property
    def mode(self):
        return max(sorted(self.histogram), key=lambda c: self.histogram[c])

    def lines(self):
        return [f"{c}\t{self.histogram.get(c, 0)}" for c in range(1, self.num_experts + 1)]


def selection_stats(inference, users=None, batch_size=1024):
    """Eval-mode gate for every user: histogram of |S| and per-expert usage."""
    n_users = inference.p_tilde.shape[0]
    users = np.arange(n_users) if users is None else np.asarray(users)
    hist = Counter()
    usage = np.zeros(inference.num_experts, dtype=np.int64)
    for start in range(0, len(users), batch_size):
        sel = inference.gate(users[start:start + batch_size]).selected
        hist.update(sel.sum(axis=1).tolist())
        usage += sel.sum(axis=0)
    return SelectionStats(dict(sorted(hist.items())), usage, inference.num_experts)


def write_gate_dump(inference, path, users=None):
    n_users = inference.p_tilde.shape[0]
    users = np.arange(n_users) if users is None else np.asarray(users)
    sel = inference.gate(users).selected
    with open(path, "w", encoding="utf-8") as fh:
        for u, row in zip(users.tolist(), sel):
            idx = np.flatnonzero(row).tolist()
            fh.write(f"{u}\t{len(idx)}\t{','.join(map(str, idx))}\n")


def export_factors(inference, sample_size, seed, path):
    """Raw (pre-gating) expert outputs for a seeded user sample.

    One row per (user, expert): ``<expert>\\t<comma-separated components>``.
    Returns the sampled user indices.
    """
    n_users = inference.p_tilde.shape[0]
    rng = np.random.default_rng(seed)
    users = np.sort(rng.choice(n_users, size=min(sample_size, n_users), replace=False))
    factors = inference.raw_user_factors(users)
    with open(path, "w", encoding="utf-8") as fh:
        for row in factors:
            for k, vec in enumerate(row):
                fh.write(f"{k}\t{','.join(format(float(v), '.9g') for v in vec)}\n")
    return users
