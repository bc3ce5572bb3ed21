"""Multi-behavior interaction data: loading, leave-one-out splits and samplers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


class InteractionRecord(NamedTuple):
    user: int
    item: int
    behavior: int


class BprTriple(NamedTuple):
    user: int
    pos_item: int
    neg_item: int


class BehaviorMatrix:
    """Deduplicated binary user-item interactions for one behavior."""

    def __init__(self, behavior_id, num_users, num_items, pairs, name=None):
        self.behavior_id = behavior_id
        self.name = name if name is not None else str(behavior_id)
        self.num_users = num_users
        self.num_items = num_items
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= num_users:
                raise DataFormatError(f"behavior {self.name}: user index out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= num_items:
                raise DataFormatError(f"behavior {self.name}: item index out of range")
        keys = np.unique(pairs[:, 0] * num_items + pairs[:, 1]) if len(pairs) else np.zeros(0, np.int64)
        self.users = keys // num_items
        self.items = keys % num_items
        self._keys = set(keys.tolist())
        self.user_counts = np.bincount(self.users, minlength=num_users)
        self.item_counts = np.bincount(self.items, minlength=num_items)
        # users sorted, items sorted within each user
        bounds = np.concatenate([[0], np.cumsum(self.user_counts)])
        self.user_adj = [self.items[bounds[u]:bounds[u + 1]] for u in range(num_users)]
        order = np.lexsort((self.users, self.items))
        ibounds = np.concatenate([[0], np.cumsum(self.item_counts)])
        iu = self.users[order]
        self.item_adj = [iu[ibounds[i]:ibounds[i + 1]] for i in range(num_items)]

    def __len__(self):
        return len(self.users)

    def __contains__(self, pair):
        u, i = pair
        return int(u) * self.num_items + int(i) in self._keys

    def pairs(self):
        return np.stack([self.users, self.items], axis=1)

    def without(self, removed):
        """Copy with the given (user, item) pairs removed."""
        drop = {int(u) * self.num_items + int(i) for u, i in removed}
        keep = np.array([k not in drop for k in (self.users * self.num_items + self.items).tolist()],
                        dtype=bool)
        return BehaviorMatrix(self.behavior_id, self.num_users, self.num_items,
                              self.pairs()[keep], name=self.name)


@dataclass
class Dataset:
    num_users: int
    num_items: int
    behaviors: list[BehaviorMatrix]
    target_behavior: int
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        for m in self.behaviors:
            if (m.num_users, m.num_items) != (self.num_users, self.num_items):
                raise DataFormatError(f"behavior {m.name} does not share the user/item index space")
        if not 0 <= self.target_behavior < len(self.behaviors):
            raise DataFormatError(f"target behavior index {self.target_behavior} out of range")

    @property
    def num_behaviors(self):
        return len(self.behaviors)

    @property
    def target(self):
        return self.behaviors[self.target_behavior]

    @property
    def behavior_names(self):
        return [m.name for m in self.behaviors]

    def user_counts(self):
        """(num_users, M) matrix of per-behavior interaction counts."""
        return np.stack([m.user_counts for m in self.behaviors], axis=1)

    def item_counts(self):
        return np.stack([m.item_counts for m in self.behaviors], axis=1)

    def with_target(self, matrix):
        behaviors = list(self.behaviors)
        behaviors[self.target_behavior] = matrix
        return Dataset(self.num_users, self.num_items, behaviors, self.target_behavior,
                       self.user_ids, self.item_ids)


def from_records(records, num_users, num_items, behavior_names, target):
    """Build a Dataset from (user, item, behavior) index triples."""
    recs = np.asarray(list(records), dtype=np.int64).reshape(-1, 3)
    behaviors = []
    for b, name in enumerate(behavior_names):
        sel = recs[recs[:, 2] == b]
        behaviors.append(BehaviorMatrix(b, num_users, num_items, sel[:, :2], name=name))
    tidx = behavior_names.index(target) if isinstance(target, str) else int(target)
    return Dataset(num_users, num_items, behaviors, tidx,
                   [str(u) for u in range(num_users)], [str(i) for i in range(num_items)])


def load_interactions(path, behaviors: Sequence[str], target: str) -> Dataset:
    """Parse ``user<TAB>item<TAB>behavior`` lines; ids are reindexed densely in order of first appearance."""
    behaviors = list(behaviors)
    if target not in behaviors:
        raise DataFormatError(f"target behavior {target!r} not in roster {behaviors}")
    bidx = {name: k for k, name in enumerate(behaviors)}
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            u, i, b = (p.strip() for p in parts)
            if b not in bidx:
                raise DataFormatError(f"{path}:{lineno}: unknown behavior {b!r} (roster: {behaviors})")
            records.append((users.setdefault(u, len(users)), items.setdefault(i, len(items)), bidx[b]))
    if not records:
        raise DataFormatError(f"{path}: no interactions")
    ds = from_records(records, len(users), len(items), behaviors, target)
    ds.user_ids = list(users)
    ds.item_ids = list(items)
    return ds


def leave_one_out_split(dataset: Dataset, seed: int):
    """Hold out one uniformly chosen target interaction per user.

    Returns ``(train, test)`` where test is a list of (user, item) sorted by user.
    Auxiliary behaviors are untouched.
    """
    rng = np.random.default_rng(seed)
    target = dataset.target
    test = []
    for u in range(dataset.num_users):
        adj = target.user_adj[u]
        if len(adj) == 0:
            continue
        test.append((u, int(adj[rng.integers(len(adj))])))
    return apply_split(dataset, test), test


def apply_split(dataset: Dataset, test):
    """Remove persisted held-out pairs from the target behavior."""
    for u, i in test:
        if (u, i) not in dataset.target:
            raise DataFormatError(f"held-out pair ({u}, {i}) is not a target interaction")
    return dataset.with_target(dataset.target.without(test))


def write_test_file(test, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in test:
            fh.write(f"{u}\t{i}\n")


def read_test_file(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                u, i = line.split("\t")
                out.append((int(u), int(i)))
    return out


def _sample_negative(rng, num_items, interacted, member):
    """Uniform draw from items the user has not interacted with; None if there is none."""
    n_free = num_items - len(interacted)
    if n_free <= 0:
        return None
    if n_free * 4 >= num_items:
        while True:
            j = int(rng.integers(num_items))
            if not member(j):
                return j
    free = np.setdiff1d(np.arange(num_items), interacted, assume_unique=True)
    return int(free[rng.integers(len(free))])


def _positive_order(n, count, rng):
    # each positive once per pass, passes reshuffled
    if n == 0 or count == 0:
        return np.zeros(0, dtype=np.int64)
    reps = -(-count // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def sample_bpr_triples(matrix: BehaviorMatrix, count: int, rng) -> list[BprTriple]:
    """Draw ``count`` (user, positive, negative) triples within one behavior."""
    if count < 0:
        raise ValueError("count must be >= 0")
    out = []
    skipped = 0
    for k in _positive_order(len(matrix), count, rng):
        u, i = int(matrix.users[k]), int(matrix.items[k])
        j = _sample_negative(rng, matrix.num_items, matrix.user_adj[u], lambda j: (u, j) in matrix)
        if j is None:
            skipped += 1
            continue
        out.append(BprTriple(u, i, j))
    if skipped:
        log.warning("behavior %s: skipped %d positives of users with no unobserved items",
                    matrix.name, skipped)
    return out


def merged_positive_pairs(dataset: Dataset):
    keys = np.unique(np.concatenate(
        [m.users * dataset.num_items + m.items for m in dataset.behaviors]))
    return np.stack([keys // dataset.num_items, keys % dataset.num_items], axis=1)


def merged_interaction_set(dataset: Dataset, rng, negatives_per_positive=1):
    """Union of all behaviors as label-1 pairs plus sampled label-0 pairs.

    Negatives come from the complement of the union, so an item the user
    touched in any behavior is never labeled 0. Returns (users, items, labels).
    """
    pos = merged_positive_pairs(dataset)
    n_items = dataset.num_items
    keyset = set((pos[:, 0] * n_items + pos[:, 1]).tolist())
    counts = np.bincount(pos[:, 0], minlength=dataset.num_users)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    users, items, labels = [], [], []
    skipped = 0
    for u, i in pos.tolist():
        users.append(u)
        items.append(i)
        labels.append(1)
        interacted = pos[bounds[u]:bounds[u + 1], 1]
        for _ in range(negatives_per_positive):
            j = _sample_negative(rng, n_items, interacted, lambda j: u * n_items + j in keyset)
            if j is None:
                skipped += 1
                continue
            users.append(u)
            items.append(j)
            labels.append(0)
    if skipped:
        log.warning("merged set: %d negatives skipped for users with no unobserved items", skipped)
    return (np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64),
            np.asarray(labels, dtype=np.int64))
