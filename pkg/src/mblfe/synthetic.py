"""Synthetic multi-behavior data for tests, gradient checks and the recovery experiment."""
from __future__ import annotations

import numpy as np

from .dataset import from_records


def random_instance(num_users=10, num_items=15, behaviors=("click", "cart", "buy"),
                    interactions=80, seed=0):
    """Uniformly random interactions; the last behavior is the target."""
    rng = np.random.default_rng(seed)
    recs = np.stack([rng.integers(num_users, size=interactions),
                     rng.integers(num_items, size=interactions),
                     rng.integers(len(behaviors), size=interactions)], axis=1)
    return from_records(recs, num_users, num_items, list(behaviors), behaviors[-1])


def planted_factor_instance(num_users=200, num_items=100, num_factors=4, seed=0,
                            click_rate=0.8, cart_rate=0.4, buy_rate=0.4):
    """Interactions driven by orthogonal planted factors.

    Every item belongs to one factor (a one-hot item vector); every user spreads
    unit interest over 1-3 factors. The chance of an interaction in each behavior
    is a behavior rate times the user-item alignment times an item popularity
    multiplier in [0.5, 1.5]. Carts are a subset of clicks; purchases are drawn
    independently from the same alignment.

    Returns ``(dataset, user_interest, item_factor)``.
    """
    rng = np.random.default_rng(seed)
    item_factor = np.arange(num_items) % num_factors
    rng.shuffle(item_factor)
    popularity = rng.uniform(0.5, 1.5, size=num_items)
    interest = np.zeros((num_users, num_factors))
    for u in range(num_users):
        n = rng.integers(1, 4)
        chosen = rng.choice(num_factors, size=n, replace=False)
        w = rng.dirichlet(np.ones(n))
        interest[u, chosen] = w
    align = interest[:, item_factor] * popularity[None, :]

    click = rng.random(align.shape) < np.clip(click_rate * align, 0, 1)
    cart = click & (rng.random(align.shape) < cart_rate)
    buy = rng.random(align.shape) < np.clip(buy_rate * align, 0, 1)
    recs = []
    for b, mat in enumerate((click, cart, buy)):
        u, i = np.nonzero(mat)
        recs.append(np.stack([u, i, np.full(len(u), b)], axis=1))
    ds = from_records(np.concatenate(recs), num_users, num_items, ["click", "cart", "buy"], "buy")
    return ds, interest, item_factor


def write_interactions(dataset, path):
    """Write a dataset in the tab-separated ingest format (ids are the indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in dataset.behaviors:
            for u, i in m.pairs().tolist():
                fh.write(f"u{u}\ti{i}\t{m.name}\n")
