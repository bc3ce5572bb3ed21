from __future__ import annotations

from collections import defaultdict

import numpy as np

from .tape import Tape


def _loss_value(loss_builder, store):
    loss = loss_builder(Tape(store))
    val = float(np.asarray(loss.value))
    if not np.isfinite(val):
        raise FloatingPointError(f"non-finite loss during gradient check: {val}")
    return val


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||); defined as 0 when both are exactly zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def grad_check(loss_builder, store, eps=1e-3, max_coords=10_000, seed=0, names=None,
               return_details=False):
    """Compare tape gradients against central differences.

    ``loss_builder(tape)`` must build the scalar loss deterministically from the
    parameters reachable through ``tape.param``; gate noise and samples have to
    be frozen by the caller. Every coordinate is perturbed unless the total
    exceeds ``max_coords``, in which case a seeded subset is used.

    The error of one parameter tensor is the norm-wise relative error over its
    checked coordinates; the maximum over tensors is returned. Per-coordinate
    ``(name, index, analytic, numeric)`` rows are available via ``return_details``.
    """
    names = store.names() if names is None else list(names)
    store.zero_grads()
    tape = Tape(store)
    loss = loss_builder(tape)
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("non-finite loss during gradient check")
    tape.backward(loss)
    analytic = {n: store.grads[n].copy() for n in names}

    coords = [(n, idx) for n in names for idx in np.ndindex(store[n].shape)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in np.sort(pick)]

    per_param = defaultdict(lambda: ([], []))
    details = []
    for name, idx in coords:
        p = store[name]
        orig = p[idx].copy()
        p[idx] = orig + eps
        plus = _loss_value(loss_builder, store)
        p[idx] = orig - eps
        minus = _loss_value(loss_builder, store)
        p[idx] = orig
        numeric = (plus - minus) / (2 * eps)
        a = float(analytic[name][idx])
        per_param[name][0].append(a)
        per_param[name][1].append(numeric)
        details.append((name, idx, a, numeric))
    worst = max((relative_error(a, n) for a, n in per_param.values()), default=0.0)
    if return_details:
        return worst, details
    return worst
