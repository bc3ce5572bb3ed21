from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """Named dense parameters, each paired with a same-shape gradient slot.

    ``dtype`` is float32 for training; float64 is used by the finite
    difference oracles.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam: dict[str, AdamState] = {}

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=self.dtype, copy=True)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self.params[name]

    def __setitem__(self, name, value):
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != self.params[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {self.params[name].shape}")
        self.params[name][...] = arr

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def items(self):
        return self.params.items()

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0)

    def num_coordinates(self):
        return int(np.sum([p.size for p in self.params.values()]))

    def squared_norm(self):
        return float(np.sum([np.sum(np.square(p, dtype=np.float64)) for p in self.params.values()]))

    def copy(self, dtype=None):
        other = ParamStore(self.dtype if dtype is None else dtype)
        for name, p in self.params.items():
            other.add(name, p)
        for name, st in self.adam.items():
            other.adam[name] = AdamState(st.m.astype(other.dtype), st.v.astype(other.dtype), st.step)
        return other


def init_normal(store, name, shape, rng, std=0.01):
    return store.add(name, rng.normal(0.0, std, size=shape))


def init_xavier_uniform(store, name, shape, rng):
    fan_out, fan_in = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return store.add(name, rng.uniform(-bound, bound, size=shape))


def init_zeros(store, name, shape):
    return store.add(name, np.zeros(shape))


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update applied in place to every parameter."""
    # lr == 0 is allowed as a frozen step (parameters provably unchanged)
    if not np.isfinite(lr) or lr < 0:
        raise ConfigError(f"learning rate must be non-negative and finite, got {lr}")
    dt = store.dtype
    for name, p in store.params.items():
        g = store.grads[name]
        st = store.adam.get(name)
        if st is None:
            st = store.adam[name] = AdamState(np.zeros_like(p), np.zeros_like(p))
        st.step += 1
        st.m *= dt.type(beta1)
        st.m += dt.type(1 - beta1) * g
        st.v *= dt.type(beta2)
        st.v += dt.type(1 - beta2) * g * g
        m_hat = st.m / dt.type(1 - beta1 ** st.step)
        v_hat = st.v / dt.type(1 - beta2 ** st.step)
        p -= dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(eps))
