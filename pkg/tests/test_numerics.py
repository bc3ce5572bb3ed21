import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mblfe.numerics import (ConfigError, ParamStore, Tape, TapeError, adam_step, grad_check,
                            sigmoid, softmax, softplus, tanh_act)
from mblfe.numerics import tape as T

finite = st.floats(-50, 50, allow_nan=False, width=64)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([1000.0, 1000.0, 1000.0]), [1 / 3] * 3)
    # e / (e + 1)
    np.testing.assert_allclose(softmax([1.0, 0.0]), [0.7310585786300049, 0.2689414213699951], rtol=1e-12)
    with pytest.raises(ValueError):
        softmax([])


@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_simplex_and_shift_invariance(x, c):
    p = softmax(x)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-6
    np.testing.assert_allclose(softmax(x + c), p, atol=1e-6)
    assert abs(p.mean() - 1 / len(x)) < 1e-6 / len(x)


def test_softplus_and_activations():
    assert softplus(0.0) == pytest.approx(math.log(2))
    assert softplus(100.0) == pytest.approx(100.0)
    assert 0 < softplus(-100.0) < 1e-40
    assert tanh_act(0.0) == 0.0
    assert sigmoid(0.0) == 0.5
    assert tanh_act(0.5) == pytest.approx(0.46211715726000974, abs=1e-12)


@given(finite, finite)
def test_softplus_monotone(a, b):
    lo, hi = sorted((a, b))
    assert softplus(lo) <= softplus(hi)


def test_backward_square():
    store = ParamStore(np.float64)
    store.add("x", [3.0])
    tape = Tape(store)
    x = tape.param("x")
    tape.backward(T.sum(x * x))
    assert store.grads["x"][0] == 6.0


def test_backward_sum_softmax_is_zero():
    store = ParamStore(np.float64)
    store.add("x", [0.3, -1.2, 2.0])
    tape = Tape(store)
    tape.backward(T.sum(T.softmax(tape.param("x"), axis=0)))
    assert np.all(np.abs(store.grads["x"]) < 1e-15)


def test_double_backward_is_error():
    store = ParamStore(np.float64)
    store.add("x", [1.0])
    tape = Tape(store)
    loss = T.sum(tape.param("x") * 2.0)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_untouched_parameter_keeps_zero_grad():
    store = ParamStore(np.float64)
    store.add("a", [1.0, 2.0])
    store.add("b", [5.0])
    tape = Tape(store)
    tape.backward(T.square_sum(tape.param("a")))
    assert np.all(store.grads["b"] == 0)


def _composite_store(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore(np.float64)
    store.add("W1", rng.normal(size=(5, 4)))
    store.add("b1", rng.normal(size=5))
    store.add("W2", rng.normal(size=(3, 5)))
    store.add("W3", rng.normal(size=(2, 3)))
    x = rng.normal(size=(6, 4))
    return store, x


def _composite_loss(x):
    def build(tape):
        h = T.tanh(T.matmul(x, T.transpose(tape.param("W1"))) + tape.param("b1"))
        g = T.softplus(T.matmul(h, T.transpose(tape.param("W2"))))
        z = T.softmax(T.matmul(g, T.transpose(tape.param("W3"))), axis=1)
        return T.mean(T.log_sigmoid(T.sum(z * z, axis=1) - 0.3)) + T.logsumexp(T.sum(g, axis=0), axis=0)
    return build


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_three_layer_composite_matches_finite_differences(seed):
    store, x = _composite_store(seed)
    assert grad_check(_composite_loss(x), store, eps=1e-3) < 1e-4


def test_backward_is_linear():
    store, x = _composite_store(7)
    build = _composite_loss(x)

    def grads(fn):
        store.zero_grads()
        tape = Tape(store)
        tape.backward(fn(tape))
        return {k: v.copy() for k, v in store.grads.items()}

    g1 = grads(build)
    g2 = grads(lambda tape: T.square_sum(tape.param("W2")))
    g12 = grads(lambda tape: build(tape) * 2.5 + T.square_sum(tape.param("W2")) * -0.5)
    for k in g1:
        np.testing.assert_allclose(g12[k], 2.5 * g1[k] - 0.5 * g2[k], atol=1e-6)


def test_einsum_and_take_gradients():
    rng = np.random.default_rng(3)
    store = ParamStore(np.float64)
    store.add("A", rng.normal(size=(4, 3, 2)))
    store.add("B", rng.normal(size=(2, 5)))
    idx = np.array([0, 2, 2, 3])

    def build(tape):
        A = T.take(tape.param("A"), idx)
        out = T.einsum("nkd,de->nke", A, tape.param("B"))
        sims = T.einsum("ajd,bkd->abjk", A, A)
        diag = np.arange(3)
        return T.mean(T.tanh(out)) + T.mean(T.take(sims, (slice(None), slice(None), diag, diag)))

    assert grad_check(build, store) < 1e-6


def test_grad_check_quadratic_and_independent_parameter():
    store = ParamStore(np.float64)
    store.add("x", [1.0, -2.0, 0.5])
    store.add("unused", [4.0])
    assert grad_check(lambda tape: T.square_sum(tape.param("x")) * 0.5, store) < 1e-6
    assert grad_check(lambda tape: T.square_sum(tape.param("x")), store, names=["unused"]) == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    store = ParamStore(np.float64)
    store.add("x", [0.0])
    with pytest.raises(FloatingPointError):
        grad_check(lambda tape: T.log(tape.param("x") * 0.0), store)


def test_adam_first_step_moves_by_lr():
    store = ParamStore(np.float64)
    store.add("w", [1.0, -1.0])
    store.grads["w"][:] = [0.5, -3.0]
    adam_step(store, lr=0.01)
    # m_hat / sqrt(v_hat) = g / |g| on the first step
    np.testing.assert_allclose(store["w"], [0.99, -0.99], atol=1e-7)
    assert store.adam["w"].step == 1


def test_adam_zero_grad_is_identity_and_lr_validation():
    store = ParamStore(np.float32)
    store.add("w", np.arange(6, dtype=np.float32).reshape(2, 3))
    before = store["w"].copy()
    for _ in range(3):
        adam_step(store, lr=0.1)
    assert np.array_equal(store["w"], before)
    with pytest.raises(ConfigError):
        adam_step(store, lr=-1e-3)


def test_adam_deterministic():
    def run():
        store = ParamStore(np.float32)
        store.add("w", np.random.default_rng(0).normal(size=(3, 3)))
        grng = np.random.default_rng(1)
        for _ in range(10):
            store.grads["w"][:] = grng.normal(size=(3, 3))
            adam_step(store, 1e-2)
        return store["w"].tobytes()

    assert run() == run()


def test_zero_grads():
    store = ParamStore()
    store.add("w", np.ones((2, 2)))
    store.grads["w"] += 3
    store.zero_grads()
    assert np.all(store.grads["w"] == 0)
