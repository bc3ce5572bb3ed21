import math
from types import SimpleNamespace

import numpy as np
import pytest

from mblfe import moe
from mblfe.numerics import CheckpointError, ConfigError, ParamStore, Tape, grad_check
from mblfe.recommender import (LOG_FIELDS, MBLFE, PROJECTION, TrainingConfig, init_params,
                               load_snapshot, param_shapes, project_factor, rec_loss,
                               sample_epoch, save_snapshot, score, total_loss, train)


def _factors(rows, selected=None):
    rows = np.asarray(rows, dtype=float)
    gate = None if selected is None else SimpleNamespace(selected=np.asarray(selected, dtype=bool))
    return moe.FactorSet(0, rows, gate)


def test_project_factor_example():
    out = project_factor(np.array([1.0, 1.0]), np.array([[1.0, 0.0], [1.0, 1.0]]))
    np.testing.assert_array_equal(out, [2.0, 1.0])


def test_score_examples():
    u = _factors([[1, 1], [5, 5]], [True, False])
    i = _factors([[1, 1], [7, 7]])
    assert score(u, i, np.eye(2)) == pytest.approx(2.0)
    u = _factors([[0.5, 0.0], [0.0, 1.0]], [True, True])
    i = _factors([[0.2, 0.0], [0.0, 0.2]])
    assert score(u, i, np.eye(2)) == pytest.approx(0.3)


def test_score_ignores_unselected_experts():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(3, 4))
    i = rng.normal(size=(3, 4))
    W = rng.normal(size=(4, 4))
    base = score(_factors(u, [True, False, True]), _factors(i), W)
    i2 = i.copy(); i2[1] = 100.0
    u2 = u.copy(); u2[1] = -100.0
    assert score(_factors(u2, [True, False, True]), _factors(i2), W) == base


def test_rec_loss_values():
    assert float(rec_loss(np.array([0.0]), np.array([0.0])).value) == pytest.approx(math.log(2))
    assert float(rec_loss(np.array([1.0]), np.array([0.0])).value) == pytest.approx(0.31326168751822286)
    assert float(rec_loss(np.array([40.0]), np.array([0.0])).value) < 1e-15


def test_total_loss_examples():
    store = ParamStore(np.float64)
    store.add("w", np.array([1.0, 2.0, 2.0]))
    tape = Tape(store)
    assert float(total_loss(0.0, 0.0, 0.0, 1.0, tape).value) == pytest.approx(9.0)
    assert float(total_loss(0.5, 0.5, 0.5, 0.0, Tape(store)).value) == pytest.approx(1.5)
    with pytest.raises(FloatingPointError):
        total_loss(float("nan"), 0.0, 0.0, 0.0, Tape(store))


def test_regularizer_gradient_is_two_gamma_theta():
    store = ParamStore(np.float64)
    store.add("w", np.array([1.0, -3.0]))
    tape = Tape(store)
    tape.backward(total_loss(0.0, 0.0, 0.0, 0.5, tape))
    np.testing.assert_allclose(store.grads["w"], [1.0, -3.0])


def test_config_validation():
    for bad in ({"dim": 7, "num_experts": 2}, {"num_experts": 1}, {"layers": 0}, {"tau": 0.0},
                {"alpha": 1.0}, {"lr": -1.0}, {"gamma": -1.0}, {"batch_size": 0}):
        with pytest.raises(ConfigError):
            TrainingConfig(**bad)
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"bogus": "1"})
    cfg = TrainingConfig.from_dict({"d": "16", "K": "4", "L": "3"})
    assert (cfg.dim, cfg.num_experts, cfg.layers) == (16, 4, 3)
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


def test_param_shapes(tiny_config):
    shapes = param_shapes(tiny_config, 10, 15)
    assert shapes["P"] == (10, 8) and shapes["Q"] == (15, 8)
    assert shapes[moe.GATE_W] == (4, 8) and shapes[PROJECTION] == (8, 8)
    assert shapes["expert3.W1"] == (4, 8) and shapes["expert3.W2"] == (8, 4)


def test_losses_are_finite_and_total_adds_up(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    model = MBLFE(tiny_config, train_ds, init_params(tiny_config, 10, 15, np.float64))
    batch = sample_epoch(train_ds, tiny_config, np.random.default_rng(0))[0]
    parts = model.losses(Tape(model.store), batch, rng=np.random.default_rng(1))
    vals = {k: float(v.value) for k, v in parts.items()}
    assert all(np.isfinite(v) for v in vals.values())
    assert vals["L_net"] == pytest.approx(vals["L_log"] + tiny_config.alpha * vals["L_nce"])
    reg = sum(float(np.sum(p.astype(np.float64) ** 2)) for _, p in model.store.items())
    expect = vals["L_enh"] + vals["L_net"] + vals["L_rec"] + tiny_config.gamma * reg
    assert vals["total"] == pytest.approx(expect, rel=1e-10)


def test_sample_epoch_covers_target_triples(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    batches = sample_epoch(train_ds, tiny_config, np.random.default_rng(0))
    assert len(batches) == math.ceil(len(train_ds.target) / tiny_config.batch_size)
    n = sum(len(b.target) for b in batches)
    assert n == len(train_ds.target)
    for b in batches:
        for u, p, j in b.target.tolist():
            assert (u, p) in train_ds.target and (u, j) not in train_ds.target


def test_model_rejects_store_of_wrong_shape(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    store = init_params(tiny_config, 11, 15)
    with pytest.raises(CheckpointError):
        MBLFE(tiny_config, train_ds, store)


def test_inference_scores_match_per_entity_scoring(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    store = init_params(tiny_config, 10, 15, np.float64, seed=3)
    for name, p in store.items():
        store[name] = p * 30 if name in ("P", "Q") else p
    inf = MBLFE(tiny_config, train_ds, store).inference()
    users = np.arange(10)
    S = inf.scores(users)
    for u in users:
        uf = moe.extract_user_factors(inf.p_tilde[u], store, 4)
        for i in range(15):
            itf = moe.extract_item_factors(inf.q_tilde[i], store, 4)
            assert S[u, i] == pytest.approx(score(uf, itf, store[PROJECTION]), rel=1e-9, abs=1e-15)


def test_zero_lr_leaves_parameters_bit_identical(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    cfg = TrainingConfig(**{**tiny_config.to_dict(), "lr": 0.0})
    model = MBLFE(cfg, train_ds)
    before = model.store.copy()
    train(model, epochs=2)
    for name, p in before.items():
        assert np.array_equal(p, model.store[name]), name


def test_training_is_deterministic_and_loss_falls(tiny_split, tiny_config, tmp_path):
    train_ds, _ = tiny_split
    runs = []
    for tag in "ab":
        model = MBLFE(tiny_config, train_ds)
        hist = train(model, log_path=tmp_path / f"{tag}.tsv", snapshot_path=tmp_path / f"{tag}.ckpt")
        runs.append(hist)
    assert runs[0] == runs[1]
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    totals = [h["total"] for h in runs[0]]
    assert totals[-1] < totals[0]
    lines = (tmp_path / "a.tsv").read_text().splitlines()
    assert len(lines) == tiny_config.epochs and len(lines[0].split("\t")) == 1 + len(LOG_FIELDS)


def test_snapshot_round_trip(tiny_config, tmp_path):
    store = init_params(tiny_config, 10, 15)
    path = tmp_path / "m.ckpt"
    save_snapshot(store, tiny_config, path, epoch=3, split_seed=7)
    snap = load_snapshot(path)
    assert snap.config == tiny_config and snap.epoch == 3 and snap.split_seed == 7
    assert (snap.num_users, snap.num_items) == (10, 15)
    for name, p in store.items():
        assert np.array_equal(snap.store[name], p)
        assert snap.store[name].dtype == np.float32


def test_snapshot_truncated_is_an_error(tiny_config, tmp_path):
    path = tmp_path / "m.ckpt"
    save_snapshot(init_params(tiny_config, 10, 15), tiny_config, path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        load_snapshot(path)
    path.write_bytes(data[:4])
    with pytest.raises(CheckpointError):
        load_snapshot(path)


def test_snapshot_config_mismatch_names_parameter(tiny_config, tmp_path):
    path = tmp_path / "m.ckpt"
    save_snapshot(init_params(tiny_config, 10, 15), tiny_config, path)
    other = TrainingConfig(**{**tiny_config.to_dict(), "num_experts": 2})
    with pytest.raises(CheckpointError, match="gate.W_g"):
        load_snapshot(path, other)


def test_end_to_end_gradient_check(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    store = init_params(tiny_config, 10, 15, np.float64)
    model = MBLFE(tiny_config, train_ds, store)
    batch = sample_epoch(train_ds, tiny_config, np.random.default_rng(0))[0]
    noise = np.random.default_rng(1).standard_normal((len(batch.gate_users()), 4))
    err = grad_check(lambda tape: model.losses(tape, batch, noise=noise)["total"], store,
                     eps=1e-3, max_coords=400)
    assert err < 1e-4


def test_frozen_noise_is_reproducible(tiny_split, tiny_config):
    train_ds, _ = tiny_split
    store = init_params(tiny_config, 10, 15, np.float64)
    model = MBLFE(tiny_config, train_ds, store)
    batch = sample_epoch(train_ds, tiny_config, np.random.default_rng(0))[0]
    noise = np.random.default_rng(1).standard_normal((len(batch.gate_users()), 4))
    a = model.losses(Tape(store), batch, noise=noise)["total"].value
    b = model.losses(Tape(store), batch, noise=noise)["total"].value
    assert a == b
