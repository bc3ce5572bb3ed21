import json

import pytest

from mblfe.cli import main
from mblfe.dataset import read_test_file
from mblfe.synthetic import random_instance, write_interactions


@pytest.fixture
def workspace(tmp_path):
    ds = random_instance(num_users=15, num_items=20, interactions=150, seed=4)
    write_interactions(ds, tmp_path / "data.tsv")
    (tmp_path / "run.cfg").write_text(
        "# tiny run\n"
        "data = data.tsv\n"
        "behaviors = click, cart, buy\n"
        "target = buy\n"
        "output_dir = out\n"
        "dim = 8\nnum_experts = 4\nlayers = 2\nepochs = 3\nbatch_size = 16\nlr = 0.01\n"
        "seed = 3\n")
    return tmp_path


def _run(capsys, *argv):
    main(list(argv))
    return capsys.readouterr()


def test_full_pipeline(workspace, capsys):
    cfg = str(workspace / "run.cfg")
    out = workspace / "out"
    res = _run(capsys, "ingest", "--config", cfg)
    summary = json.loads(res.out)
    assert summary["users"] == 15 and (out / "test.tsv").exists()
    assert "# config" in res.err

    _run(capsys, "train", "--config", cfg)
    log = (out / "train_log.tsv").read_text().splitlines()
    assert len(log) == 3 and (out / "model.ckpt").exists()

    res = _run(capsys, "evaluate", "--config", cfg, "--cutoffs", "5,10")
    lines = [json.loads(line) for line in res.out.splitlines()]
    assert [d["cutoff"] for d in lines] == [5, 10]
    assert (out / "metrics.json").read_text().splitlines() == res.out.splitlines()
    ranks = (out / "ranks.tsv").read_text().splitlines()
    assert len(ranks) == len(read_test_file(out / "test.tsv"))

    res = _run(capsys, "stats", "--config", cfg)
    hist = [line.split("\t") for line in (out / "selection_stats.tsv").read_text().splitlines()]
    assert [int(c) for c, _ in hist] == [1, 2, 3, 4]
    assert sum(int(n) for _, n in hist) == 15
    assert len((out / "gates.tsv").read_text().splitlines()) == 15

    res = _run(capsys, "export-factors", "--config", cfg, "--sample", "10")
    assert json.loads(res.out)["rows"] == 40
    assert len((out / "factors.tsv").read_text().splitlines()) == 40


def test_split_is_reused(workspace, capsys):
    cfg = str(workspace / "run.cfg")
    _run(capsys, "ingest", "--config", cfg)
    first = (workspace / "out" / "test.tsv").read_bytes()
    _run(capsys, "ingest", "--config", cfg, "--seed", "99")
    assert (workspace / "out" / "test.tsv").read_bytes() == first


def test_seed_override_changes_training(workspace, capsys):
    cfg = str(workspace / "run.cfg")
    _run(capsys, "train", "--config", cfg)
    a = (workspace / "out" / "model.ckpt").read_bytes()
    _run(capsys, "train", "--config", cfg, "--seed", "4")
    assert (workspace / "out" / "model.ckpt").read_bytes() != a


def test_grad_check_default_instance(capsys):
    res = _run(capsys, "grad-check", "--max-coords", "300")
    payload = json.loads(res.out)
    assert payload["pass"] and payload["max_relative_error"] < 1e-4


def test_missing_data_config_exits(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("dim = 8\n")
    with pytest.raises(SystemExit):
        main(["train", "--config", str(tmp_path / "c.cfg")])


def test_bad_config_key_rejected(tmp_path):
    (tmp_path / "c.cfg").write_text("dimension = 8\n")
    with pytest.raises(ValueError):
        main(["ingest", "--config", str(tmp_path / "c.cfg")])
