"""Command-line entry point: ingest, train, evaluate, stats, export-factors, grad-check."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .dataset import (apply_split, leave_one_out_split, load_interactions, read_test_file,
                      write_test_file)
from .evaluation import evaluate, export_factors, selection_stats, write_gate_dump
from .numerics import grad_check
from .recommender import MBLFE, TrainingConfig, init_params, load_snapshot, sample_epoch, train

log = logging.getLogger("mblfe")


def _echo(cfg, extra=None):
    payload = cfg.to_dict()
    payload.update(extra or {})
    print("# config " + json.dumps(payload, sort_keys=True), file=sys.stderr)


def _need_data(cfg):
    if cfg.data is None or not cfg.behaviors or cfg.target is None:
        raise SystemExit("config must define data, behaviors and target")


def _split(cfg, write=True):
    """Load the interaction file and apply the persisted split (creating it if absent)."""
    _need_data(cfg)
    ds = load_interactions(cfg.data, cfg.behaviors, cfg.target)
    if cfg.test_path.exists():
        test = read_test_file(cfg.test_path)
        return ds, apply_split(ds, test), test
    train_ds, test = leave_one_out_split(ds, cfg.resolved_split_seed)
    if write:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        write_test_file(test, cfg.test_path)
    return ds, train_ds, test


def _load_model(cfg, snapshot_path):
    _, train_ds, test = _split(cfg, write=False)
    snap = load_snapshot(snapshot_path or cfg.snapshot_path, cfg.training)
    if (snap.num_users, snap.num_items) != (train_ds.num_users, train_ds.num_items):
        raise SystemExit(f"snapshot covers {snap.num_users} users x {snap.num_items} items, "
                         f"data has {train_ds.num_users} x {train_ds.num_items}")
    return MBLFE(snap.config, train_ds, snap.store), train_ds, test


def cmd_ingest(cfg, args):
    ds, train_ds, test = _split(cfg)
    summary = {"users": ds.num_users, "items": ds.num_items,
               "interactions": {m.name: len(m) for m in ds.behaviors},
               "test_users": len(test), "test_file": str(cfg.test_path)}
    print(json.dumps(summary, sort_keys=True))


def cmd_train(cfg, args):
    _, train_ds, test = _split(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output_dir / "train_log.tsv"
    log_path.write_text("")
    model = MBLFE(cfg.training, train_ds)
    train(model, log_path=log_path, snapshot_path=cfg.snapshot_path,
          split_seed=cfg.resolved_split_seed)
    print(json.dumps({"snapshot": str(cfg.snapshot_path), "log": str(log_path)}))


def cmd_evaluate(cfg, args):
    model, train_ds, test = _load_model(cfg, args.snapshot)
    cutoffs = args.cutoffs or cfg.training.cutoffs
    result = evaluate(model.inference(), test, train_ds, cutoffs)
    result.write(cfg.output_dir / "metrics.json", cfg.output_dir / "ranks.tsv")
    print("\n".join(result.metric_lines()))


def cmd_stats(cfg, args):
    model, _, _ = _load_model(cfg, args.snapshot)
    inf = model.inference()
    stats = selection_stats(inf)
    (cfg.output_dir / "selection_stats.tsv").write_text("\n".join(stats.lines()) + "\n")
    write_gate_dump(inf, cfg.output_dir / "gates.tsv")
    print("\n".join(stats.lines()))


def cmd_export_factors(cfg, args):
    model, _, _ = _load_model(cfg, args.snapshot)
    out = cfg.output_dir / "factors.tsv"
    users = export_factors(model.inference(), args.sample, cfg.training.seed, out)
    print(json.dumps({"path": str(out), "users": len(users),
                      "rows": len(users) * cfg.training.num_experts}))


def cmd_grad_check(cfg, args):
    from .synthetic import random_instance

    training = cfg.training
    if cfg.data is not None:
        _, train_ds, _ = _split(cfg, write=False)
    else:
        train_ds = random_instance(seed=training.seed)
        if args.config is None:
            training = TrainingConfig(dim=8, num_experts=4, layers=2, gamma=1e-3, seed=training.seed)
    store = init_params(training, train_ds.num_users, train_ds.num_items, np.float64)
    model = MBLFE(training, train_ds, store)
    batch = sample_epoch(train_ds, training, np.random.default_rng(training.seed))[0]
    noise = np.random.default_rng(training.seed + 1).standard_normal(
        (len(batch.gate_users()), training.num_experts))
    err = grad_check(lambda tape: model.losses(tape, batch, train_mode=True, noise=noise)["total"],
                     store, eps=args.eps, max_coords=args.max_coords)
    ok = err < args.tolerance
    print(json.dumps({"max_relative_error": err, "tolerance": args.tolerance, "pass": ok}))
    if not ok:
        raise SystemExit(1)


def _cutoffs(text):
    return tuple(int(k) for k in text.split(","))


def build_parser():
    parser = argparse.ArgumentParser(prog="mblfe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.set_defaults(fn=fn)
        return p

    add("ingest", cmd_ingest, "load interactions and persist the leave-one-out split")
    add("train", cmd_train, "train and write model.ckpt + train_log.tsv")
    for name, fn, help_text in (("evaluate", cmd_evaluate, "HR@k / NDCG@k on the held-out items"),
                                ("stats", cmd_stats, "expert-selection histogram and gate dump"),
                                ("export-factors", cmd_export_factors, "dump sampled user factors")):
        p = add(name, fn, help_text)
        p.add_argument("--snapshot", type=Path)
        if name == "evaluate":
            p.add_argument("--cutoffs", type=_cutoffs)
        if name == "export-factors":
            p.add_argument("--sample", type=int, default=500)
    p = add("grad-check", cmd_grad_check, "finite-difference check of the full objective (float64)")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=10_000)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, {"seed": args.seed})
    _echo(cfg, {"command": args.command})
    args.fn(cfg, args)


if __name__ == "__main__":
    main()
