"""``key = value`` run configuration: training options, data paths and behavior roster."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .numerics.params import ConfigError
from .recommender import TrainingConfig

RUN_KEYS = {"data", "behaviors", "target", "output_dir", "split_seed"}


@dataclass
class RunConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: Path | None = None
    behaviors: list = field(default_factory=list)
    target: str | None = None
    output_dir: Path = Path(".")
    split_seed: int | None = None

    @property
    def resolved_split_seed(self):
        return self.training.seed if self.split_seed is None else self.split_seed

    @property
    def test_path(self):
        return self.output_dir / "test.tsv"

    @property
    def snapshot_path(self):
        return self.output_dir / "model.ckpt"

    def to_dict(self):
        return {"training": self.training.to_dict(), "data": str(self.data),
                "behaviors": list(self.behaviors), "target": self.target,
                "output_dir": str(self.output_dir), "split_seed": self.resolved_split_seed}


def parse_lines(lines):
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides=None):
    values = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        base = path.parent
        with open(path, encoding="utf-8") as fh:
            values = parse_lines(fh)
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    run = {k: values.pop(k) for k in list(values) if k in RUN_KEYS}
    cfg = RunConfig(training=TrainingConfig.from_dict(values))
    if "data" in run:
        cfg.data = base / run["data"]
    if "behaviors" in run:
        cfg.behaviors = [b.strip() for b in run["behaviors"].split(",") if b.strip()]
    cfg.target = run.get("target")
    if cfg.target is not None and cfg.behaviors and cfg.target not in cfg.behaviors:
        raise ConfigError(f"target {cfg.target!r} not among behaviors {cfg.behaviors}")
    cfg.output_dir = base / run.get("output_dir", ".")
    if "split_seed" in run:
        cfg.split_seed = int(run["split_seed"])
    return cfg
