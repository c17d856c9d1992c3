"""Run configuration files: strict-keyed YAML with a canonical content hash.

Every command stamps the hash of its resolved configuration into the files it
writes, so any report can be traced back to the exact settings that produced
it and reruns can be checked for bit-identity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .models import KINDS, ModelConfig, default_config
from .trainer import TrainConfig


def config_hash(payload) -> str:
    """Digest of the canonical JSON form of a payload; 12 hex digits."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _reject_unknown(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) in {section}: {', '.join(unknown)}")


@dataclass
class RunPaths:
    """File locations; all optional so each command can demand what it needs."""

    schedules: str | None = None
    labels: str | None = None
    vocab: str | None = None
    schema: str | None = None
    checkpoint: str | None = None
    history: str | None = None
    report: str | None = None


@dataclass
class EvalOptions:
    split: str = "test"
    mine_epochs: int = 200
    mine_batch: int = 512
    mine_patience: int = 10
    mine_lr: float = 0.001

    def validate(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.mine_epochs < 1 or self.mine_batch < 2 or self.mine_patience < 1:
            raise ValueError("mine settings out of range")


@dataclass
class ScenarioOptions:
    """Experiment-grid knobs; they compose with no special-case code paths."""

    sample_frac: float = 1.0
    labels: list[str] | None = None
    label_dist: str | None = None
    source_tag: str = ""

    def validate(self) -> None:
        if not 0.0 < self.sample_frac <= 1.0:
            raise ValueError(f"sample_frac {self.sample_frac} not in (0, 1]")


@dataclass
class RunConfig:
    kind: str = "ActVAE"
    model: ModelConfig = field(default_factory=lambda: default_config("ActVAE"))
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: RunPaths = field(default_factory=RunPaths)
    evaluate: EvalOptions = field(default_factory=EvalOptions)
    scenario: ScenarioOptions = field(default_factory=ScenarioOptions)
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ValueError("run config must be a mapping")
        _reject_unknown("run config", raw,
                        ("model", "train", "paths", "evaluate", "scenario", "seed"))
        seed = int(raw.get("seed", 0))

        msec = dict(raw.get("model") or {})
        kind = msec.pop("kind", "ActVAE")
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        _reject_unknown("model", msec, [f.name for f in fields(ModelConfig)])
        model = default_config(kind, **msec)

        tsec = dict(raw.get("train") or {})
        _reject_unknown("train", tsec, [f.name for f in fields(TrainConfig)])
        tsec.setdefault("seed", seed)
        train = TrainConfig(**tsec)

        psec = dict(raw.get("paths") or {})
        _reject_unknown("paths", psec, [f.name for f in fields(RunPaths)])
        paths = RunPaths(**{k: str(v) for k, v in psec.items()})

        esec = dict(raw.get("evaluate") or {})
        _reject_unknown("evaluate", esec, [f.name for f in fields(EvalOptions)])
        evaluate = EvalOptions(**esec)

        ssec = dict(raw.get("scenario") or {})
        _reject_unknown("scenario", ssec, [f.name for f in fields(ScenarioOptions)])
        if "labels" in ssec and ssec["labels"] is not None:
            ssec["labels"] = [str(v) for v in ssec["labels"]]
        scenario = ScenarioOptions(**ssec)

        cfg = cls(kind=kind, model=model, train=train, paths=paths,
                  evaluate=evaluate, scenario=scenario, seed=seed)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.evaluate.validate()
        self.scenario.validate()

    def payload(self) -> dict:
        """Fully resolved settings, defaults included."""
        return {
            "kind": self.kind,
            "model": asdict(self.model),
            "train": asdict(self.train),
            "paths": asdict(self.paths),
            "evaluate": asdict(self.evaluate),
            "scenario": asdict(self.scenario),
            "seed": self.seed,
        }

    def hash(self) -> str:
        return config_hash(self.payload())
