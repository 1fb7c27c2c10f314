"""Run configuration: a strict JSON file plus command-line overrides.

The file has up to four sections: "synth" (generator), "model"
(architecture), "train" (optimization), and "ablate" (grid axes).
Unknown sections or keys are hard errors, and validation reports every
violated constraint at once rather than stopping at the first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from seqdg.model import ModelConfig
from seqdg.synth import SynthConfig
from seqdg.train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "file_sha256"]

SECTIONS = ("synth", "model", "train", "ablate")
ABLATE_KEYS = {"W", "p_mix", "lambda_rv", "lambda_rt", "seeds"}
DEFAULT_ABLATE = {"W": [1, 5], "p_mix": [0.0, 0.5], "lambda_rv": [0.0, 1.0],
                  "lambda_rt": [0.0, 1.0], "seeds": [0]}


class ConfigError(Exception):
    """All configuration problems found, newline-joined."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class RunConfig:
    synth: SynthConfig
    train: TrainConfig
    ablate: dict
    source_file: str | None = None

    @property
    def model(self) -> ModelConfig:
        return self.train.model

    def to_dict(self) -> dict:
        return {"synth": self.synth.to_dict(), "model": self.model.to_dict(),
                "train": {k: v for k, v in self.train.to_dict().items()
                          if k != "model"},
                "ablate": self.ablate}


def _check_keys(section: str, payload: dict, allowed, problems: list[str]):
    for key in payload:
        if key not in allowed:
            problems.append(f"{section}: unknown key {key!r}")


def load_run_config(path=None, overrides: dict | None = None,
                    model_patch: dict | None = None) -> RunConfig:
    """Parse and validate a config file, then apply flag overrides.

    `model_patch` force-sets model fields that the dataset dictates (its
    feature widths); flag overrides win over the file for everything
    else. Raises ConfigError carrying every violation found in one pass.
    """
    problems: list[str] = []
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"])
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"])
        if not isinstance(raw, dict):
            raise ConfigError(["config file must hold a JSON object"])
        for section in raw:
            if section not in SECTIONS:
                problems.append(f"unknown section {section!r} "
                                f"(expected one of {list(SECTIONS)})")

    synth_raw = dict(raw.get("synth", {}))
    model_raw = dict(raw.get("model", {}))
    train_raw = dict(raw.get("train", {}))
    ablate_raw = dict(raw.get("ablate", {}))
    _check_keys("synth", synth_raw, SynthConfig.__dataclass_fields__, problems)
    _check_keys("model", model_raw, ModelConfig.__dataclass_fields__, problems)
    train_allowed = set(TrainConfig.__dataclass_fields__) - {"model"}
    _check_keys("train", train_raw, train_allowed, problems)
    _check_keys("ablate", ablate_raw, ABLATE_KEYS, problems)
    if problems:
        raise ConfigError(problems)

    overrides = overrides or {}
    seed = overrides.get("seed")
    if seed is not None:
        synth_raw["seed"] = seed
        train_raw["seed"] = seed
    for key in ("W",):
        if overrides.get(key) is not None:
            model_raw[key] = overrides[key]
    for key in ("lambda_rv", "lambda_rt", "p_mix", "epochs"):
        if overrides.get(key) is not None:
            train_raw[key] = overrides[key]
    if model_patch:
        model_raw.update(model_patch)

    try:
        synth = SynthConfig(**synth_raw)
    except TypeError as exc:
        raise ConfigError([f"synth: {exc}"])
    try:
        model = ModelConfig(**model_raw)
    except TypeError as exc:
        raise ConfigError([f"model: {exc}"])
    if "lr_decay_epochs" in train_raw:
        train_raw["lr_decay_epochs"] = tuple(train_raw["lr_decay_epochs"])
    try:
        train = TrainConfig(model=model, **train_raw)
    except TypeError as exc:
        raise ConfigError([f"train: {exc}"])

    problems.extend(f"synth: {e}" for e in synth.validate())
    problems.extend(f"model/train: {e}" for e in train.validate())
    ablate = {**DEFAULT_ABLATE, **ablate_raw}
    for key, values in ablate.items():
        if not isinstance(values, list) or not values:
            problems.append(f"ablate: {key} must be a non-empty list")
    if problems:
        raise ConfigError(problems)
    return RunConfig(synth=synth, train=train, ablate=ablate,
                     source_file=str(path) if path else None)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
