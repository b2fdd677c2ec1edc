"""Flat key=value experiment configuration.

One ``key = value`` per line, ``#`` comments; CLI flags override file keys.
Unknown keys and out-of-range values are rejected with the offending key
named in the error.
"""

from __future__ import annotations

import numpy as np

from .augment import AugmentConfig
from .correction import CorrectionConfig
from .errors import ConfigError
from .noise import NoiseSpec, SynthSpec
from .objectives import LossConfig
from .trainer import TrainConfig


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{s}'")


def _int_list(s: str):
    return [int(p) for p in s.split(",") if p.strip() != ""]


# key -> (parser, validator, default)
_REGISTRY: dict = {
    "out_dir": (str, None, "runs"),
    "synth.n": (int, lambda v: v > 0, 400),
    "synth.C": (int, lambda v: v > 0, 4),
    "synth.p_in": (float, lambda v: 0.0 <= v <= 1.0, 0.08),
    "synth.p_out": (float, lambda v: 0.0 <= v <= 1.0, 0.01),
    "synth.d": (int, lambda v: v > 0, 16),
    "synth.attr_signal": (float, lambda v: v >= 0.0, 1.0),
    "synth.seed": (int, None, 0),
    "noise.kind": (str, lambda v: v in ("uniform", "pair", "none"), "uniform"),
    "noise.rate": (float, lambda v: 0.0 <= v <= 1.0, 0.2),
    "noise.seed": (int, None, 0),
    "noise.pair_map": (_int_list, None, None),
    "enc.layers": (int, lambda v: v >= 1, 3),
    "enc.hidden": (int, lambda v: v > 0, 256),
    "enc.embed": (int, lambda v: v > 0, 256),
    "aug.edge_drop": (float, lambda v: 0.0 <= v <= 1.0, 0.2),
    "aug.attr_mask": (float, lambda v: 0.0 <= v <= 1.0, 0.2),
    "aug.seed": (int, None, 0),
    "loss.tau": (float, lambda v: v > 0.0, 0.5),
    "loss.contrastive_weight": (float, lambda v: v >= 0.0, 1.0),
    "corr.gamma": (float, lambda v: -1.0 < v <= 1.0, 0.8),
    "corr.omega": (float, lambda v: 0.0 <= v <= 1.0, 0.8),
    "train.epochs": (int, lambda v: v > 0, 300),
    "train.warmup": (int, lambda v: v > 0, 100),
    "train.period": (int, lambda v: v >= 1, 20),
    "train.lr": (float, lambda v: v > 0.0, 0.01),
    "train.optimizer": (str, lambda v: v in ("adam", "sgd"), "adam"),
    "train.seed": (int, None, 0),
    "train.runs": (int, lambda v: v >= 1, 5),
    "train.label_rate": (float, lambda v: 0.0 < v < 1.0, 0.01),
    "train.use_contrastive": (_bool, None, True),
    "train.use_correction": (_bool, None, True),
}


class ExperimentConfig:
    """Validated flat key-value document covering every module config."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    @staticmethod
    def defaults() -> "ExperimentConfig":
        return ExperimentConfig({k: default for k, (_, _, default) in _REGISTRY.items()})

    def apply(self, assignments: dict[str, str]) -> "ExperimentConfig":
        """Parse and validate raw string assignments on top of this config."""
        merged = dict(self.values)
        for key, raw in assignments.items():
            if key not in _REGISTRY:
                raise ConfigError(f"unknown config key '{key}'")
            parser, check, _ = _REGISTRY[key]
            try:
                value = parser(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for '{key}': {e}") from e
            if check is not None and not check(value):
                raise ConfigError(f"value out of range for '{key}': {raw}")
            merged[key] = value
        return ExperimentConfig(merged)

    # -- typed views -------------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(n=self["synth.n"], num_classes=self["synth.C"],
                         p_in=self["synth.p_in"], p_out=self["synth.p_out"],
                         d=self["synth.d"], attr_signal=self["synth.attr_signal"],
                         seed=self["synth.seed"])

    def noise_spec(self) -> NoiseSpec | None:
        if self["noise.kind"] == "none" or self["noise.rate"] == 0.0:
            return None
        pair_map = self["noise.pair_map"]
        return NoiseSpec(kind=self["noise.kind"], rate=self["noise.rate"],
                         pair_map=None if pair_map is None else np.asarray(pair_map),
                         seed=self["noise.seed"])

    def train_config(self) -> TrainConfig:
        cfg = TrainConfig(
            epochs=self["train.epochs"],
            warmup=self["train.warmup"],
            correction_period=self["train.period"],
            learning_rate=self["train.lr"],
            optimizer=self["train.optimizer"],
            seed=self["train.seed"],
            use_contrastive=self["train.use_contrastive"],
            use_correction=self["train.use_correction"],
            hidden_dim=self["enc.hidden"],
            embed_dim=self["enc.embed"],
            num_layers=self["enc.layers"],
            aug=AugmentConfig(edge_drop_prob=self["aug.edge_drop"],
                              attr_mask_prob=self["aug.attr_mask"],
                              seed=self["aug.seed"]),
            loss=LossConfig(temperature=self["loss.tau"],
                            contrastive_weight=self["loss.contrastive_weight"]),
            correction=CorrectionConfig(gamma=self["corr.gamma"], omega=self["corr.omega"]),
        )
        try:
            cfg.validate()
        except Exception as e:
            raise ConfigError(f"invalid training configuration: {e}") from e
        return cfg

    def echo(self) -> dict:
        """JSON-friendly copy of every key except output locations."""
        return {k: v for k, v in sorted(self.values.items()) if k != "out_dir"}


def parse_config_text(text: str) -> dict[str, str]:
    assignments = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        if key in assignments:
            raise ConfigError(f"line {ln}: duplicate key '{key}'")
        assignments[key] = value
    return assignments


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.defaults()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = cfg.apply(parse_config_text(fh.read()))
    if overrides:
        cfg = cfg.apply(overrides)
    return cfg
