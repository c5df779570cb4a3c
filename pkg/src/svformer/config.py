"""Run configuration: defaults, JSON config files, and flag overrides.

Precedence is defaults < config file < command-line flags; the SVF_SEED
environment variable, when set, beats them all for the seed.  A config
file is a flat JSON object whose keys are RunConfig field names;
unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .model import ModelConfig
from .training import SSLConfig


class ConfigError(ValueError):
    """Bad config file or invalid field combination."""


@dataclass
class RunConfig:
    # model
    t: int = 8
    h: int = 16
    w: int = 16
    c: int = 1
    patch: int = 4
    dim: int = 32
    heads: int = 2
    blocks: int = 2
    n_classes: int = 8
    drop_rate: float = 0.1
    # training
    delta: float = 0.3
    gamma1: float = 2.0
    gamma2: float = 2.0
    ema_momentum: float = 0.99
    alpha: float = 10.0
    b_l: int = 1
    b_u: int = 5
    epochs: int = 30
    base_lr: float = 0.005
    lr_drop_epochs: tuple = (25, 28)
    mask_strategy: str = "tube"
    teacher_mode: str = "ema"
    use_twaug: bool = True
    use_strong_spatial: bool = True
    sgd_momentum: float = 0.9
    weight_decay: float = 0.001
    per_sample_mask: bool = False
    use_q_gate: bool = True
    teacher_weak: bool = True
    # run plumbing
    data: str = ""
    val_data: str = ""
    out_dir: str = ""
    seed: int = 0
    label_rate: float = 0.05
    eval_n_clips: int = 1
    eval_n_crops: int = 1
    checkpoint_every: int = 10

    def model_config(self) -> ModelConfig:
        return ModelConfig(t=self.t, h=self.h, w=self.w, c=self.c,
                           patch=self.patch, dim=self.dim, heads=self.heads,
                           blocks=self.blocks, n_classes=self.n_classes,
                           drop_rate=self.drop_rate)

    def ssl_config(self) -> SSLConfig:
        return SSLConfig(
            delta=self.delta, gamma1=self.gamma1, gamma2=self.gamma2,
            ema_momentum=self.ema_momentum, alpha=self.alpha,
            b_l=self.b_l, b_u=self.b_u, epochs=self.epochs,
            base_lr=self.base_lr, lr_drop_epochs=tuple(self.lr_drop_epochs),
            mask_strategy=self.mask_strategy, teacher_mode=self.teacher_mode,
            use_twaug=self.use_twaug, use_strong_spatial=self.use_strong_spatial,
            sgd_momentum=self.sgd_momentum, weight_decay=self.weight_decay,
            per_sample_mask=self.per_sample_mask, use_q_gate=self.use_q_gate,
            teacher_weak=self.teacher_weak)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return out

    def validate(self):
        """Build the derived configs, surfacing field errors early."""
        try:
            self.model_config()
            self.ssl_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 0.0 < self.label_rate <= 1.0:
            raise ConfigError(f"label_rate must be in (0, 1], got {self.label_rate}")
        if self.eval_n_clips < 1 or self.eval_n_crops < 1:
            raise ConfigError("eval_n_clips and eval_n_crops must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(RunConfig))


def load_config_file(path) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def resolve_config(file_values: dict | None = None,
                   flag_values: dict | None = None) -> RunConfig:
    """Merge config sources into a validated RunConfig.

    `flag_values` entries that are None mean "flag not given" and are
    skipped.  Unknown keys in either source are named in the error.
    """
    merged: dict = {}
    for source, values in (("config file", file_values), ("flags", flag_values)):
        if not values:
            continue
        unknown = sorted(set(values) - set(FIELD_NAMES))
        if unknown:
            raise ConfigError(f"unknown {source} key(s): {', '.join(unknown)}")
        for key, val in values.items():
            if val is None:
                continue
            if key == "lr_drop_epochs":
                val = tuple(int(v) for v in val)
            merged[key] = val
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def write_frozen_config(cfg: RunConfig, path):
    """Persist the fully resolved config; rerunning from it reproduces the run."""
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
