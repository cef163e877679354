"""Run configuration: one flat, JSON-serializable record for the whole pipeline."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .bicycle import BicycleParams


@dataclass
class TrainConfig:
    """Every knob for data shape, model size, and optimization.

    Defaults give a 2.0 s observed window (k*delta) and a 3.0 s prediction
    horizon (T*delta) at 10 Hz.

    The drift-matching weight may follow a warmup schedule: for the first
    kin_warmup_epochs it is held at kin_lambda_floor, then climbs
    geometrically to lambda_kin over kin_ramp_epochs. Both default to 0,
    which keeps the weight constant at lambda_kin. The floor exists because
    a fully dormant drift-matching term lets the diffusion scale collapse
    onto its lower clamp, and the term then re-enters catastrophically
    stiff; a tiny floor keeps the diffusion propped at negligible cost to
    the prediction loss.

    lr_decay_epoch > 0 multiplies the learning rate by lr_decay_factor once,
    at that epoch (a single-step decay; 0 disables it).
    """

    T: int = 30
    k: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.0
    lambda_reg: float = 0.1
    lambda_kin: float = 1.0
    kin_warmup_epochs: int = 0
    kin_ramp_epochs: int = 0
    kin_lambda_floor: float = 0.0
    lr_decay_epoch: int = 0
    lr_decay_factor: float = 1.0
    epochs: int = 20
    seed: int = 0
    l_f: float = 1.5
    l_r: float = 1.5
    delta: float = 0.1
    g_min: float = 1e-3
    u2_max: float = 0.6
    step_var: float = 1.0
    feature_width: int = 64
    hidden_width: int = 64
    val_fraction: float = 0.15

    def __post_init__(self):
        positive = ("T", "k", "batch_size", "learning_rate", "l_f", "l_r",
                    "delta", "g_min", "u2_max", "step_var", "feature_width",
                    "hidden_width")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive, got {getattr(self, name)}")
        for name in ("lambda_reg", "lambda_kin", "epochs",
                     "kin_warmup_epochs", "kin_ramp_epochs", "kin_lambda_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"config field {name} must be >= 0")
        if self.kin_ramp_epochs > 0 and self.kin_lambda_floor == 0 and self.lambda_kin > 0:
            raise ValueError("kin_ramp_epochs needs a positive kin_lambda_floor "
                             "(the ramp is geometric, so it cannot start from zero)")
        if self.lr_decay_epoch < 0:
            raise ValueError("lr_decay_epoch must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.feature_width < 9:
            raise ValueError("feature_width must be at least 9")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def bicycle(self) -> BicycleParams:
        return BicycleParams(l_f=self.l_f, l_r=self.l_r, delta=self.delta)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"{path}: unknown config fields {sorted(unknown)}")
        return cls(**doc)
