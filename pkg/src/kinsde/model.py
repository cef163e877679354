"""Model container: owns every trainable component and the inference paths.

The parameter groups mirror how the losses are routed during training:

    extractor      scene features                 (regularizer + prediction)
    e_s            initial-state posterior        (regularizer + prediction)
    e_c            semantics / step contexts      (prediction)
    f_drift        learned drift                  (kinematic + prediction)
    g_diff         shared diffusion               (kinematic + prediction)
    pi_controller  bicycle feedback controller    (prediction)
    decoder        latent -> waypoint head        (prediction)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ag
from .bicycle import Controller
from .config import TrainConfig
from .networks import (
    ContextEncoder,
    Decoder,
    DiffusionNet,
    DriftNet,
    FeatureExtractor,
    InitialStateEncoder,
)
from .scenarios import Scenario
from .sde import rollout_bicycle, rollout_learned, sample_brownian_batch, zero_path

GROUP_NAMES = ("extractor", "e_s", "e_c", "f_drift", "g_diff", "pi_controller", "decoder")

_OVERRIDE_KEYS = ("z0", "sem")
_OVERRIDE_MODES = ("offset", "set")


@dataclass(frozen=True)
class Generation:
    """One batch of sampled futures for a single scenario.

    trajectories: (S, T, 2) absolute xy waypoints
    latents:      (S, T+1, 4) latent states including the sampled seed
    u1, u2:       (S, T) controls the bicycle branch would apply
    beta:         (S, T) slip angles implied by u2
    u2_normalized: u2 / u2_max
    """

    trajectories: np.ndarray
    latents: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    beta: np.ndarray
    u2_normalized: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.trajectories.shape[0]


class TrajectoryModel:
    def __init__(self, config: TrainConfig | None = None, seed: int | None = None):
        self.config = config or TrainConfig()
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        c = self.config
        self.extractor = FeatureExtractor(rng, k=c.k, feature_width=c.feature_width)
        self.e_s = InitialStateEncoder(rng, c.feature_width, c.hidden_width)
        self.e_c = ContextEncoder(rng, c.feature_width, c.hidden_width)
        self.f_drift = DriftNet(rng, c.hidden_width)
        self.g_diff = DiffusionNet(rng, c.hidden_width, c.g_min)
        self.pi_controller = Controller(rng, u2_max=c.u2_max)
        self.decoder = Decoder(rng, c.hidden_width)

    # --- parameters ---------------------------------------------------------

    def parameter_groups(self) -> dict[str, list[ag.Node]]:
        return {
            "extractor": self.extractor.parameters(),
            "e_s": self.e_s.parameters(),
            "e_c": self.e_c.parameters(),
            "f_drift": self.f_drift.parameters(),
            "g_diff": self.g_diff.parameters(),
            "pi_controller": self.pi_controller.parameters(),
            "decoder": self.decoder.parameters(),
        }

    def named_parameters(self) -> dict[str, ag.Node]:
        named = {
            **self.extractor.named("extractor"),
            **self.e_s.named("e_s"),
            **self.e_c.named("e_c"),
            **self.f_drift.named("f_drift"),
            **self.g_diff.named("g_diff"),
            **self.decoder.named("decoder"),
        }
        for key, node in self.pi_controller.params.items():
            named[f"pi_controller.{key}"] = node
        return named

    def parameters(self) -> list[ag.Node]:
        return list(self.named_parameters().values())

    def info(self) -> dict:
        groups = {
            name: int(sum(p.value.size for p in params))
            for name, params in self.parameter_groups().items()
        }
        return {
            "parameter_groups": groups,
            "total_parameters": int(sum(groups.values())),
            "horizon": self.config.T,
            "history_length": self.config.k,
            "step_seconds": self.config.delta,
            "u2_max": self.config.u2_max,
        }

    # --- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        ag.save_checkpoint(path, self.named_parameters())

    def load(self, path) -> None:
        stored = ag.load_checkpoint(path)
        mine = self.named_parameters()
        missing = sorted(set(mine) - set(stored))
        extra = sorted(set(stored) - set(mine))
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, node in mine.items():
            if stored[name].shape != node.value.shape:
                raise ValueError(
                    f"checkpoint shape for {name}: {stored[name].shape} != {node.value.shape}"
                )
            node.value[...] = stored[name]

    @classmethod
    def from_checkpoint(cls, path, config: TrainConfig | None = None) -> "TrajectoryModel":
        model = cls(config)
        model.load(path)
        return model

    # --- inference -------------------------------------------------------------

    def _posterior(self, scenarios: list[Scenario]):
        feats = self.extractor.features(scenarios)
        return feats, self.e_s.posterior(feats)

    def predict(self, scenario: Scenario, horizon: int | None = None) -> dict[str, np.ndarray]:
        """Single most-likely future: posterior mean seed, no diffusion noise.

        Returns absolute waypoints (T, 2) plus the latent states behind them.
        """
        T = horizon or scenario.horizon or self.config.T
        feats, post = self._posterior([scenario])
        bundle = self.e_c.bundle(feats, T)
        roll = rollout_learned(
            post.mean, bundle.sem, bundle.ctx, zero_path(T), self.f_drift, self.g_diff
        )
        points = np.stack([w.value[0] for w in self.decoder.waypoints(roll.states)])
        return {
            "waypoints": points + scenario.frame[:2],
            "latents": roll.states_array()[:, 0, :],
        }

    def predict_batch(self, scenarios: list[Scenario], horizon: int | None = None) -> np.ndarray:
        """`predict` for many scenarios in one graph; returns (B, T, 2)."""
        if not scenarios:
            raise ValueError("empty scenario batch")
        T = horizon or scenarios[0].horizon or self.config.T
        feats, post = self._posterior(scenarios)
        bundle = self.e_c.bundle(feats, T)
        roll = rollout_learned(
            post.mean, bundle.sem, bundle.ctx, [zero_path(T)] * len(scenarios),
            self.f_drift, self.g_diff,
        )
        points = np.stack([w.value for w in self.decoder.waypoints(roll.states)])
        frames = np.stack([s.frame[:2] for s in scenarios])
        return points.transpose(1, 0, 2) + frames[:, None, :]

    def generate(
        self,
        scenario: Scenario,
        num_samples: int = 1,
        noise_seed: int = 0,
        latent_overrides: dict | None = None,
        horizon: int | None = None,
    ) -> Generation:
        """Sample `num_samples` futures for one scenario.

        All stochasticity (the posterior draw and the Brownian paths) is
        derived from `noise_seed`, so identical requests produce identical
        bytes. `latent_overrides` nudges or pins the latent seed / semantic
        vector: {"z0"|"sem": {"mode": "offset"|"set", "value": [4 floats]}}.
        """
        if num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {num_samples}")
        T = horizon or scenario.horizon or self.config.T
        rng = np.random.default_rng(noise_seed)

        feats, post = self._posterior([scenario])
        mean = np.repeat(post.mean.value, num_samples, axis=0)
        sd = np.exp(0.5 * np.repeat(post.log_var.value, num_samples, axis=0))
        z0_vals = mean + sd * rng.standard_normal((num_samples, 4))

        bundle = self.e_c.bundle(feats, T)
        sem_vals = np.repeat(bundle.sem.value, num_samples, axis=0)
        z0_vals, sem_vals = _apply_overrides(z0_vals, sem_vals, latent_overrides)
        ctx = [ag.constant(np.repeat(c.value, num_samples, axis=0)) for c in bundle.ctx]

        paths = sample_brownian_batch(
            T, self.config.step_var, seed=int(rng.integers(0, 2**63)), batch=num_samples
        )
        z0 = ag.constant(z0_vals)
        sem = ag.constant(sem_vals)
        roll = rollout_learned(z0, sem, ctx, paths, self.f_drift, self.g_diff)
        points = np.stack([w.value for w in self.decoder.waypoints(roll.states)])  # (T, S, 2)

        bike = rollout_bicycle(z0, paths, self.pi_controller, self.config.bicycle(), self.g_diff)
        controls = bike.controls_array()  # (T, S, 2)
        u1 = controls[:, :, 0].T.copy()
        u2 = controls[:, :, 1].T.copy()
        gain = self.config.l_r / (self.config.l_f + self.config.l_r)
        return Generation(
            trajectories=points.transpose(1, 0, 2) + scenario.frame[:2],
            latents=roll.states_array().transpose(1, 0, 2).copy(),
            u1=u1,
            u2=u2,
            beta=np.arctan(np.tan(u2) * gain),
            u2_normalized=u2 / self.config.u2_max,
        )

    def estimate_controls(self, scenarios: list[Scenario], horizon: int | None = None) -> dict:
        """Controls the bicycle branch applies along its noise-free rollout.

        Seeds every rollout at the posterior mean; returns (B, T) arrays.
        """
        if not scenarios:
            raise ValueError("empty scenario batch")
        T = horizon or scenarios[0].horizon or self.config.T
        _, post = self._posterior(scenarios)
        bike = rollout_bicycle(
            post.mean, [zero_path(T)] * len(scenarios),
            self.pi_controller, self.config.bicycle(), self.g_diff,
        )
        controls = bike.controls_array()
        u1 = controls[:, :, 0].T.copy()
        u2 = controls[:, :, 1].T.copy()
        gain = self.config.l_r / (self.config.l_f + self.config.l_r)
        return {
            "u1": u1,
            "u2": u2,
            "u2_normalized": u2 / self.config.u2_max,
            "beta": np.arctan(np.tan(u2) * gain),
        }


def _apply_overrides(z0: np.ndarray, sem: np.ndarray, overrides: dict | None):
    if not overrides:
        return z0, sem
    out = {"z0": z0, "sem": sem}
    for key, spec in overrides.items():
        if key not in _OVERRIDE_KEYS:
            raise ValueError(f"unknown latent override {key!r}; expected one of {_OVERRIDE_KEYS}")
        if not isinstance(spec, dict) or "value" not in spec:
            raise ValueError(f"override {key!r} must be a dict with a 'value' entry")
        mode = spec.get("mode", "offset")
        if mode not in _OVERRIDE_MODES:
            raise ValueError(f"override mode {mode!r}; expected one of {_OVERRIDE_MODES}")
        value = np.asarray(spec["value"], dtype=np.float64)
        if value.shape != (4,):
            raise ValueError(f"override {key!r} value must have 4 entries, got shape {value.shape}")
        if not np.isfinite(value).all():
            raise ValueError(f"override {key!r} value must be finite")
        out[key] = out[key] + value if mode == "offset" else np.tile(value, (out[key].shape[0], 1))
    return out["z0"], out["sem"]
