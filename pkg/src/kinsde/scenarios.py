"""Synthetic driving scenarios: generation, JSON persistence, splitting.

Every ground-truth path is produced by integrating the bicycle model under a
scripted control schedule, so the data is kinematically feasible by
construction — the model is never asked to imitate something the bicycle
dynamics could not produce. Five maneuver families cover lateral offsets,
sustained turns in both directions, and longitudinal speed changes.

Scenario geometry convention: the vehicle starts at the origin heading +x;
`frame` records the true pose (x, y, heading) at the last observed waypoint
and is what downstream encoders subtract to get translation-invariant inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bicycle import BicycleParams, ControlInput, LatentState, bicycle_drift

SCHEMA_VERSION = 1
FAMILY_KINDS = ("straight", "lane-change", "left-turn", "right-turn", "stop-and-go")


@dataclass(frozen=True)
class ScenarioFamily:
    """Sampling ranges for one maneuver kind."""

    kind: str
    noise_level: float = 0.05
    speed_range: tuple[float, float] = (4.0, 10.0)
    curvature_range: tuple[float, float] = (0.02, 0.08)

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}, expected one of {FAMILY_KINDS}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        for name, (lo, hi) in (("speed_range", self.speed_range),
                               ("curvature_range", self.curvature_range)):
            if not (hi > lo):
                raise ValueError(f"{name} must be non-degenerate, got ({lo}, {hi})")


DEFAULT_FAMILIES = {
    "straight": ScenarioFamily("straight", speed_range=(3.0, 12.0),
                               curvature_range=(0.0, 0.001)),  # curvature unused
    "lane-change": ScenarioFamily("lane-change", speed_range=(5.0, 11.0),
                                  curvature_range=(0.0, 0.001)),  # offset drives it
    "left-turn": ScenarioFamily("left-turn", speed_range=(4.0, 9.0),
                                curvature_range=(0.02, 0.08)),
    "right-turn": ScenarioFamily("right-turn", speed_range=(4.0, 9.0),
                                 curvature_range=(0.02, 0.08)),
    "stop-and-go": ScenarioFamily("stop-and-go", speed_range=(4.0, 9.0),
                                  curvature_range=(0.0, 0.001)),  # curvature unused
}


@dataclass
class Scenario:
    """One prediction problem: k observed steps, T future steps, map context."""

    id: str
    target_history: np.ndarray  # (k, 2)
    neighbor_histories: list  # of (k, 2) arrays
    lanes: list  # of (P, 2) polylines
    future_truth: np.ndarray  # (T, 2)
    frame: np.ndarray  # (3,) = x, y, heading at the last observed waypoint
    family: str = "unknown"

    def __post_init__(self):
        self.target_history = np.asarray(self.target_history, dtype=np.float64)
        self.future_truth = np.asarray(self.future_truth, dtype=np.float64)
        self.frame = np.asarray(self.frame, dtype=np.float64)
        self.neighbor_histories = [np.asarray(n, dtype=np.float64) for n in self.neighbor_histories]
        self.lanes = [np.asarray(l, dtype=np.float64) for l in self.lanes]
        if self.target_history.ndim != 2 or self.target_history.shape[1] != 2:
            raise ValueError(f"scenario {self.id}: target_history must be (k, 2)")
        if self.target_history.shape[0] < 1:
            raise ValueError(f"scenario {self.id}: empty target history")
        if self.future_truth.ndim != 2 or self.future_truth.shape[1] != 2:
            raise ValueError(f"scenario {self.id}: future_truth must be (T, 2)")
        if self.frame.shape != (3,):
            raise ValueError(f"scenario {self.id}: frame must be (x, y, heading)")
        arrays = [self.target_history, self.future_truth, self.frame,
                  *self.neighbor_histories, *self.lanes]
        if not all(np.isfinite(a).all() for a in arrays):
            raise ValueError(f"scenario {self.id}: non-finite coordinates")

    @property
    def k(self) -> int:
        return self.target_history.shape[0]

    @property
    def horizon(self) -> int:
        return self.future_truth.shape[0]


# --- path synthesis ----------------------------------------------------------


def _steering_for_curvature(kappa: float, params: BicycleParams) -> float:
    # Path curvature of the center point is sin(beta) / l_r; invert that and
    # then invert the slip-angle map to get the wheel angle.
    beta = math.asin(min(max(kappa * params.l_r, -0.999), 0.999))
    return math.atan(math.tan(beta) / params.slip_gain)


def _integrate(v0: float, controls: np.ndarray, params: BicycleParams) -> np.ndarray:
    """Roll the bicycle model; returns (len(controls)+1, 4) state array."""
    state = LatentState(0.0, 0.0, v0, 0.0)
    out = [state.as_array()]
    for u1, u2 in controls:
        # Never brake through zero speed.
        if state.v + params.delta * u1 < 0:
            u1 = -state.v / params.delta
        state = bicycle_drift(state, ControlInput(float(u1), float(u2)), params)
        out.append(state.as_array())
    return np.stack(out)


def _straight_lane(y: float, x_lo: float, x_hi: float, n: int = 12) -> np.ndarray:
    xs = np.linspace(x_lo, x_hi, n)
    return np.column_stack([xs, np.full(n, y)])


def _path_lane(states: np.ndarray, stride: int = 4) -> np.ndarray:
    """A lane polyline tracing a driven path, extended a little at both ends."""
    pts = states[::stride, :2]
    psi_end = states[-1, 3]
    tail = states[-1, :2] + np.outer([3.0, 6.0, 9.0], [math.cos(psi_end), math.sin(psi_end)])
    head = states[0, :2] - np.array([[5.0, 0.0], [2.5, 0.0]])
    return np.vstack([head[::-1], pts, tail])


def _controls_for(kind: str, family: ScenarioFamily | str, rng, k: int, T: int,
                  params: BicycleParams, v0: float) -> np.ndarray:
    """Scripted (u1, u2) schedule of length k+T-1."""
    n = k + T - 1
    controls = np.zeros((n, 2))

    if kind == "straight":
        pass  # zero controls: constant speed, zero steering

    elif kind == "lane-change":
        direction = 1.0 if rng.random() < 0.5 else -1.0
        amplitude = rng.uniform(0.12, 0.30)
        onset = int(rng.integers(k - 5, k + 4))
        length = int(rng.integers(12, 21))
        t = np.arange(onset, min(onset + length, n))
        # full sine period: steer out, steer back, heading returns to ~0
        controls[t, 1] = direction * amplitude * np.sin(
            2 * math.pi * (t - onset) / length
        )

    elif kind in ("left-turn", "right-turn"):
        sign = 1.0 if kind == "left-turn" else -1.0
        kappa = rng.uniform(*family.curvature_range)
        onset = int(rng.integers(k - 3, k + 7))
        controls[onset:, 1] = sign * _steering_for_curvature(kappa, params)

    elif kind == "stop-and-go":
        floor = rng.uniform(0.3, 1.0)
        onset = int(rng.integers(k - 6, k - 1))
        # Brake hard enough to actually reach the slow phase within roughly
        # the first half of the remaining steps, whatever v0 was drawn.
        needed = (v0 - floor) / ((n - onset) * params.delta * 0.55)
        brake = -min(max(rng.uniform(1.5, 3.0), needed), 4.5)
        hold = int(rng.integers(3, 9))
        accel = rng.uniform(1.0, 2.5)
        v, phase, held = v0, "brake", 0
        for i in range(onset, n):
            if phase == "brake":
                if v > floor:
                    controls[i, 0] = brake
                else:
                    phase, held = "hold", 0
            if phase == "hold":
                held += 1
                if held > hold:
                    phase = "go"
            if phase == "go" and v < 0.8 * v0:
                controls[i, 0] = accel
            u1 = controls[i, 0]
            if v + params.delta * u1 < 0:
                u1 = -v / params.delta
                controls[i, 0] = u1
            v = v + params.delta * u1
    else:  # pragma: no cover - guarded by ScenarioFamily
        raise ValueError(kind)
    return controls


def _lanes_for(kind: str, states: np.ndarray) -> list[np.ndarray]:
    reach = float(states[-1, 0]) + 10.0
    current = _straight_lane(0.0, -5.0, max(reach, 15.0))
    if kind in ("left-turn", "right-turn"):
        return [current, _path_lane(states)]
    if kind == "lane-change":
        y_target = float(states[-1, 1])
        return [current, _straight_lane(y_target, -5.0, max(reach, 15.0))]
    return [current]


def _neighbors_for(rng, k: int, delta: float, noise: float) -> list[np.ndarray]:
    out = []
    for _ in range(int(rng.integers(0, 4))):
        lateral = rng.choice([-7.0, -3.5, 3.5, 7.0]) + rng.uniform(-0.5, 0.5)
        speed = rng.uniform(3.0, 10.0)
        x0 = rng.uniform(-10.0, 10.0)
        ts = np.arange(k) * delta
        pts = np.column_stack([x0 + speed * ts, np.full(k, lateral)])
        out.append(pts + rng.normal(0.0, noise, pts.shape))
    return out


def generate_scenarios(
    family: ScenarioFamily | str,
    count: int,
    seed: int,
    k: int = 20,
    T: int = 30,
    params: BicycleParams | None = None,
) -> list[Scenario]:
    """Deterministically generate `count` scenarios of one family.

    `family` may be a ScenarioFamily or one of the names in DEFAULT_FAMILIES.
    """
    if isinstance(family, str):
        if family not in DEFAULT_FAMILIES:
            raise ValueError(f"unknown family {family!r}, expected one of {FAMILY_KINDS}")
        family = DEFAULT_FAMILIES[family]
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    params = params or BicycleParams()
    child_seeds = np.random.default_rng(seed).integers(0, 2**63, size=count)
    out = []
    for i, child in enumerate(child_seeds):
        rng = np.random.default_rng(int(child))
        v0 = rng.uniform(*family.speed_range)
        controls = _controls_for(family.kind, family, rng, k, T, params, v0)
        states = _integrate(v0, controls, params)
        positions = states[:, :2]
        noisy = positions + rng.normal(0.0, family.noise_level, positions.shape)
        frame = np.array([states[k - 1, 0], states[k - 1, 1], states[k - 1, 3]])
        out.append(
            Scenario(
                id=f"{family.kind}-{seed}-{i:05d}",
                target_history=noisy[:k],
                neighbor_histories=_neighbors_for(rng, k, params.delta, family.noise_level),
                lanes=_lanes_for(family.kind, states),
                future_truth=noisy[k:],
                frame=frame,
                family=family.kind,
            )
        )
    return out


def generate_mixed_dataset(
    count_per_family: int,
    seed: int,
    k: int = 20,
    T: int = 30,
    families: dict[str, ScenarioFamily] | None = None,
    params: BicycleParams | None = None,
) -> list[Scenario]:
    """All five families, interleaved deterministically."""
    families = families or DEFAULT_FAMILIES
    out = []
    for offset, fam in enumerate(families.values()):
        out.extend(generate_scenarios(fam, count_per_family, seed + offset, k, T, params))
    order = np.random.default_rng(seed).permutation(len(out))
    return [out[i] for i in order]


# --- persistence -------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "target_history", "neighbor_histories", "lanes",
                    "future_truth", "frame")


def scenario_to_record(s: Scenario) -> dict:
    """Plain-JSON form of one scenario; inverse of scenario_from_record."""
    return {
        "id": s.id,
        "family": s.family,
        "frame": s.frame.tolist(),
        "target_history": s.target_history.tolist(),
        "neighbor_histories": [n.tolist() for n in s.neighbor_histories],
        "lanes": [l.tolist() for l in s.lanes],
        "future_truth": s.future_truth.tolist(),
    }


def scenario_from_record(rec: dict) -> Scenario:
    if not isinstance(rec, dict):
        raise ValueError("scenario record must be a JSON object")
    for fieldname in _REQUIRED_FIELDS:
        if fieldname not in rec:
            raise ValueError(f"missing field {fieldname!r}")
    return Scenario(
        id=rec["id"],
        target_history=rec["target_history"],
        neighbor_histories=rec["neighbor_histories"],
        lanes=rec["lanes"],
        future_truth=rec["future_truth"],
        frame=rec["frame"],
        family=rec.get("family", "unknown"),
    )


def save_dataset(scenarios: list[Scenario], path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenarios": [scenario_to_record(s) for s in scenarios],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_dataset(path) -> list[Scenario]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: not a schema-version-{SCHEMA_VERSION} dataset")
    out = []
    for idx, rec in enumerate(doc.get("scenarios", [])):
        try:
            out.append(scenario_from_record(rec))
        except (ValueError, TypeError) as err:
            raise ValueError(f"{path}: scenario {idx}: {err}") from err
    return out


def split(scenarios: list[Scenario], ratios, seed: int):
    """Shuffle and partition into (train, val, test); deterministic under seed."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(scenarios))
    shuffled = [scenarios[i] for i in order]
    n = len(shuffled)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]
