"""Kinematic bicycle model: deterministic drift plus a learnable feedback controller.

The state is (x, y, v, psi) — positions, speed, yaw. One forward-Euler step
moves the vehicle center by delta*v along heading psi+beta, where beta is the
slip angle induced by the front-wheel steering command. Everything exists in
two flavors: plain-float scalar functions (used by the scenario generator and
as test oracles) and graph functions over (B, 4) batches of `autodiff.Node`s
(used inside rollouts, so gradients reach the controller weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ag

U2_LIMIT = math.pi / 2


@dataclass(frozen=True)
class BicycleParams:
    """Geometry and step size of the bicycle model."""

    l_f: float = 1.5
    l_r: float = 1.5
    delta: float = 0.1

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0 or self.delta <= 0:
            raise ValueError(f"BicycleParams must be positive, got {self}")

    @property
    def slip_gain(self) -> float:
        return self.l_r / (self.l_f + self.l_r)


@dataclass(frozen=True)
class LatentState:
    """4-D vehicle state; in latent space the units are representational."""

    x: float
    y: float
    v: float
    psi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "LatentState":
        a = np.asarray(a, dtype=np.float64).ravel()
        return LatentState(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class ControlInput:
    """Acceleration u1 and front-wheel steering angle u2 (radians)."""

    u1: float
    u2: float

    def __post_init__(self):
        if not abs(self.u2) < U2_LIMIT:
            raise ValueError(f"steering angle {self.u2!r} outside (-pi/2, pi/2)")


def slip_angle(u2: float, params: BicycleParams) -> float:
    """Slip angle beta = arctan(tan(u2) * l_r / (l_f + l_r))."""
    if not abs(u2) < U2_LIMIT:
        raise ValueError(f"steering angle {u2!r} outside (-pi/2, pi/2)")
    return math.atan(math.tan(u2) * params.slip_gain)


def bicycle_drift(state: LatentState, control: ControlInput, params: BicycleParams) -> LatentState:
    """One deterministic forward-Euler step of the bicycle model."""
    beta = slip_angle(control.u2, params)
    d = params.delta
    return LatentState(
        x=state.x + d * state.v * math.cos(state.psi + beta),
        y=state.y + d * state.v * math.sin(state.psi + beta),
        v=state.v + d * control.u1,
        psi=state.psi + d * (state.v / params.l_r) * math.sin(beta),
    )


# --- graph versions over (B, 4) state batches -------------------------------


def slip_angle_node(u2: ag.Node, params: BicycleParams) -> ag.Node:
    if np.max(np.abs(u2.value)) >= U2_LIMIT:
        raise ValueError("steering angle batch leaves (-pi/2, pi/2)")
    return ag.atan(ag.tan(u2) * params.slip_gain)


def bicycle_drift_node(states: ag.Node, controls: ag.Node, params: BicycleParams) -> ag.Node:
    """Batched drift: states (B, 4), controls (B, 2) -> next states (B, 4).

    Identical arithmetic to `bicycle_drift`, expressed on the graph so the
    backward pass reaches both the states and the controls.
    """
    if states.value.ndim != 2 or states.value.shape[1] != 4:
        raise ag.ShapeError("bicycle_drift", states.value.shape)
    if controls.value.shape != (states.value.shape[0], 2):
        raise ag.ShapeError("bicycle_drift", states.value.shape, controls.value.shape)

    x = ag.take_slice(states, 0, 1)
    y = ag.take_slice(states, 1, 2)
    v = ag.take_slice(states, 2, 3)
    psi = ag.take_slice(states, 3, 4)
    u1 = ag.take_slice(controls, 0, 1)
    u2 = ag.take_slice(controls, 1, 2)

    beta = slip_angle_node(u2, params)
    heading = psi + beta
    d = params.delta
    next_x = x + ag.cos(heading) * v * d
    next_y = y + ag.sin(heading) * v * d
    next_v = v + u1 * d
    next_psi = psi + ag.sin(beta) * v * (d / params.l_r)
    return ag.concat([next_x, next_y, next_v, next_psi], axis=1)


class Controller:
    """Feedback controller pi: state -> (u1, u2).

    Two tanh hidden layers of width 32. The steering head is squashed to
    (-u2_max, u2_max) so tan(u2) stays tame no matter what training does;
    the acceleration head is left unbounded.
    """

    HIDDEN = 32

    def __init__(self, rng: np.random.Generator, u2_max: float = 0.6):
        if not 0 < u2_max < U2_LIMIT:
            raise ValueError(f"u2_max must lie in (0, pi/2), got {u2_max}")
        self.u2_max = u2_max
        h = self.HIDDEN

        def init(n_in, n_out, scale=1.0):
            return ag.parameter(scale * rng.normal(size=(n_in, n_out)) / np.sqrt(n_in))

        # small-scale head: a fresh controller steers near zero, so the
        # bicycle SDE starts as a coasting process rather than a wild one
        self.params = {
            "w1": init(4, h),
            "b1": ag.parameter(np.zeros((1, h))),
            "w2": init(h, h),
            "b2": ag.parameter(np.zeros((1, h))),
            "w3": init(h, 2, scale=0.01),
            "b3": ag.parameter(np.zeros((1, 2))),
        }

    def parameters(self) -> list[ag.Node]:
        return list(self.params.values())

    def apply_node(self, states: ag.Node) -> ag.Node:
        """Batched controls (B, 2) for a batch of states (B, 4)."""
        p = self.params
        ones = ag.constant(np.ones((states.value.shape[0], 1)))
        h = ag.tanh(ag.matmul(states, p["w1"]) + ag.matmul(ones, p["b1"]))
        h = ag.tanh(ag.matmul(h, p["w2"]) + ag.matmul(ones, p["b2"]))
        raw = ag.matmul(h, p["w3"]) + ag.matmul(ones, p["b3"])
        u1 = ag.take_slice(raw, 0, 1)
        u2 = ag.tanh(ag.take_slice(raw, 1, 2)) * self.u2_max
        return ag.concat([u1, u2], axis=1)


def controller_apply(controller: Controller, state: LatentState) -> ControlInput:
    """Single-state convenience wrapper over `Controller.apply_node`."""
    out = controller.apply_node(ag.constant(state.as_array().reshape(1, 4)))
    return ControlInput(u1=float(out.value[0, 0]), u2=float(out.value[0, 1]))
