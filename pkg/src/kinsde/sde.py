"""Stochastic rollout machinery for the two coupled SDEs.

Both the learned-drift SDE and the bicycle-model SDE advance in discrete
time as `next = drift(state) + diag(g(state)) * dW`, share one diffusion
network, and — within a training step — share the same Brownian increments.
The KL divergence between their path measures then collapses to a summed,
diffusion-scaled drift gap, which is what `kinematic_kl_loss` computes.

Gradient routing is handled here: each learned-SDE step additionally
evaluates the drift and diffusion on *detached* inputs, so the kinematic
loss can update the drift/diffusion weights without touching the encoders
(through the state recursion) or the controller (through the bicycle path).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ag
from .bicycle import BicycleParams, Controller, bicycle_drift_node

DriftFn = Callable[[ag.Node, ag.Node, ag.Node], ag.Node]  # (z, sem, ctx_t) -> (B,4)
DiffusionFn = Callable[[ag.Node], ag.Node]  # z -> (B,4), entries >= g_min


@dataclass(frozen=True)
class BrownianPath:
    """T x 4 Gaussian increments for one scenario, plus the seed that made them."""

    increments: np.ndarray
    seed: int

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 2 or inc.shape[1] != 4:
            raise ValueError(f"increments must be (T, 4), got {inc.shape}")
        object.__setattr__(self, "increments", inc)

    @property
    def horizon(self) -> int:
        return self.increments.shape[0]


def sample_brownian(T: int, step_var: float, seed: int) -> BrownianPath:
    """Draw T i.i.d. increments, each component ~ N(0, step_var)."""
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    if step_var <= 0:
        raise ValueError(f"step_var must be positive, got {step_var}")
    rng = np.random.default_rng(seed)
    inc = rng.normal(scale=np.sqrt(step_var), size=(T, 4))
    return BrownianPath(increments=inc, seed=seed)


def sample_brownian_batch(T: int, step_var: float, seed: int, batch: int) -> list[BrownianPath]:
    """One independent path per scenario in a batch, derived from a master seed."""
    seeds = np.random.default_rng(seed).integers(0, 2**63, size=batch)
    return [sample_brownian(T, step_var, int(s)) for s in seeds]


def zero_path(T: int) -> BrownianPath:
    """The deterministic (noise-free) path; rollouts follow pure drift."""
    return BrownianPath(increments=np.zeros((T, 4)), seed=0)


@dataclass
class LatentRollout:
    """One solved SDE trajectory for a batch of scenarios.

    states:     T+1 graph nodes of shape (B, 4), the live recursion.
    drifts:     T nodes (B, 4) — drift evaluations on detached inputs for the
                learned SDE (gradient-isolated view), live ones for the bicycle.
    controls:   T nodes (B, 2) from the controller; None for the learned SDE.
    diffusions: T nodes (B, 4), the diagonal of g at each visited state
                (same detachment convention as drifts).
    """

    states: list[ag.Node]
    drifts: list[ag.Node]
    controls: list[ag.Node] | None
    diffusions: list[ag.Node]

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def states_array(self) -> np.ndarray:
        """Stack state values into (T+1, B, 4)."""
        return np.stack([s.value for s in self.states], axis=0)

    def controls_array(self) -> np.ndarray:
        if self.controls is None:
            raise ValueError("rollout has no control sequence")
        return np.stack([c.value for c in self.controls], axis=0)


def _stack_increments(paths: BrownianPath | Sequence[BrownianPath], batch: int) -> np.ndarray:
    if isinstance(paths, BrownianPath):
        paths = [paths]
    if len(paths) != batch:
        raise ValueError(f"need {batch} Brownian paths for the batch, got {len(paths)}")
    horizons = {p.horizon for p in paths}
    if len(horizons) > 1:
        raise ValueError(f"Brownian paths disagree on horizon: {sorted(horizons)}")
    # (T, B, 4)
    return np.stack([p.increments for p in paths], axis=1)


def rollout_learned(
    z0: ag.Node,
    sem: ag.Node,
    ctx: Sequence[ag.Node],
    paths: BrownianPath | Sequence[BrownianPath],
    drift_fn: DriftFn,
    diffusion_fn: DiffusionFn,
) -> LatentRollout:
    """Euler–Maruyama rollout of the learned-drift SDE.

    z_{t+1} = f(z_t, sem, ctx_t) + diag(g(z_t)) * dW_t. The recorded
    drift/diffusion lists are re-evaluations on detached copies of
    (z_t, sem, ctx_t): numerically identical to the live ones, but their
    gradients stop at the drift/diffusion parameters.
    """
    batch = z0.value.shape[0]
    inc = _stack_increments(paths, batch)
    T = inc.shape[0]
    if len(ctx) != T:
        raise ValueError(f"context length {len(ctx)} != path horizon {T}")

    sem_det = ag.detach(sem)
    states = [z0]
    drifts: list[ag.Node] = []
    diffusions: list[ag.Node] = []
    for t in range(T):
        z = states[-1]
        f_live = drift_fn(z, sem, ctx[t])
        g_live = diffusion_fn(z)
        states.append(f_live + g_live * ag.constant(inc[t]))

        z_det = ag.detach(z)
        drifts.append(drift_fn(z_det, sem_det, ag.detach(ctx[t])))
        diffusions.append(diffusion_fn(z_det))
    return LatentRollout(states=states, drifts=drifts, controls=None, diffusions=diffusions)


def rollout_bicycle(
    s0: ag.Node,
    paths: BrownianPath | Sequence[BrownianPath],
    controller: Controller,
    params: BicycleParams,
    diffusion_fn: DiffusionFn,
) -> LatentRollout:
    """Euler–Maruyama rollout of the bicycle-model SDE under the controller.

    Uses the same diffusion network as `rollout_learned` (caller passes the
    identical function) and, during training, the same Brownian paths. The
    recorded drifts stay live so the prediction loss can reach the
    controller; the kinematic loss detaches them on its side.
    """
    batch = s0.value.shape[0]
    inc = _stack_increments(paths, batch)
    states = [s0]
    drifts: list[ag.Node] = []
    controls: list[ag.Node] = []
    diffusions: list[ag.Node] = []
    for t in range(inc.shape[0]):
        s = states[-1]
        u = controller.apply_node(s)
        h = bicycle_drift_node(s, u, params)
        g = diffusion_fn(s)
        states.append(h + g * ag.constant(inc[t]))
        drifts.append(h)
        controls.append(u)
        diffusions.append(g)
    return LatentRollout(states=states, drifts=drifts, controls=controls, diffusions=diffusions)


def kinematic_kl_loss(
    learned: LatentRollout,
    bike: LatentRollout,
    diffusions: Sequence[ag.Node] | None = None,
) -> ag.Node:
    """KL between the two SDE solutions under shared noise.

    sum_t 0.5 * || diag(g(z_t))^{-1} (drift_learned[t] - drift_bike[t]) ||^2,
    averaged over the batch. The bicycle drifts are detached here, and the
    learned side records detached-input evaluations, so the only parameters
    this loss can update are the drift and diffusion networks.
    """
    if learned.horizon != bike.horizon:
        raise ValueError(f"rollout horizons differ: {learned.horizon} vs {bike.horizon}")
    if diffusions is None:
        diffusions = learned.diffusions
    if len(diffusions) != learned.horizon:
        raise ValueError(
            f"need {learned.horizon} diffusion evaluations, got {len(diffusions)}"
        )
    T = learned.horizon
    if T == 0:
        return ag.constant(0.0)
    batch = learned.drifts[0].value.shape[0]
    total = None
    for t in range(T):
        gap = learned.drifts[t] - ag.detach(bike.drifts[t])
        scaled = gap * ag.reciprocal(diffusions[t])
        term = ag.sum(ag.square(scaled))
        total = term if total is None else total + term
    return total * (0.5 / batch)
