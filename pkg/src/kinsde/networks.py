"""Learned mappings: scene features, posterior encoder, context encoder,
drift/diffusion networks, and the waypoint decoder.

All forward passes run on (B, d) batches of graph nodes so one training step
is a handful of matmuls instead of thousands of scalar ops. Coordinates
entering any network are expressed relative to the scenario frame and scaled
by COORD_SCALE to keep tanh units in their active range; the decoder undoes
the scaling on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ag
from .scenarios import Scenario

COORD_SCALE = 0.1  # meters -> network units
LANE_POINTS = 10  # lane polylines are resampled to this many vertices


def _clamp(x: ag.Node, lo: float, hi: float) -> ag.Node:
    # lo + relu(x - lo) - relu(x - hi): identity inside [lo, hi], flat outside.
    return ag.relu(x - lo) - ag.relu(x - hi) + lo


class MLP:
    """Fully-connected stack, tanh between layers, linear last layer.

    `final_tanh` bounds the output; `out_bias` presets the last bias (used to
    start the diffusion net at a sane magnitude).
    """

    def __init__(self, rng: np.random.Generator, sizes: list[int],
                 final_tanh: bool = False, out_bias: float = 0.0,
                 out_scale: float = 1.0):
        self.sizes = list(sizes)
        self.final_tanh = final_tanh
        self.weights: list[ag.Node] = []
        self.biases: list[ag.Node] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.normal(size=(n_in, n_out)) / np.sqrt(n_in)
            b = np.zeros((1, n_out))
            if i == len(sizes) - 2:
                w *= out_scale
                b += out_bias
            self.weights.append(ag.parameter(w))
            self.biases.append(ag.parameter(b))

    def __call__(self, x: ag.Node) -> ag.Node:
        ones = ag.constant(np.ones((x.value.shape[0], 1)))
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.matmul(h, w) + ag.matmul(ones, b)
            if i < last or self.final_tanh:
                h = ag.tanh(h)
        return h

    def parameters(self) -> list[ag.Node]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def named(self, prefix: str) -> dict[str, ag.Node]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.w"] = w
            out[f"{prefix}.{i}.b"] = b
        return out


# --- scene features -----------------------------------------------------------


@dataclass(frozen=True)
class SceneFeatures:
    """Fixed-width summary of one scenario (target, neighbors, lanes)."""

    x: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.x).all():
            raise ValueError("scene features must be finite")


def _resample(poly: np.ndarray, n: int) -> np.ndarray:
    """Arc-length resampling of a polyline to exactly n points."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.shape[0] == 1:
        return np.repeat(poly, n, axis=0)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(poly[:1], n, axis=0)
    grid = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(grid, s, poly[:, i]) for i in range(poly.shape[1])])


class FeatureExtractor:
    """Permutation-invariant scene encoder (the graph-network stand-in).

    Three blocks, concatenated: an encoding of the target history, a
    mean-pool over per-neighbor encodings, and a mean-pool over per-lane
    encodings. All coordinates are taken relative to the scenario frame, so
    the output is invariant to translating the whole scene.
    """

    def __init__(self, rng: np.random.Generator, k: int, feature_width: int = 64):
        third = feature_width // 3
        self.k = k
        self.widths = (feature_width - 2 * third, third, third)
        self.target_enc = MLP(rng, [2 * k, self.widths[0]], final_tanh=True)
        self.neighbor_enc = MLP(rng, [2 * k, self.widths[1]], final_tanh=True)
        self.lane_enc = MLP(rng, [2 * LANE_POINTS, self.widths[2]], final_tanh=True)

    def parameters(self) -> list[ag.Node]:
        return (self.target_enc.parameters() + self.neighbor_enc.parameters()
                + self.lane_enc.parameters())

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return {
            **self.target_enc.named(f"{prefix}.target"),
            **self.neighbor_enc.named(f"{prefix}.neighbor"),
            **self.lane_enc.named(f"{prefix}.lane"),
        }

    def _relative(self, pts: np.ndarray, frame: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - frame[:2]) * COORD_SCALE

    def features(self, scenarios: list[Scenario]) -> ag.Node:
        """Batched features, shape (B, feature_width)."""
        if not scenarios:
            raise ValueError("empty scenario batch")
        for s in scenarios:
            if s.target_history.shape[0] != self.k:
                raise ValueError(
                    f"scenario {s.id}: history length {s.target_history.shape[0]} != k={self.k}"
                )
        b = len(scenarios)

        targets = np.stack(
            [self._relative(s.target_history, s.frame).ravel() for s in scenarios]
        )
        out = [self.target_enc(ag.constant(targets))]
        out.append(self._pooled(
            [[self._relative(n, s.frame).ravel() for n in s.neighbor_histories]
             for s in scenarios],
            self.neighbor_enc, self.widths[1], b))
        out.append(self._pooled(
            [[self._relative(_resample(l, LANE_POINTS), s.frame).ravel()
              for l in s.lanes] for s in scenarios],
            self.lane_enc, self.widths[2], b))
        return ag.concat(out, axis=1)

    def _pooled(self, rows_per_scenario, enc: MLP, width: int, batch: int) -> ag.Node:
        flat = [row for rows in rows_per_scenario for row in rows]
        if not flat:
            return ag.constant(np.zeros((batch, width)))
        encoded = enc(ag.constant(np.stack(flat)))
        pool = np.zeros((batch, len(flat)))
        col = 0
        for i, rows in enumerate(rows_per_scenario):
            if rows:
                pool[i, col:col + len(rows)] = 1.0 / len(rows)
                col += len(rows)
        return ag.matmul(ag.constant(pool), encoded)

    def single(self, scenario: Scenario) -> SceneFeatures:
        return SceneFeatures(x=self.features([scenario]).value[0].copy())


# --- initial-state posterior ----------------------------------------------------


@dataclass
class LatentPosterior:
    """Diagonal Gaussian over the 4-D initial latent state, batched."""

    mean: ag.Node  # (B, 4)
    log_var: ag.Node  # (B, 4), clamped to [-10, 10]


class InitialStateEncoder:
    """Scene features -> posterior over the shared initial latent state."""

    def __init__(self, rng: np.random.Generator, feature_width: int, hidden: int = 64):
        # small output layer: a fresh posterior sits at the prior N(0, I)
        self.net = MLP(rng, [feature_width, hidden, hidden, 8], out_scale=0.01)

    def parameters(self) -> list[ag.Node]:
        return self.net.parameters()

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return self.net.named(prefix)

    def posterior(self, x: ag.Node) -> LatentPosterior:
        out = self.net(x)
        return LatentPosterior(
            mean=ag.take_slice(out, 0, 4),
            log_var=_clamp(ag.take_slice(out, 4, 8), -10.0, 10.0),
        )


def reparameterize(post: LatentPosterior, noise) -> ag.Node:
    """z0 = mean + exp(log_var / 2) * noise; the same z0 seeds both rollouts."""
    eps = noise if isinstance(noise, ag.Node) else ag.constant(noise)
    return post.mean + ag.exp(post.log_var * 0.5) * eps


def kl_regularizer(post: LatentPosterior) -> ag.Node:
    """KL(q || N(0, I)) for a diagonal Gaussian, averaged over the batch:
    0.5 * sum_i (mean_i^2 + exp(log_var_i) - log_var_i - 1)."""
    batch = post.mean.value.shape[0]
    inner = ag.square(post.mean) + ag.exp(post.log_var) - post.log_var - 1.0
    return ag.sum(inner) * (0.5 / batch)


# --- context encoder -------------------------------------------------------------


@dataclass
class ContextBundle:
    """Global semantics (B, 4) and per-step local contexts, T of (B, 8)."""

    sem: ag.Node
    ctx: list


class ContextEncoder:
    """Residual trunk over scene features with two heads.

    The per-step head sees the trunk output plus a normalized step phase
    t/T, so contexts vary along the horizon without a per-step weight.
    """

    def __init__(self, rng: np.random.Generator, feature_width: int, hidden: int = 64):
        self.w1 = ag.parameter(rng.normal(size=(feature_width, hidden)) / np.sqrt(feature_width))
        self.b1 = ag.parameter(np.zeros((1, hidden)))
        self.w2 = ag.parameter(rng.normal(size=(hidden, hidden)) / np.sqrt(hidden))
        self.b2 = ag.parameter(np.zeros((1, hidden)))
        self.sem_head = MLP(rng, [hidden, 4], out_scale=0.01)
        self.ctx_head = MLP(rng, [hidden + 1, 8], final_tanh=True, out_scale=0.01)

    def parameters(self) -> list[ag.Node]:
        return ([self.w1, self.b1, self.w2, self.b2]
                + self.sem_head.parameters() + self.ctx_head.parameters())

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return {
            f"{prefix}.trunk.0.w": self.w1, f"{prefix}.trunk.0.b": self.b1,
            f"{prefix}.trunk.1.w": self.w2, f"{prefix}.trunk.1.b": self.b2,
            **self.sem_head.named(f"{prefix}.sem"),
            **self.ctx_head.named(f"{prefix}.ctx"),
        }

    def bundle(self, x: ag.Node, T: int) -> ContextBundle:
        if T < 1:
            raise ValueError(f"horizon must be >= 1, got {T}")
        batch = x.value.shape[0]
        ones = ag.constant(np.ones((batch, 1)))
        h1 = ag.tanh(ag.matmul(x, self.w1) + ag.matmul(ones, self.b1))
        h2 = ag.tanh(ag.matmul(h1, self.w2) + ag.matmul(ones, self.b2)) + h1
        sem = self.sem_head(h2)
        ctx = []
        for t in range(T):
            phase = ag.constant(np.full((batch, 1), (t + 1) / T))
            ctx.append(self.ctx_head(ag.concat([h2, phase], axis=1)))
        return ContextBundle(sem=sem, ctx=ctx)


# --- SDE nets ---------------------------------------------------------------------


class DriftNet:
    """Next-state drift f(z, sem, ctx_t): a residual step on top of z.

    The skip connection plus a small-scale output layer make a fresh net
    close to the identity map, so the learned SDE starts out hugging the
    bicycle SDE instead of running away from it (the drift-gap loss grows
    quadratically with how far the two paths separate over the horizon).
    """

    def __init__(self, rng: np.random.Generator, hidden: int = 64):
        self.net = MLP(rng, [16, hidden, hidden, 4], out_scale=0.01)

    def parameters(self) -> list[ag.Node]:
        return self.net.parameters()

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return self.net.named(prefix)

    def __call__(self, z: ag.Node, sem: ag.Node, ctx_t: ag.Node) -> ag.Node:
        return z + self.net(ag.concat([z, sem, ctx_t], axis=1))


class DiffusionNet:
    """Diagonal diffusion g(z): softplus output shifted by g_min > 0."""

    def __init__(self, rng: np.random.Generator, hidden: int = 64, g_min: float = 1e-3):
        self.g_min = g_min
        # Start diffusion near a uniform 0.3: the -1.05 bias puts softplus
        # there and the small output scale keeps the spread tight. Entries
        # far below that act as 1/g^2 amplifiers on the drift-gap loss, so
        # a sloppy start here destabilizes the whole first epoch.
        self.net = MLP(rng, [4, hidden, 4], out_bias=-1.05, out_scale=0.01)

    def parameters(self) -> list[ag.Node]:
        return self.net.parameters()

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return self.net.named(prefix)

    def __call__(self, z: ag.Node) -> ag.Node:
        return ag.softplus(self.net(z)) + self.g_min


class Decoder:
    """Shared per-step head mapping one latent state to one 2-D waypoint.

    Reads the first two latent components as the scaled planar offset and
    adds a small learned correction from the full state. Starting from a
    near-pure projection matters beyond optimization comfort: the latent
    system has an exact mirror symmetry (flip latent y, yaw, and steering
    together and every loss is unchanged), so a decoder free to pick either
    handedness settles in an arbitrary basin. Anchoring the readout to the
    identity projection selects the convention where latent axes align with
    world axes, which is what makes latent sweeps steer the right way.

    Outputs are in meters relative to the scenario frame; the 1/COORD_SCALE
    factor keeps the trainable core in tanh-friendly range.
    """

    def __init__(self, rng: np.random.Generator, hidden: int = 64):
        self.net = MLP(rng, [4, hidden, hidden, 2], out_scale=0.01)

    def parameters(self) -> list[ag.Node]:
        return self.net.parameters()

    def named(self, prefix: str) -> dict[str, ag.Node]:
        return self.net.named(prefix)

    def _decode(self, z: ag.Node) -> ag.Node:
        position = ag.take_slice(z, 0, 2, axis=1)
        return (position + self.net(z)) * (1.0 / COORD_SCALE)

    def waypoints(self, states: list[ag.Node]) -> list[ag.Node]:
        """Decode waypoint t from state z_t for t = 1..T (z_0 is not decoded)."""
        if len(states) < 2:
            raise ValueError("need at least one post-seed state to decode")
        return [self._decode(z) for z in states[1:]]
