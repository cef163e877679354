"""Trajectory evaluation: jerk, acceleration distance, ADE/FDE, steering readout.

Everything here is plain numpy over waypoint arrays. The only model-aware
function is `steering_histogram`, which asks the model object for its
estimated controls and never looks inside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Published full-scale reference figures (Argoverse benchmark) for context
# only; the desk-scale synthetic runs in this repo are not comparable.
REFERENCE_FULL_SCALE = {
    "mean_jerk": 0.40,  # m/s^3
    "jerk_violation_rate": 0.05,
    "ade": 1.39,  # m
    "fde": 2.98,  # m
}

JERK_VIOLATION_THRESHOLD = 0.9  # m/s^3; comfort onset is around 0.3


@dataclass(frozen=True)
class JerkStats:
    mean_abs_jerk: float
    violation_rate: float
    counts: np.ndarray
    bin_edges: np.ndarray


@dataclass(frozen=True)
class AccelDistance:
    w1: float


@dataclass(frozen=True)
class SteeringStats:
    mean: float
    sigma: float
    exceed_one_sigma: float
    counts: np.ndarray
    bin_edges: np.ndarray
    n_samples: int


def jerk_profile(traj, delta: float) -> np.ndarray:
    """Per-step jerk magnitudes from third-order forward differences.

    traj: (n,) or (n, d) positions at spacing delta; returns n-3 magnitudes
    ||x[t+3] - 3 x[t+2] + 3 x[t+1] - x[t]|| / delta^3.
    """
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 1:
        traj = traj[:, None]
    if traj.shape[0] < 4:
        raise ValueError(f"need >= 4 waypoints for jerk, got {traj.shape[0]}")
    d3 = traj[3:] - 3 * traj[2:-1] + 3 * traj[1:-2] - traj[:-3]
    return np.linalg.norm(d3, axis=1) / delta**3


def acceleration_profile(traj, delta: float) -> np.ndarray:
    """Forward-difference acceleration of speed: diff(||diff(pos)||/delta)/delta."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 1:
        traj = traj[:, None]
    if traj.shape[0] < 3:
        raise ValueError(f"need >= 3 waypoints for acceleration, got {traj.shape[0]}")
    speeds = np.linalg.norm(np.diff(traj, axis=0), axis=1) / delta
    return np.diff(speeds) / delta


def _histogram(values: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:  # all mass in one spot; give the bins some width
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(values, bins=bins, range=(lo, hi))


def jerk_stats(trajs, delta: float, threshold: float = JERK_VIOLATION_THRESHOLD,
               bins: int = 50) -> JerkStats:
    """Pooled jerk statistics; a trajectory violates if its max jerk > threshold."""
    if len(trajs) == 0:
        raise ValueError("need at least one trajectory")
    profiles = [jerk_profile(t, delta) for t in trajs]
    pooled = np.concatenate(profiles)
    counts, edges = _histogram(pooled, bins)
    return JerkStats(
        mean_abs_jerk=float(np.mean(pooled)),
        violation_rate=float(np.mean([float(np.max(p) > threshold) for p in profiles])),
        counts=counts,
        bin_edges=edges,
    )


def accel_wasserstein(sample_a, sample_b) -> AccelDistance:
    """1-D Wasserstein-1 between two empirical distributions.

    Equal sizes reduce to the sorted coupling mean |a_(i) - b_(i)|; unequal
    sizes integrate |CDF_a - CDF_b| over the merged support.
    """
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(sample_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    if a.size == b.size:
        return AccelDistance(w1=float(np.mean(np.abs(a - b))))
    support = np.sort(np.concatenate([a, b]))
    cdf_a = np.searchsorted(a, support, side="right") / a.size
    cdf_b = np.searchsorted(b, support, side="right") / b.size
    w1 = np.sum(np.abs(cdf_a[:-1] - cdf_b[:-1]) * np.diff(support))
    return AccelDistance(w1=float(w1))


def ade_fde(pred, truth) -> tuple[float, float]:
    """Average and final Euclidean displacement errors."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[0] < 1:
        raise ValueError(f"trajectory shapes differ: {pred.shape} vs {truth.shape}")
    err = np.linalg.norm(pred - truth, axis=-1)
    return float(np.mean(err)), float(err[-1])


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt(np.sum(rx**2) * np.sum(ry**2))
    if denom == 0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def sample_generalized_pareto(shape: float, scale: float, loc: float,
                              n: int, seed: int) -> np.ndarray:
    """Inverse-CDF sampler for a generalized Pareto reference distribution."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if n < 1:
        raise ValueError("need n >= 1 samples")
    u = np.random.default_rng(seed).uniform(size=n)
    if shape == 0.0:
        return loc - scale * np.log1p(-u)
    return loc + scale * ((1.0 - u) ** (-shape) - 1.0) / shape


def constant_velocity_baseline(history, horizon: int, delta: float,
                               window: int = 5) -> np.ndarray:
    """Extrapolate the mean velocity of the last `window` steps for `horizon` steps.

    The averaging window tames observation noise; a single-step estimate
    would make the baseline look far worse than constant velocity really is.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.shape[0] < 2:
        raise ValueError("need at least two history points")
    w = min(window, history.shape[0] - 1)
    vel = (history[-1] - history[-1 - w]) / (w * delta)
    steps = np.arange(1, horizon + 1)[:, None] * delta
    return history[-1] + steps * vel


def steering_histogram(model, scenarios, bins: int = 50,
                       band: tuple[float, float] | None = None) -> SteeringStats:
    """Distribution of the controller's normalized steering angles.

    Rolls out the bicycle SDE for each scenario (noise-free, posterior mean)
    via `model.estimate_controls`, pools u2 / u2_max over all steps, and
    reports mean, sigma, and the fraction of values outside one sigma of
    `band` (defaulting to this sample's own mean and sigma).
    """
    est = model.estimate_controls(scenarios)
    values = np.asarray(est["u2_normalized"], dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("no steering samples collected")
    mean = float(np.mean(values))
    sigma = float(np.std(values))
    b_mean, b_sigma = band if band is not None else (mean, sigma)
    if b_sigma > 0:
        exceed = float(np.mean(np.abs(values - b_mean) > b_sigma))
    else:
        exceed = 0.0
    counts, edges = _histogram(values, bins)
    return SteeringStats(mean=mean, sigma=sigma, exceed_one_sigma=exceed,
                         counts=counts, bin_edges=edges, n_samples=values.size)


def histogram_csv(counts: np.ndarray, bin_edges: np.ndarray) -> str:
    """Render a histogram as `bin_left,bin_right,count` CSV text."""
    lines = ["bin_left,bin_right,count"]
    for i, c in enumerate(counts):
        lines.append(f"{float(bin_edges[i])!r},{float(bin_edges[i + 1])!r},{int(c)}")
    return "\n".join(lines) + "\n"
