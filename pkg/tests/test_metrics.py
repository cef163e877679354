"""Metric implementations checked against closed forms and scipy oracles."""

import numpy as np
import pytest
import scipy.stats

from kinsde.metrics import (
    AccelDistance,
    accel_wasserstein,
    acceleration_profile,
    ade_fde,
    constant_velocity_baseline,
    histogram_csv,
    jerk_profile,
    jerk_stats,
    sample_generalized_pareto,
    spearman,
    steering_histogram,
)


# --- jerk ---------------------------------------------------------------------


def test_jerk_zero_for_affine_trajectories():
    t = np.arange(20)[:, None]
    traj = np.hstack([3.0 * t + 1.0, -2.0 * t + 5.0])
    assert np.all(jerk_profile(traj, delta=0.1) == 0.0)


def test_jerk_zero_for_quadratic_positions():
    t = np.arange(20, dtype=np.float64)
    traj = np.column_stack([0.5 * t**2, 2.0 * t**2 - t])
    assert np.allclose(jerk_profile(traj, delta=0.1), 0.0, atol=1e-9)


def test_jerk_of_cubic_is_six():
    # x(t) = t^3 at unit spacing: the third forward difference is exactly 6.
    t = np.arange(10, dtype=np.float64)
    j = jerk_profile(t**3, delta=1.0)
    assert j.shape == (7,)
    assert np.allclose(j, 6.0, atol=1e-12)


def test_jerk_requires_four_points():
    with pytest.raises(ValueError):
        jerk_profile(np.zeros((3, 2)), delta=0.1)


def test_jerk_stats_violation_counting():
    smooth = np.column_stack([np.arange(10, dtype=np.float64), np.zeros(10)])
    t = np.arange(10, dtype=np.float64)
    rough = np.column_stack([t**3, np.zeros(10)])  # jerk 6 > 0.9 at delta=1
    stats = jerk_stats([smooth, rough], delta=1.0)
    assert stats.violation_rate == 0.5
    stats_smooth = jerk_stats([smooth, smooth], delta=1.0)
    assert stats_smooth.violation_rate == 0.0
    assert stats_smooth.mean_abs_jerk == 0.0


def test_jerk_stats_permutation_invariant():
    rng = np.random.default_rng(3)
    trajs = [rng.normal(size=(12, 2)).cumsum(axis=0) for _ in range(6)]
    a = jerk_stats(trajs, delta=0.1)
    b = jerk_stats(trajs[::-1], delta=0.1)
    assert a.mean_abs_jerk == pytest.approx(b.mean_abs_jerk, rel=1e-12)
    assert a.violation_rate == b.violation_rate
    assert np.array_equal(a.counts, b.counts)


def test_acceleration_profile_constant_accel():
    # v = 2 + 0.5 t -> accel 0.5 everywhere, extracted from positions.
    delta = 0.1
    t = np.arange(30) * delta
    x = 2.0 * t + 0.25 * t**2
    accel = acceleration_profile(np.column_stack([x, np.zeros_like(x)]), delta)
    assert np.allclose(accel, 0.5, atol=1e-9)


# --- Wasserstein ---------------------------------------------------------------


def test_w1_trivial_examples():
    assert accel_wasserstein([0.0], [0.0]).w1 == 0.0
    assert accel_wasserstein([0.0], [1.0]).w1 == 1.0
    assert accel_wasserstein([0.0, 1.0], [1.0, 2.0]).w1 == 1.0


def test_w1_identical_samples():
    rng = np.random.default_rng(5)
    a = rng.normal(size=100)
    assert accel_wasserstein(a, a.copy()).w1 == 0.0


def test_w1_matches_scipy_on_unequal_sizes():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.normal(size=rng.integers(1, 200))
        b = rng.normal(loc=rng.normal(), size=rng.integers(1, 200))
        got = accel_wasserstein(a, b).w1
        want = scipy.stats.wasserstein_distance(a, b)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_w1_metric_properties():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b, c = (rng.normal(size=rng.integers(2, 50)) for _ in range(3))
        dab = accel_wasserstein(a, b).w1
        dba = accel_wasserstein(b, a).w1
        dac = accel_wasserstein(a, c).w1
        dcb = accel_wasserstein(c, b).w1
        assert dab >= 0
        assert dab == pytest.approx(dba, abs=1e-9)
        assert dab <= dac + dcb + 1e-9


def test_w1_rejects_empty():
    with pytest.raises(ValueError):
        accel_wasserstein([], [1.0])


# --- ADE / FDE ------------------------------------------------------------------


def test_ade_fde_examples():
    truth = np.column_stack([np.arange(5, dtype=np.float64), np.zeros(5)])
    assert ade_fde(truth, truth) == (0.0, 0.0)
    assert ade_fde(truth + np.array([1.0, 0.0]), truth) == (1.0, 1.0)


def test_ade_bounded_by_max_step_error_and_fde_is_last():
    rng = np.random.default_rng(11)
    truth = rng.normal(size=(30, 2))
    pred = truth + rng.normal(size=(30, 2))
    ade, fde = ade_fde(pred, truth)
    step_err = np.linalg.norm(pred - truth, axis=1)
    assert ade <= np.max(step_err) + 1e-15
    assert fde == pytest.approx(step_err[-1], abs=1e-15)


def test_ade_fde_rejects_mismatch():
    with pytest.raises(ValueError):
        ade_fde(np.zeros((3, 2)), np.zeros((4, 2)))


# --- Spearman -------------------------------------------------------------------


def test_spearman_perfect_monotone():
    x = np.array([1.0, 2.0, 5.0, 9.0])
    assert spearman(x, x**3) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)


def test_spearman_matches_scipy_with_ties():
    rng = np.random.default_rng(13)
    for _ in range(20):
        n = int(rng.integers(5, 60))
        x = rng.integers(0, 6, size=n).astype(float)  # plenty of ties
        y = x + rng.normal(size=n)
        want = scipy.stats.spearmanr(x, y).statistic
        assert spearman(x, y) == pytest.approx(want, abs=1e-12)


# --- generalized Pareto sampler ---------------------------------------------------


def test_genpareto_quantiles_match_scipy():
    n = 200_000
    for shape, scale, loc in [(0.2, 1.5, 0.1), (0.0, 2.0, -1.0), (-0.3, 0.7, 0.0)]:
        draws = sample_generalized_pareto(shape, scale, loc, n, seed=17)
        qs = np.linspace(0.05, 0.95, 10)
        got = np.quantile(draws, qs)
        want = scipy.stats.genpareto.ppf(qs, c=shape, loc=loc, scale=scale)
        assert np.allclose(got, want, rtol=0.03, atol=0.02)


def test_genpareto_validates_args():
    with pytest.raises(ValueError):
        sample_generalized_pareto(0.1, 0.0, 0.0, 10, seed=1)
    with pytest.raises(ValueError):
        sample_generalized_pareto(0.1, 1.0, 0.0, 0, seed=1)


# --- constant-velocity baseline ----------------------------------------------------


def test_cv_baseline_extends_exact_line():
    delta = 0.1
    t = np.arange(20)[:, None] * delta
    hist = np.hstack([3.0 * t, -1.0 * t])
    pred = constant_velocity_baseline(hist, horizon=10, delta=delta)
    t_fut = (np.arange(1, 11)[:, None] * delta) + t[-1]
    want = np.hstack([3.0 * t_fut, -1.0 * t_fut])
    assert np.allclose(pred, want, atol=1e-12)


# --- steering histogram -------------------------------------------------------------


class _StubModel:
    def __init__(self, values):
        self._values = np.asarray(values)

    def estimate_controls(self, scenarios):
        return {"u2_normalized": self._values}


def test_steering_histogram_zero_controller():
    stats = steering_histogram(_StubModel(np.zeros((4, 30))), scenarios=None)
    assert stats.mean == 0.0
    assert stats.sigma == 0.0
    assert stats.exceed_one_sigma == 0.0
    assert stats.counts.sum() == 4 * 30
    # all mass lands in a single bin whose span contains zero
    hot = int(np.argmax(stats.counts))
    assert stats.counts[hot] == 4 * 30
    assert stats.bin_edges[hot] <= 0.0 <= stats.bin_edges[hot + 1]


def test_steering_histogram_band_exceedance():
    rng = np.random.default_rng(19)
    vals = rng.normal(size=5000)
    stats = steering_histogram(_StubModel(vals), scenarios=None)
    # Normal distribution: ~31.7% outside one sigma.
    assert 0.25 < stats.exceed_one_sigma < 0.40
    wide = steering_histogram(_StubModel(vals), scenarios=None, band=(0.0, 10.0))
    assert wide.exceed_one_sigma == 0.0


def test_histogram_csv_round_trip():
    counts = np.array([1, 2, 3])
    edges = np.array([0.0, 0.5, 1.0, 1.5])
    text = histogram_csv(counts, edges)
    lines = text.strip().split("\n")
    assert lines[0] == "bin_left,bin_right,count"
    assert len(lines) == 4
    parsed = [line.split(",") for line in lines[1:]]
    assert [int(p[2]) for p in parsed] == [1, 2, 3]
    assert float(parsed[1][0]) == 0.5


def test_accel_distance_is_frozen_value():
    d = AccelDistance(w1=0.25)
    assert d.w1 == 0.25
