"""Bicycle-model drift and controller tests, mostly against hand-worked values."""

import math

import numpy as np
import pytest

from kinsde import autodiff as ag
from kinsde.bicycle import (
    BicycleParams,
    ControlInput,
    Controller,
    LatentState,
    bicycle_drift,
    bicycle_drift_node,
    controller_apply,
    slip_angle,
)

PARAMS = BicycleParams(l_f=1.5, l_r=1.5, delta=0.1)


def test_slip_angle_zero():
    assert slip_angle(0.0, PARAMS) == 0.0


def test_slip_angle_quarter_pi():
    # arctan(tan(pi/4) * 1.5 / 3.0) = arctan(0.5), worked by hand
    assert slip_angle(math.pi / 4, PARAMS) == pytest.approx(0.4636476090008061, abs=1e-12)


def test_slip_angle_is_odd():
    rng = np.random.default_rng(3)
    for u2 in rng.uniform(-1.5, 1.5, size=50):
        assert slip_angle(-u2, PARAMS) == -slip_angle(u2, PARAMS)


def test_slip_angle_sign_matches_steering():
    for u2 in (-1.2, -0.3, 0.3, 1.2):
        assert math.copysign(1, slip_angle(u2, PARAMS)) == math.copysign(1, u2)


def test_slip_angle_rejects_out_of_range():
    for bad in (math.pi / 2, -math.pi / 2, 2.0):
        with pytest.raises(ValueError):
            slip_angle(bad, PARAMS)


def test_drift_straight_line():
    s = bicycle_drift(LatentState(0, 0, 10, 0), ControlInput(0, 0), PARAMS)
    assert (s.x, s.y, s.v, s.psi) == (1.0, 0.0, 10.0, 0.0)


def test_drift_quarter_pi_steering():
    # Worked by hand: beta = arctan(0.5); displacement 1.0 along heading beta;
    # yaw gains delta * (v / l_r) * sin(beta).
    s = bicycle_drift(LatentState(0, 0, 10, 0), ControlInput(0, math.pi / 4), PARAMS)
    assert s.x == pytest.approx(0.8944271909999159, abs=1e-12)
    assert s.y == pytest.approx(0.4472135954999579, abs=1e-12)
    assert s.v == 10.0
    assert s.psi == pytest.approx(0.29814239699997197, abs=1e-12)


def test_drift_zero_speed_freezes_pose():
    s0 = LatentState(3.0, -2.0, 0.0, 0.7)
    s1 = bicycle_drift(s0, ControlInput(0.0, 0.4), PARAMS)
    assert (s1.x, s1.y, s1.v, s1.psi) == (s0.x, s0.y, s0.v, s0.psi)


def test_speed_conserved_without_acceleration():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        s0 = LatentState(*rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        u2 = rng.uniform(-1.4, 1.4)
        s1 = bicycle_drift(s0, ControlInput(0.0, u2), PARAMS)
        assert s1.v == s0.v  # exact: v + delta*0


def test_step_displacement_magnitude_is_delta_v():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        v = rng.uniform(0, 25)
        s0 = LatentState(rng.normal(), rng.normal(), v, rng.uniform(-3, 3))
        s1 = bicycle_drift(s0, ControlInput(rng.normal(), rng.uniform(-1.4, 1.4)), PARAMS)
        dist = math.hypot(s1.x - s0.x, s1.y - s0.y)
        assert dist == pytest.approx(PARAMS.delta * v, abs=1e-12)


def test_mirror_symmetry():
    rng = np.random.default_rng(9)
    for _ in range(10_000):
        v = rng.uniform(0, 20)
        u1 = rng.normal()
        u2 = rng.uniform(-1.4, 1.4)
        plus = bicycle_drift(LatentState(0, 0, v, 0), ControlInput(u1, u2), PARAMS)
        minus = bicycle_drift(LatentState(0, 0, v, 0), ControlInput(u1, -u2), PARAMS)
        assert minus.x == plus.x
        assert minus.y == -plus.y
        assert minus.psi == -plus.psi


def test_node_drift_matches_scalar_version():
    rng = np.random.default_rng(11)
    batch = 64
    states = np.column_stack(
        [
            rng.normal(size=batch) * 5,
            rng.normal(size=batch) * 5,
            rng.uniform(0, 20, size=batch),
            rng.uniform(-3, 3, size=batch),
        ]
    )
    controls = np.column_stack(
        [rng.normal(size=batch), rng.uniform(-1.4, 1.4, size=batch)]
    )
    out = bicycle_drift_node(ag.constant(states), ag.constant(controls), PARAMS)
    for i in range(batch):
        want = bicycle_drift(
            LatentState.from_array(states[i]),
            ControlInput(*controls[i]),
            PARAMS,
        )
        assert np.allclose(out.value[i], want.as_array(), atol=1e-12)


def test_node_drift_gradients_match_fd():
    rng = np.random.default_rng(13)
    states = np.column_stack(
        [rng.normal(size=3), rng.normal(size=3), rng.uniform(1, 15, size=3), rng.normal(size=3)]
    )
    controls = np.column_stack([rng.normal(size=3), rng.uniform(-1.0, 1.0, size=3)])
    w = rng.normal(size=(3, 4))

    ns, nc = ag.Node(states), ag.Node(controls)
    ag.backward(ag.sum(ag.mul(bicycle_drift_node(ns, nc, PARAMS), ag.constant(w))))

    def f_state(sv):
        out = bicycle_drift_node(ag.Node(sv), ag.Node(controls), PARAMS)
        return float(np.sum(out.value * w))

    def f_ctrl(cv):
        out = bicycle_drift_node(ag.Node(states), ag.Node(cv), PARAMS)
        return float(np.sum(out.value * w))

    eps = 1e-6
    for target, grad, f in ((states, ns.grad, f_state), (controls, nc.grad, f_ctrl)):
        fd = np.zeros_like(target)
        it = np.nditer(target, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = target[idx]
            target[idx] = orig + eps
            hi = f(target)
            target[idx] = orig - eps
            lo = f(target)
            target[idx] = orig
            fd[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6)) < 1e-4


def test_node_drift_shape_errors():
    with pytest.raises(ag.ShapeError):
        bicycle_drift_node(ag.constant(np.zeros((2, 3))), ag.constant(np.zeros((2, 2))), PARAMS)
    with pytest.raises(ag.ShapeError):
        bicycle_drift_node(ag.constant(np.zeros((2, 4))), ag.constant(np.zeros((3, 2))), PARAMS)


def test_params_validation():
    with pytest.raises(ValueError):
        BicycleParams(l_f=0.0)
    with pytest.raises(ValueError):
        BicycleParams(delta=-0.1)


def test_zero_weight_controller_outputs_zero():
    rng = np.random.default_rng(17)
    pi = Controller(rng)
    for p in pi.parameters():
        p.value = np.zeros_like(p.value)
    for _ in range(20):
        u = controller_apply(pi, LatentState(*rng.normal(size=4)))
        assert (u.u1, u.u2) == (0.0, 0.0)


def test_controller_steering_always_bounded():
    rng = np.random.default_rng(19)
    pi = Controller(rng, u2_max=0.6)
    # Inflate the weights so tanh runs deep into saturation.
    for p in pi.parameters():
        p.value = p.value + rng.normal(size=p.value.shape) * 10
    states = rng.normal(size=(100_000, 4)) * 50
    out = pi.apply_node(ag.constant(states))
    # tanh saturates to exactly 1.0 in float64, so the bound is attained
    # but never exceeded.
    assert np.max(np.abs(out.value[:, 1])) <= 0.6


def test_controller_u1_gradient_matches_fd():
    rng = np.random.default_rng(23)
    pi = Controller(rng)
    state = ag.constant(np.array([[0.3, -0.5, 4.0, 0.2]]))

    root = ag.sum(ag.take_slice(pi.apply_node(state), 0, 1))
    ag.backward(root)

    eps = 1e-5
    for name, p in pi.params.items():
        fd = np.zeros_like(p.value)
        it = np.nditer(p.value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.value[idx]
            p.value[idx] = orig + eps
            hi = float(pi.apply_node(state).value[0, 0])
            p.value[idx] = orig - eps
            lo = float(pi.apply_node(state).value[0, 0])
            p.value[idx] = orig
            fd[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        # Floor the denominator at 1e-4: below that, central differences are
        # dominated by round-off and the relative error is meaningless.
        rel = np.abs(p.grad - fd) / np.maximum(np.abs(fd), 1e-4)
        assert np.max(rel) < 1e-4, f"controller param {name} gradient mismatch"


def test_control_input_validates_steering():
    with pytest.raises(ValueError):
        ControlInput(0.0, math.pi / 2)
