import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltvtol.allocation import (LB_ABS, UB_ABS, ActiveFailures, Allocator, AllocatorState, FailureMonitor,
                                 FailureSpec, Trigger, allocate, apply_failure, combine_failures,
                                 controllable_wrench, effectiveness_matrix, thrust_wrench_setpoint)
from tiltvtol.model import PlantState, VehicleParams, Wrench

from .oracles import projected_gradient_lsq

P = VehicleParams()
HOVER_U = np.concatenate([np.full(4, 0.8160), np.zeros(4)])


def random_state(rng):
    return PlantState(
        velocity=rng.uniform([-5, -5, -3], [30, 5, 3]),
        attitude=rng.uniform(-0.5, 0.5, 3),
        body_rates=rng.uniform(-0.5, 0.5, 3),
        tilt=rng.uniform(P.tilt_range[0], P.tilt_range[1], 4),
    )


def central_jacobian(state, u, h=1e-6):
    J = np.zeros((6, 8))
    for j in range(8):
        e = np.zeros(8)
        e[j] = h
        J[:, j] = (controllable_wrench(state, u + e, P).as_vector()
                   - controllable_wrench(state, u - e, P).as_vector()) / (2 * h)
    return J


# -- effectiveness ------------------------------------------------------------


def test_surface_columns_vanish_at_rest():
    A = effectiveness_matrix(PlantState(), HOVER_U, P)
    assert np.all(A[:, 4:] == 0)


def test_hover_thrust_column():
    A = effectiveness_matrix(PlantState(), HOVER_U, P)
    assert A[2, :4] == pytest.approx([-2 * 27.36 * 0.8160] * 4)
    assert A[2, 0] == pytest.approx(-44.65, abs=0.01)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = random_state(rng)
        u = np.concatenate([rng.uniform(0.1, 0.95, 4), rng.uniform(-0.9, 0.9, 4)])
        A = effectiveness_matrix(s, u, P)
        J = central_jacobian(s, u)
        scale = max(1.0, np.abs(J).max())
        assert np.abs(A - J).max() <= 1e-5 * scale


def test_omega_floor_keeps_stopped_rotor_controllable():
    u = HOVER_U.copy()
    u[0] = 0.0
    assert np.all(effectiveness_matrix(PlantState(), u, P)[:, 0] == 0)
    assert np.any(effectiveness_matrix(PlantState(), u, P, omega_floor=0.05)[:, 0] != 0)


# -- allocate -----------------------------------------------------------------


def test_zero_increment_keeps_trim():
    s = PlantState()
    alloc = AllocatorState(HOVER_U.copy(), controllable_wrench(s, HOVER_U, P))
    res = allocate(alloc.W_prev, alloc, effectiveness_matrix(s, HOVER_U, P))
    assert res.delta_u == pytest.approx(np.zeros(8), abs=1e-12)
    assert res.u_sp == pytest.approx(HOVER_U)
    assert not res.saturated


def test_achievable_increment_is_met_exactly():
    rng = np.random.default_rng(4)
    s = PlantState(velocity=[20, 0, 0], tilt=[0.6] * 4)
    u = np.array([0.7, 0.7, 0.7, 0.7, 0.1, -0.1, 0.0, 0.2])
    A = effectiveness_matrix(s, u, P)
    for _ in range(20):
        du_star = rng.uniform(-0.05, 0.05, 8)
        alloc = AllocatorState(u.copy(), Wrench.from_vector(np.zeros(6)))
        res = allocate(Wrench.from_vector(A @ du_star), alloc, A)
        assert np.linalg.norm(res.residual.as_vector()) <= 1e-8
        lb, ub = LB_ABS - u, UB_ABS - u
        _, f_oracle = projected_gradient_lsq(A[None], (A @ du_star)[None], lb[None], ub[None], iters=20_000)
        r = A @ res.delta_u - A @ du_star
        assert 0.5 * r @ r + 0.5e-8 * res.delta_u @ res.delta_u == pytest.approx(f_oracle[0], abs=1e-8)


def test_failure_bounds_from_limits():
    trig = Trigger(at_time=0.0)
    specs = [FailureSpec.limit(1, None, 0.7, trig), FailureSpec.limit(7, -0.2, 0.2, trig)]
    eff = combine_failures(specs, P)
    assert eff.lb_abs == pytest.approx([0, 0, 0, 0, -1, -1, -1, -0.2])
    assert eff.ub_abs == pytest.approx([1, 0.7, 1, 1, 1, 1, 1, 0.2])
    assert not eff.dead.any()


def test_motor_out_zeroes_column_and_command():
    eff = combine_failures([FailureSpec.motor_out(0, Trigger(at_time=0.0))], P)
    assert eff.dead[0] and eff.dead.sum() == 1
    alloc = Allocator(P)
    s = PlantState()
    for _ in range(5):
        res = alloc.update(Wrench([0, 0, -72.86], [0, 0, 0]), s, eff)
        assert res.u_sp[0] == 0.0
    # the remaining three rotors cannot balance pitch and roll alone at hover
    assert res.saturated


def test_saturation_flag_for_impossible_demand():
    alloc = Allocator(P)
    res = alloc.update(Wrench([0, 0, -500.0], [0, 0, 0]), PlantState())
    assert res.saturated
    assert np.all(res.u_sp[:4] == 1.0)


def test_incremental_updates_converge_on_achievable_wrench():
    # repeated updates against a fixed reachable wrench act like Newton steps on W(u) = W_sp
    s = PlantState(velocity=[15, 0, 0], tilt=[0.4] * 4)
    target = controllable_wrench(s, np.array([0.6, 0.65, 0.7, 0.55, 0.2, -0.1, 0.1, 0.0]), P)
    alloc = Allocator(P)
    for _ in range(8):
        res = alloc.update(target, s)
    assert np.abs(res.delta_u).max() < 1e-9
    assert not res.saturated
    err = controllable_wrench(s, res.u_sp, P).as_vector() - target.as_vector()
    assert np.abs(err).max() < 1e-8


def _box_ok(u, lb, ub):
    return np.all(u >= lb - 1e-12) and np.all(u <= ub + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([None, "motor", "limit", "both"]))
def test_commands_always_inside_bounds(seed, kind):
    rng = np.random.default_rng(seed)
    trig = Trigger(at_time=0.0)
    specs = {None: [], "motor": [FailureSpec.motor_out(int(rng.integers(4)), trig)],
             "limit": [FailureSpec.limit(int(rng.integers(8)), None, 0.3, trig)],
             "both": [FailureSpec.motor_out(2, trig), FailureSpec.limit(6, -0.1, 0.1, trig)]}[kind]
    eff = combine_failures(specs, P)
    alloc = Allocator(P, u_init=np.concatenate([rng.uniform(0, 1, 4), rng.uniform(-1, 1, 4)]))
    s = random_state(rng)
    for _ in range(3):
        W = Wrench(rng.normal(scale=40, size=3), rng.normal(scale=3, size=3))
        res = alloc.update(W, s, eff)
        assert _box_ok(res.u_sp, eff.lb_abs, eff.ub_abs)
        assert np.all(res.u_sp[eff.dead] == 0)


# -- failure triggers ---------------------------------------------------------


def test_time_trigger_threshold_and_latch():
    f = FailureSpec.motor_out(0, Trigger(at_time=10.0))
    mon = FailureMonitor([f], P)
    assert mon.update(9.99, PlantState()) == []
    assert mon.update(10.0, PlantState()) == [f]
    assert mon.update(10.01, PlantState()) == []
    assert mon.fired_at == [10.0] and mon.first_trigger_time == 10.0
    assert mon.effects.dead[0]


def test_yaw_trigger_crossing():
    f = FailureSpec.motor_out(0, Trigger(at_yaw=math.radians(90)))
    mon = FailureMonitor([f], P)
    assert mon.update(0.0, PlantState(attitude=[0, 0, math.radians(89.9)])) == []
    assert mon.update(0.01, PlantState(attitude=[0, 0, math.radians(90.1)])) == [f]


def test_yaw_trigger_ignores_wrap_seam():
    f = FailureSpec.motor_out(0, Trigger(at_yaw=math.pi))
    prev = PlantState(attitude=[0, 0, 0.5])
    now = PlantState(attitude=[0, 0, -0.5])
    assert not apply_failure(f, 0.0, now, prev)


def test_airspeed_trigger():
    f = FailureSpec.servo_jam(0, math.radians(60), Trigger(at_airspeed=8.0))
    assert not apply_failure(f, 0.0, PlantState(velocity=[7.9, 0, 0]))
    assert apply_failure(f, 0.0, PlantState(velocity=[8.0, 0, 0]))


def test_servo_jam_effect():
    eff = combine_failures([FailureSpec.servo_jam(0, math.radians(60), Trigger(at_time=0))], P)
    assert eff.tilt_jam == {0: pytest.approx(math.radians(60))}
    assert eff.any and not ActiveFailures.nominal(P).any


def test_trigger_needs_one_condition():
    with pytest.raises(ValueError):
        Trigger()
    with pytest.raises(ValueError):
        Trigger(at_time=1.0, at_yaw=0.0)


def test_thrust_wrench_setpoint_split():
    w = thrust_wrench_setpoint(80.0, [math.pi / 2] * 4, [0.1, 0.2, 0.3], P)
    assert w.force == pytest.approx([80.0, 0, 0])
    assert w.moment == pytest.approx([0.1, 0.2, 0.3])
