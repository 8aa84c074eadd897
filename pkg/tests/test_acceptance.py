"""Acceptance criteria 1-12, each checked at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary) before
asserting. The closed-loop tests fly the shipped scenarios at full length and
share runs through a module-level cache.
"""
import ast
import inspect
import math
import time

import numpy as np
import pytest

import tiltvtol.control.mpc as mpc_module
from tiltvtol.cli import main as cli_main
from tiltvtol.control import MpcWeights, soft_cost
from tiltvtol.model import ActuatorCommand, PlantState, integrate_rk4
from tiltvtol.optim import BoundedLsqProblem, solve_bounded_lsq
from tiltvtol.scenarios import builtin_scenarios, load_config
from tiltvtol.sim import airspeed, run

from .conftest import ACCEPTANCE_LINES
from .test_allocation import P, central_jacobian, random_state
from .test_model import VACUUM, _smooth_trajectory

_RUNS = {}


def flown(name, controller=None):
    """Run a shipped scenario once per session; returns (log, metrics, scenario)."""
    key = (name, controller)
    if key not in _RUNS:
        sc, sim = load_config(builtin_scenarios()[name])
        if controller is not None:
            from dataclasses import replace
            sim = replace(sim, controller=controller)
        lg, m = run(sc, sim)
        _RUNS[key] = (lg, m, sc)
    return _RUNS[key]


def record(n, checks):
    """``checks`` maps a description to (ok, measured value text)."""
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}: {v} [{'ok' if c else 'x'}]" for k, (c, v) in checks.items())
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def completed(lg, sc):
    return lg.fault is None and len(lg) == int(round(sc.duration * 400))


# -- closed loop --------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_hover_trim():
    t0 = time.perf_counter()
    lg, m, sc = flown("hover")
    wall = time.perf_counter() - t0
    steady = lg.t >= 2.0
    vmax = float(np.linalg.norm(lg.v[steady], axis=1).max())
    rotor = float(lg.rotor_cmd[steady].mean())
    record(1, {
        "steady max |v| < 0.1 m/s": (vmax < 0.1, f"{vmax:.4f}"),
        "mean rotor 0.816 +- 0.02": (abs(rotor - 0.816) <= 0.02, f"{rotor:.4f}"),
        "runtime < 10 s": (wall < 10.0, f"{wall:.1f} s"),
        "completed": (completed(lg, sc), lg.fault or "yes"),
    })


@pytest.mark.slow
def test_criterion_2_acceleration():
    lg, m, sc = flown("acceleration")
    ramp_end = sc.ramp_time
    # "reaches" is read as within 1% of the target; an exponential approach never hits it exactly
    reached = np.flatnonzero(lg.v[:, 0] >= 0.99 * sc.target_speed)
    t_reach = float(lg.t[reached[0]]) if reached.size else None
    reach_ok = t_reach is not None and abs(t_reach - ramp_end) <= 3.0
    tilt = np.degrees(lg.tilt.mean(axis=1))
    vz = float(np.abs(lg.v[:, 2]).max())
    src = inspect.getsource(mpc_module)
    names = {n.id for n in ast.walk(ast.parse(src)) if isinstance(n, ast.Name)}
    no_modes = "FlightMode" not in names and set(lg.mode) == {"MPC"}
    record(2, {
        "v_x reaches 27.74 (1%) within ramp end +- 3 s": (reach_ok, "never (max %.2f m/s)" % lg.v[:, 0].max()
                                                      if t_reach is None else f"t = {t_reach:.2f} s"),
        "|v_z| <= 1 m/s": (vz <= 1.0, f"{vz:.3f}"),
        "mean tilt ~0 -> >= 85 deg": (abs(tilt[0]) < 1.0 and tilt.max() >= 85.0,
                                      f"{tilt[0]:.1f} -> max {tilt.max():.1f}"),
        "no discrete mode in MPC path": (no_modes, str(sorted(set(lg.mode)))),
    })


@pytest.mark.slow
def test_criterion_3_pitch_envelope_and_compare(tmp_path):
    lg, m, sc = flown("acceleration")
    mpc_pitch = math.degrees(m.max_abs_pitch)
    out = tmp_path / "cmp"
    status = cli_main(["compare", "acceleration", "--out", str(out), "--no-plot"])
    rows = {line.split()[0]: line.split()[1:] for line in (out / "compare.txt").read_text().splitlines()[1:]}
    cmp_mpc, cmp_pid = (float(x) for x in rows["max_pitch"])
    # the compare run doubles as the second identical run for criterion 12
    lg.write_csv(tmp_path / "fixture.csv")
    _RUNS["determinism"] = (tmp_path / "fixture.csv").read_bytes() == (out / "log_mpc.csv").read_bytes()
    record(3, {
        "MPC max |pitch| <= 25 deg": (mpc_pitch <= 25.0, f"{mpc_pitch:.2f}"),
        "compare: PID max pitch > MPC": (cmp_pid > cmp_mpc and status == 0, f"{cmp_pid:.2f} vs {cmp_mpc:.2f}"),
    })


@pytest.mark.slow
def test_criterion_4_accel_decel():
    lg, m, sc = flown("accel_decel")
    t_brake = sc.ramp_time + sc.hold
    braking = lg.t >= t_brake
    min_cmd = float(np.degrees(lg.tilt_cmd[braking]).min())
    vz = float(np.abs(lg.v[:, 2]).max())
    record(4, {
        "min commanded tilt while braking <= 0 deg": (min_cmd <= 0.0, f"{min_cmd:.2f}"),
        "|v_z| <= 1 m/s": (vz <= 1.0, f"{vz:.3f}"),
        "completed": (completed(lg, sc), lg.fault or "yes"),
    })


@pytest.mark.slow
def test_criterion_5_circle():
    lg, m, sc = flown("circle")
    steady = lg.t >= sc.circle_start + 5.0
    roll = float(np.degrees(np.abs(lg.attitude[steady, 0])).mean())
    circ = lg.t >= sc.circle_start
    speed_err = np.linalg.norm(lg.v[circ, :2], axis=1) - np.linalg.norm(lg.v_sp[circ, :2], axis=1)
    rmse = float(np.sqrt(np.mean(speed_err**2)))
    rad = m.circle_radius_error
    record(5, {
        "steady roll in [12, 25] deg": (12.0 <= roll <= 25.0, f"{roll:.2f}"),
        "horizontal speed RMSE < 1.5 m/s": (rmse < 1.5, f"{rmse:.3f}"),
        "radial error < 15 m": (rad is not None and rad < 15.0, "na" if rad is None else f"{rad:.2f}"),
        "completed": (completed(lg, sc), lg.fault or "yes"),
    })


@pytest.mark.slow
def test_criterion_6_servo_jam():
    lg, m, sc = flown("servo_jam")
    rec = m.recovery_time_after_failure(1.0)
    jam_ok = m.failure_time is not None and float(np.degrees(lg.tilt[-1, 0])) == pytest.approx(60.0, abs=0.5)
    va = airspeed(lg)
    i = None if m.failure_time is None else int(round(m.failure_time * 400))
    record(6, {
        "jam fired at Va = 8 m/s, servo held at 60 deg": (
            jam_ok and i is not None and va[i] >= 8.0 > va[i - 1],
            "never" if i is None else f"t = {m.failure_time:.3f} s, tilt1 {np.degrees(lg.tilt[-1, 0]):.1f}"),
        "velocity error < 1 m/s within 5 s": (rec is not None and rec <= 5.0,
                                              "never" if rec is None else f"{rec:.2f} s"),
        "completed": (completed(lg, sc), lg.fault or "yes"),
    })


@pytest.mark.slow
def test_criterion_7_motor_out():
    lg, m, sc = flown("motor_out")
    r_roll = m.recovery_time_after_failure(math.radians(5), "roll")
    r_yaw = m.recovery_time_after_failure(math.radians(5), "yaw")
    circ = lg.t >= sc.circle_start
    turned = float(np.abs(np.diff(np.unwrap(lg.attitude[circ, 2]))).sum()) if circ.any() else 0.0
    lg2, m2, sc2 = flown("motor_out_r150")
    after = lg2.t >= (m2.failure_time if m2.failure_time is not None else np.inf)
    sat = float(lg2.saturated[after].mean()) if after.any() else 0.0

    def fmt(x):
        return "never" if x is None else f"{x:.2f} s"

    record(7, {
        "R250 completes a full circle": (completed(lg, sc) and turned >= 2 * math.pi,
                                         f"{lg.fault or 'no fault'}, turned {math.degrees(turned):.0f} deg"),
        "roll error < 5 deg within 5 s": (r_roll is not None and r_roll <= 5.0, fmt(r_roll)),
        "yaw error < 5 deg within 5 s": (r_yaw is not None and r_yaw <= 5.0, fmt(r_yaw)),
        "R150 saturated persistently after failure": (after.any() and sat >= 0.9, f"{100 * sat:.0f}% of samples"),
        "R150 no crash": (lg2.fault is None, lg2.fault or "none"),
    })


# -- component checks ---------------------------------------------------------


def test_criterion_8_allocation_qp_oracle(qp_oracle_100):
    (A, b, lo, hi), f_oracle = qp_oracle_100
    t0 = time.perf_counter()
    xs = [solve_bounded_lsq(BoundedLsqProblem(A[k], b[k], lo[k], hi[k])).x for k in range(100)]
    wall = time.perf_counter() - t0
    err = max(abs(0.5 * np.sum((A[k] @ xs[k] - b[k]) ** 2) + 0.5e-8 * xs[k] @ xs[k] - f_oracle[k])
              for k in range(100))
    record(8, {
        "objective within 1e-8 of oracle": (err <= 1e-8, f"max diff {err:.1e}"),
        "runtime < 10 s": (wall < 10.0, f"{wall:.2f} s"),
    })


def test_criterion_9_effectiveness_jacobian():
    from tiltvtol.allocation import effectiveness_matrix
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        s = random_state(rng)
        u = np.concatenate([rng.uniform(0.1, 0.95, 4), rng.uniform(-0.9, 0.9, 4)])
        A = effectiveness_matrix(s, u, P)
        J = central_jacobian(s, u)
        worst = max(worst, float(np.abs(A - J).max() / max(1.0, np.abs(J).max())))
    record(9, {"analytic vs central differences (relative)": (worst <= 1e-5, f"{worst:.1e}")})


def test_criterion_10_soft_cost_table():
    w = MpcWeights()
    cells = {(0, 0): 0.10, (0, 5): 0.0092, (45, 0): 1.50e34, (90, 0): 2.30e69}
    errs = {c: abs(soft_cost(c[1], c[0], w) / ref - 1) for c, ref in cells.items()}
    record(10, {f"cell {c}": (e <= 0.02, f"{100 * e:.2f}%") for c, e in errs.items()})


def test_criterion_11_integrator():
    s = PlantState()
    for _ in range(400):
        s = integrate_rk4(s, ActuatorCommand(), 1 / 400, VACUUM)
    err = abs(s.velocity[2] - 9.81)
    x1, x2, x3 = (_smooth_trajectory(dt) for dt in (0.02, 0.01, 0.005))
    order = math.log2(np.linalg.norm(x1 - x2) / np.linalg.norm(x2 - x3))
    record(11, {
        "free fall |v - g t| at 1 s <= 1e-9": (err <= 1e-9, f"{err:.1e}"),
        "convergence order >= 3.9": (order >= 3.9, f"{order:.2f}"),
    })


@pytest.mark.slow
def test_criterion_12_performance_and_determinism(tmp_path):
    if ("acceleration", None) in _RUNS:
        lg = _RUNS[("acceleration", None)][0]
        wall = lg.meta["wall_time"]
    else:
        lg, _, _ = flown("acceleration")
        wall = lg.meta["wall_time"]
    same = _RUNS.get("determinism")
    if same is None:
        sc, sim = load_config(builtin_scenarios()["acceleration"])
        again, _ = run(sc, sim)
        lg.write_csv(tmp_path / "a.csv")
        again.write_csv(tmp_path / "b.csv")
        same = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    record(12, {
        "25 s acceleration wall time < 300 s": (wall < 300.0, f"{wall:.1f} s"),
        "two runs byte-identical CSV": (same, "identical" if same else "differ"),
    })
