"""Multi-rate closed-loop simulation.

Schedule (all loops tick at t = 0, then on their own period, zero-order hold
in between): plant RK4 at ``plant_hz``, attitude loop + allocation at
``attitude_hz``, velocity controller (MPC or baseline) at ``velocity_hz``.
Failure triggers are evaluated every plant step. Identical inputs give
bit-identical logs; nothing here is randomized.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import Allocator, FailureMonitor, thrust_wrench_setpoint
from .control import (AttitudeGains, BaselineConfig, BaselineController, MpcController, attitude_step,
                      mpc_state)
from .model import (PlantState, SimulationFault, rotation_body_to_inertial, rk4_vector,
                    wrap_angle)
from .optim import NumericFail, SolverStatus
from .scenarios import ScenarioConfig, SimConfig, hover_state, velocity_setpoint

log = logging.getLogger(__name__)

# CSV column groups in file order: (name, width)
COLUMNS = (
    ("t", 1), ("v_sp", 3), ("v", 3), ("attitude", 3), ("attitude_sp", 3), ("tilt", 4), ("tilt_cmd", 4),
    ("rotor_cmd", 4), ("surfaces", 4), ("wrench_residual", 6), ("solver_status", 1), ("solver_iterations", 1),
    ("saturated", 1), ("mode", 1), ("position", 3), ("thrust_sp", 1), ("failure_active", 1),
)
_AXES = {3: ("x", "y", "z"), 6: ("fx", "fy", "fz", "mx", "my", "mz")}
_TEXT = {"solver_status", "mode"}


def csv_header() -> list[str]:
    out = []
    for name, n in COLUMNS:
        if n == 1:
            out.append(name)
        else:
            out.extend(f"{name}_{s}" for s in _AXES.get(n, [str(i + 1) for i in range(n)]))
    return out


@dataclass(frozen=True)
class LogRecord:
    t: float
    v_sp: np.ndarray
    v: np.ndarray
    attitude: np.ndarray
    attitude_sp: np.ndarray
    tilt: np.ndarray
    tilt_cmd: np.ndarray
    rotor_cmd: np.ndarray
    surfaces: np.ndarray
    wrench_residual: np.ndarray
    solver_status: str
    solver_iterations: int
    saturated: bool
    mode: str
    position: np.ndarray
    thrust_sp: float
    failure_active: bool


class SimLog:
    """Column-oriented log, one row per plant step."""

    def __init__(self, n: int):
        self.n = 0
        self._cap = n
        self.data = {name: np.zeros((n, w)) if w > 1 else np.zeros(n) for name, w in COLUMNS if name not in _TEXT}
        self.solver_status = [""] * n
        self.mode = [""] * n
        self.failure_time: float | None = None
        self.fault: str | None = None
        self.fault_time: float | None = None
        self.events: list[tuple[float, str]] = []
        self.meta: dict = {}

    def append(self, **row):
        i = self.n
        for k, v in row.items():
            if k == "solver_status":
                self.solver_status[i] = v
            elif k == "mode":
                self.mode[i] = v
            else:
                self.data[k][i] = v
        self.n += 1

    def trim(self):
        for k in self.data:
            self.data[k] = self.data[k][: self.n]
        self.solver_status = self.solver_status[: self.n]
        self.mode = self.mode[: self.n]

    def __len__(self):
        return self.n

    def __getattr__(self, name):
        data = self.__dict__.get("data")
        if data is not None and name in data:
            return data[name][: self.__dict__["n"]]
        raise AttributeError(name)

    def __getitem__(self, i: int) -> LogRecord:
        if not -self.n <= i < self.n:
            raise IndexError(i)
        i %= self.n
        d = self.data
        return LogRecord(
            float(d["t"][i]), d["v_sp"][i].copy(), d["v"][i].copy(), d["attitude"][i].copy(),
            d["attitude_sp"][i].copy(), d["tilt"][i].copy(), d["tilt_cmd"][i].copy(), d["rotor_cmd"][i].copy(),
            d["surfaces"][i].copy(), d["wrench_residual"][i].copy(), self.solver_status[i],
            int(d["solver_iterations"][i]), bool(d["saturated"][i]), self.mode[i], d["position"][i].copy(),
            float(d["thrust_sp"][i]), bool(d["failure_active"][i]),
        )

    def __iter__(self):
        return (self[i] for i in range(self.n))

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header())
            for i in range(self.n):
                row = []
                for name, width in COLUMNS:
                    if name in _TEXT:
                        row.append(getattr(self, name)[i])
                    elif name in ("solver_iterations", "saturated", "failure_active"):
                        row.append(int(self.data[name][i]))
                    elif width == 1:
                        row.append(repr(float(self.data[name][i])))
                    else:
                        row.extend(repr(float(x)) for x in self.data[name][i])
                w.writerow(row)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _settle_index(ok: np.ndarray) -> int | None:
    """First index after which ``ok`` holds for every later sample."""
    if ok.size == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return 0 if bad.size == 0 else int(bad[-1]) + 1


@dataclass
class Metrics:
    rmse_v: np.ndarray
    max_abs_pitch: float
    max_abs_vz: float
    circle_radius_error: float | None = None
    failure_time: float | None = None
    log: SimLog | None = field(default=None, repr=False)

    def settle_time_to(self, v_target: float, tol: float, axis: int = 0) -> float | None:
        lg = self.log
        idx = _settle_index(np.abs(lg.v[:, axis] - v_target) < tol)
        return None if idx is None else float(lg.t[idx])

    def recovery_time_after_failure(self, tol: float, error: str = "velocity") -> float | None:
        """Seconds from the failure trigger until the tracking error stays below ``tol``.

        ``error`` is ``"velocity"`` (norm of v - v_sp, m/s), ``"roll"`` or ``"yaw"``
        (attitude tracking error, rad). None when no failure fired.
        """
        if self.failure_time is None:
            return None
        lg = self.log
        sel = lg.t >= self.failure_time
        if error == "velocity":
            e = np.linalg.norm(lg.v[sel] - lg.v_sp[sel], axis=1)
        elif error in ("roll", "pitch", "yaw"):
            k = ("roll", "pitch", "yaw").index(error)
            e = np.abs(wrap_angle(lg.attitude[sel, k] - lg.attitude_sp[sel, k]))
        else:
            raise ValueError(f"unknown error signal {error!r}")
        idx = _settle_index(e < tol)
        return None if idx is None else float(lg.t[sel][idx] - self.failure_time)

    def as_dict(self) -> dict:
        return {
            "rmse_vx": float(self.rmse_v[0]),
            "rmse_vy": float(self.rmse_v[1]),
            "rmse_vz": float(self.rmse_v[2]),
            "max_abs_pitch_deg": math.degrees(self.max_abs_pitch),
            "max_abs_vz": self.max_abs_vz,
            "circle_radius_error": self.circle_radius_error,
            "failure_time": self.failure_time,
        }


def fit_circle(xy: np.ndarray) -> tuple[np.ndarray, float]:
    """Algebraic least-squares circle through points ``xy`` (n, 2)."""
    A = np.column_stack([2.0 * xy, np.ones(len(xy))])
    b = (xy**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:2]
    return c, float(math.sqrt(sol[2] + c @ c))


def metrics_from_log(lg: SimLog, window: tuple[float, float] | None = None) -> Metrics:
    if len(lg) == 0:
        raise ValueError("empty log")
    sel = np.ones(len(lg), dtype=bool) if window is None else (lg.t >= window[0]) & (lg.t <= window[1])
    err = lg.v[sel] - lg.v_sp[sel]
    rmse = np.sqrt(np.mean(err**2, axis=0))
    radius_err = None
    if "circle_window" in lg.meta:
        t0, R = lg.meta["circle_window"], lg.meta["radius"]
        cs = lg.t >= t0
        if cs.sum() > 10:
            c, _ = fit_circle(lg.position[cs, :2])
            radius_err = float(np.max(np.abs(np.linalg.norm(lg.position[cs, :2] - c, axis=1) - R)))
    return Metrics(rmse, float(np.max(np.abs(lg.attitude[:, 1]))), float(np.max(np.abs(lg.v[:, 2]))),
                   radius_err, lg.failure_time, lg)


def write_metrics(m: Metrics, path: str | Path, extra: dict | None = None):
    items = m.as_dict()
    if extra:
        items.update(extra)
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {'na' if v is None else (f'{v:.6g}' if isinstance(v, float) else v)}\n")


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------


def _ticks(k: int, hz: int, plant_hz: int) -> bool:
    return k == 0 or (k * hz) // plant_hz != ((k - 1) * hz) // plant_hz


def run(scenario: ScenarioConfig, sim: SimConfig | None = None, *, progress=None) -> tuple[SimLog, Metrics]:
    """Fly ``scenario`` and return the full log and its metrics."""
    sim = sim or scenario.sim_config()
    p = scenario.params
    gains = scenario.gains or AttitudeGains.default_for(p)
    dt = 1.0 / sim.plant_hz
    dt_v = 1.0 / sim.velocity_hz
    n_steps = int(round(sim.duration * sim.plant_hz))

    state = scenario.initial or hover_state(p)
    x = state.to_vector()
    omega = state.actuators.rotor_speed.copy()
    surf = state.actuators.surface.copy()

    allocator = Allocator(p, np.concatenate([omega, surf]))
    monitor = FailureMonitor(sim.failures, p)
    baseline = BaselineController(p, scenario.baseline or BaselineConfig(thrust_max=4 * p.thrust_per_rotor_max))
    mpc = MpcController(p, scenario.weights, gains, scenario.mpc) if sim.controller == "mpc" else None
    using_mpc = mpc is not None

    lg = SimLog(n_steps)
    lg.meta.update(scenario=scenario.name, controller=sim.controller)
    if scenario.circle_start is not None:
        # judge the circle once the turn-in transient has passed
        lg.meta.update(circle_window=scenario.circle_start + 5.0, radius=scenario.radius)

    psi_sp = x[6:9].copy()
    thrust_sp = p.weight
    tilt_target = x[12:16].copy()
    torque = np.zeros(3)
    prev_rate = x[9:12].copy()
    prev_rate_v = x[9:12].copy()
    u_sp = np.concatenate([omega, surf])
    residual = np.zeros(6)
    saturated = False
    status, iters, mode = "", 0, "MPC" if using_mpc else ""
    v_sp = velocity_setpoint(scenario, 0.0)
    tilt_lock = None
    wall0 = time.perf_counter()

    for k in range(n_steps):
        t = k * dt
        st = PlantState.from_vector(x)
        if monitor.update(t, st):
            if lg.failure_time is None:
                lg.failure_time = t
            lg.events.append((t, "failure: " + ", ".join(f.name for f, ts in zip(monitor.specs, monitor.fired_at)
                                                       if ts == t)))
        eff = monitor.effects
        if eff.tilt_jam and sim.jam_accommodation and tilt_lock is None:
            # uniform tilts keep the tilt-induced yaw and pitch moments at zero under an even thrust split
            tilt_lock = np.full(4, np.mean(list(eff.tilt_jam.values())))
            tilt_lock[list(eff.tilt_jam)] = list(eff.tilt_jam.values())
            if mpc is not None:
                mpc.lock_tilts(tilt_lock)
            lg.events.append((t, f"servos held at {math.degrees(tilt_lock.mean()):.1f} deg"))

        try:
            if _ticks(k, sim.velocity_hz, sim.plant_hz):
                v_sp = velocity_setpoint(scenario, t)
                if using_mpc:
                    xm = mpc_state(x[3:6], x[12:16], x[6:9], x[9:12], prev_rate_v)
                    out = mpc.step(xm, v_sp)
                    status, iters = out.status.value, out.iterations
                    if not out.status.ok:
                        if not sim.fallback:
                            raise NumericFail(f"MPC solver returned {out.status.value}")
                        lg.events.append((t, f"MPC {out.status.value}, falling back to baseline"))
                        log.warning("t=%.3f s: MPC %s, falling back to baseline", t, out.status.value)
                        using_mpc = False
                        baseline.last_thrust = thrust_sp
                    else:
                        psi_sp, thrust_sp, tilt_target = out.psi_sp, out.thrust_sp, out.tilt_target
                        mode = "MPC"
                if not using_mpc:
                    out = baseline.step(v_sp, st, dt_v)
                    psi_sp, thrust_sp, tilt_target = out.psi_sp, out.thrust_sp, out.tilt_target
                    mode = out.mode.value
                    if mpc is None:
                        status, iters = "", 0
                prev_rate_v = x[9:12].copy()

            if _ticks(k, sim.attitude_hz, sim.plant_hz):
                torque = attitude_step(psi_sp, st, gains, prev_rate)
                prev_rate = x[9:12].copy()
                W_sp = thrust_wrench_setpoint(thrust_sp, x[12:16], torque, p)
                res = allocator.update(W_sp, st, eff)
                u_sp = res.u_sp
                residual = res.residual.as_vector()
                saturated = res.saturated
        except NumericFail as exc:
            lg.fault, lg.fault_time = f"solver failure: {exc}", t
            break

        # failures latch on the plant step they fire, not on the next allocation tick
        u_sp = np.clip(u_sp, eff.lb_abs, eff.ub_abs)
        tilt_cmd = np.clip(tilt_target if tilt_lock is None else tilt_lock, eff.tilt_lb, eff.tilt_ub)
        for j, ang in eff.tilt_jam.items():
            tilt_cmd[j] = ang
        tilt_rate = np.clip((tilt_cmd - x[12:16]) / sim.servo_tau, -p.tilt_rate_max, p.tilt_rate_max)
        if sim.rotor_tau > 0:
            omega = omega + (u_sp[:4] - omega) * (1.0 - math.exp(-dt / sim.rotor_tau))
        else:
            omega = u_sp[:4]
        surf = u_sp[4:]

        lg.append(t=t, v_sp=v_sp, v=x[3:6], attitude=x[6:9], attitude_sp=psi_sp, tilt=x[12:16], tilt_cmd=tilt_cmd,
                  rotor_cmd=u_sp[:4], surfaces=surf, wrench_residual=residual, solver_status=status,
                  solver_iterations=iters, saturated=saturated, mode=mode, position=x[0:3], thrust_sp=thrust_sp,
                  failure_active=eff.any)

        try:
            x = rk4_vector(x, omega, surf, tilt_rate, dt, p)
        except SimulationFault as exc:
            lg.fault, lg.fault_time = f"simulation fault: {exc}", t
            break
        if progress is not None and k % sim.plant_hz == 0:
            progress(t)

    lg.trim()
    lg.meta["wall_time"] = time.perf_counter() - wall0
    if lg.fault:
        log.error("run aborted at t=%.3f s: %s", lg.fault_time, lg.fault)
    return lg, metrics_from_log(lg)


def airspeed(lg: SimLog) -> np.ndarray:
    """Body-frame airspeed per log row (no wind in the simulator)."""
    R = rotation_body_to_inertial(lg.attitude)
    return np.linalg.norm(np.einsum("nji,nj->ni", R, lg.v), axis=1)


__all__ = ["COLUMNS", "LogRecord", "Metrics", "SimLog", "SimConfig", "airspeed", "csv_header", "fit_circle",
           "metrics_from_log", "run", "write_metrics"]
