"""Incremental control allocation with actuator-failure accommodation.

The eight fast actuators (four rotor speeds, two ailerons, elevator, rudder)
are allocated around the previous setpoint::

    u_sp = u_trim + du,   du = argmin 0.5 ||A du - (W_sp - W(u_trim))||^2,
    lb_abs - u_trim <= du <= ub_abs - u_trim

with ``A`` the Jacobian of the controllable wrench at ``u_trim``. Tilt angles
are not allocated; they enter ``A`` at their measured values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (N_ALLOC, N_ROTORS, PlantState, VehicleParams, Wrench, aero_effectiveness, airdata_arrays,
                    aero_wrench_arrays, rotation_body_to_inertial, rotor_directions, rotor_wrench_arrays,
                    wrap_angle)
from .optim import BoundedLsqProblem, solve_bounded_lsq

LB_ABS = np.array([0.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0])
UB_ABS = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])

SAT_FORCE = 0.5     # N
SAT_MOMENT = 0.1    # N m


def _airdata(state: PlantState, p: VehicleParams):
    R = rotation_body_to_inertial(state.attitude)
    return airdata_arrays(R.T @ state.velocity, p.aero.rho)


def controllable_wrench(state: PlantState, u, p: VehicleParams) -> Wrench:
    """Rotor wrench plus control-surface moments for actuator vector ``u``."""
    u = np.asarray(u, dtype=float)
    f, m = rotor_wrench_arrays(u[:N_ROTORS], state.tilt, p)
    Va, alpha, beta, qbar = _airdata(state, p)
    _, m_a = aero_wrench_arrays(Va, alpha, beta, qbar, u[N_ROTORS:], p.aero)
    return Wrench(f, m + m_a)


def effectiveness_matrix(state: PlantState, u_trim, p: VehicleParams, omega_floor: float = 0.0) -> np.ndarray:
    """6 x 8 Jacobian of the controllable wrench with respect to the actuators."""
    u_trim = np.asarray(u_trim, dtype=float)
    omega = np.maximum(u_trim[:N_ROTORS], omega_floor)
    n = rotor_directions(state.tilt)                      # (4, 3)
    dT = 2.0 * p.c_F * omega                              # d thrust / d omega
    A = np.zeros((6, N_ALLOC))
    A[:3, :N_ROTORS] = (dT[:, None] * n).T
    arm = np.cross(p.rotor_pos, n)
    A[3:, :N_ROTORS] = (dT[:, None] * arm + (2.0 * p.c_K * p.spin_sign * omega)[:, None] * n).T
    Va, _, _, qbar = _airdata(state, p)
    a = p.aero
    e = aero_effectiveness(Va, a)
    roll = e * qbar * a.S_a * a.b * a.C_Leff
    A[3, 4] = 0.5 * roll
    A[3, 5] = -0.5 * roll
    A[4, 6] = e * qbar * a.S_e * a.c_bar * a.C_Meff
    A[5, 7] = e * qbar * a.S_r * a.b * a.C_Neff
    return A


# ---------------------------------------------------------------------------
# Failures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trigger:
    at_time: float | None = None
    at_yaw: float | None = None          # rad, fires when yaw crosses this value
    at_airspeed: float | None = None     # m/s, fires when airspeed first reaches this value

    def __post_init__(self):
        if sum(v is not None for v in (self.at_time, self.at_yaw, self.at_airspeed)) != 1:
            raise ValueError("a trigger needs exactly one condition")


@dataclass(frozen=True)
class FailureSpec:
    """Bound overrides for the 8 allocated actuators and 4 tilt servos (NaN = unchanged)."""

    trigger: Trigger
    lb_abs: np.ndarray = field(default_factory=lambda: np.full(12, np.nan))
    ub_abs: np.ndarray = field(default_factory=lambda: np.full(12, np.nan))
    tilt_jam: tuple[int, float] | None = None
    name: str = ""

    def __post_init__(self):
        lb = np.asarray(self.lb_abs, dtype=float).reshape(12)
        ub = np.asarray(self.ub_abs, dtype=float).reshape(12)
        both = ~np.isnan(lb) & ~np.isnan(ub)
        if np.any(lb[both] > ub[both]):
            raise ValueError("failure override has lb > ub")
        object.__setattr__(self, "lb_abs", lb)
        object.__setattr__(self, "ub_abs", ub)

    @classmethod
    def motor_out(cls, index: int, trigger: Trigger) -> "FailureSpec":
        lb = np.full(12, np.nan)
        ub = np.full(12, np.nan)
        lb[index] = ub[index] = 0.0
        return cls(trigger, lb, ub, name=f"motor {index + 1} out")

    @classmethod
    def limit(cls, index: int, lo: float | None, hi: float | None, trigger: Trigger) -> "FailureSpec":
        lb = np.full(12, np.nan)
        ub = np.full(12, np.nan)
        if lo is not None:
            lb[index] = lo
        if hi is not None:
            ub[index] = hi
        return cls(trigger, lb, ub, name=f"actuator {index + 1} limited")

    @classmethod
    def servo_jam(cls, servo: int, angle: float, trigger: Trigger) -> "FailureSpec":
        return cls(trigger, tilt_jam=(servo, angle), name=f"servo {servo + 1} jammed at {math.degrees(angle):.0f} deg")


def apply_failure(fail: FailureSpec, t: float, state: PlantState, prev_state: PlantState | None = None,
                  p: VehicleParams | None = None) -> bool:
    """Whether ``fail``'s trigger condition holds at this instant (the caller latches it)."""
    tr = fail.trigger
    if tr.at_time is not None:
        return t >= tr.at_time - 1e-12
    if tr.at_airspeed is not None:
        Va = float(np.linalg.norm(state.velocity))
        return Va >= tr.at_airspeed
    d = float(wrap_angle(state.attitude[2] - tr.at_yaw))
    if abs(d) < 1e-12:
        return True
    if prev_state is None:
        return False
    d0 = float(wrap_angle(prev_state.attitude[2] - tr.at_yaw))
    # a genuine crossing, not the +-pi wrap seam
    return (d0 < 0.0 <= d or d0 > 0.0 >= d) and abs(d - d0) < math.pi


@dataclass
class ActiveFailures:
    lb_abs: np.ndarray
    ub_abs: np.ndarray
    tilt_lb: np.ndarray
    tilt_ub: np.ndarray
    dead: np.ndarray                 # columns removed from the effectiveness matrix
    tilt_jam: dict[int, float]

    @classmethod
    def nominal(cls, p: VehicleParams) -> "ActiveFailures":
        return cls(LB_ABS.copy(), UB_ABS.copy(), np.full(4, p.tilt_range[0]), np.full(4, p.tilt_range[1]),
                   np.zeros(N_ALLOC, dtype=bool), {})

    @property
    def any(self) -> bool:
        return bool(self.dead.any() or self.tilt_jam or np.any(self.lb_abs != LB_ABS) or np.any(self.ub_abs != UB_ABS))


def combine_failures(specs, p: VehicleParams) -> ActiveFailures:
    eff = ActiveFailures.nominal(p)
    for f in specs:
        lb, ub = f.lb_abs, f.ub_abs
        for i in range(N_ALLOC):
            if not np.isnan(lb[i]):
                eff.lb_abs[i] = max(eff.lb_abs[i], lb[i])
            if not np.isnan(ub[i]):
                eff.ub_abs[i] = min(eff.ub_abs[i], ub[i])
        for j in range(4):
            if not np.isnan(lb[8 + j]):
                eff.tilt_lb[j] = max(eff.tilt_lb[j], lb[8 + j])
            if not np.isnan(ub[8 + j]):
                eff.tilt_ub[j] = min(eff.tilt_ub[j], ub[8 + j])
        if f.tilt_jam is not None:
            eff.tilt_jam[f.tilt_jam[0]] = f.tilt_jam[1]
    eff.ub_abs = np.maximum(eff.ub_abs, eff.lb_abs)
    eff.dead = (eff.lb_abs == 0.0) & (eff.ub_abs == 0.0)
    return eff


class FailureMonitor:
    """Evaluates triggers every plant step and latches them."""

    def __init__(self, specs, p: VehicleParams):
        self.specs = list(specs)
        self.p = p
        self.fired_at: list[float | None] = [None] * len(self.specs)
        self._prev: PlantState | None = None
        self.effects = ActiveFailures.nominal(p)

    def update(self, t: float, state: PlantState) -> list[FailureSpec]:
        newly = []
        for i, f in enumerate(self.specs):
            if self.fired_at[i] is None and apply_failure(f, t, state, self._prev, self.p):
                self.fired_at[i] = t
                newly.append(f)
        if newly:
            self.effects = combine_failures([f for f, ts in zip(self.specs, self.fired_at) if ts is not None], self.p)
        self._prev = state
        return newly

    @property
    def first_trigger_time(self) -> float | None:
        times = [t for t in self.fired_at if t is not None]
        return min(times) if times else None


# ---------------------------------------------------------------------------
# Allocation
# ---------------------------------------------------------------------------


@dataclass
class AllocatorState:
    u_trim: np.ndarray
    W_prev: Wrench = field(default_factory=Wrench)


@dataclass
class AllocationResult:
    u_sp: np.ndarray
    delta_u: np.ndarray
    residual: Wrench
    saturated: bool


def allocate(W_sp: Wrench, alloc: AllocatorState, A: np.ndarray, fail: ActiveFailures | None = None
             ) -> AllocationResult:
    """Solve for the actuator increment that best achieves ``W_sp - W_prev``."""
    lb_abs = LB_ABS if fail is None else fail.lb_abs
    ub_abs = UB_ABS if fail is None else fail.ub_abs
    A = np.array(A, dtype=float)
    if fail is not None and fail.dead.any():
        A[:, fail.dead] = 0.0
    dW = W_sp.as_vector() - alloc.W_prev.as_vector()
    u_trim = np.asarray(alloc.u_trim, dtype=float)
    lb = lb_abs - u_trim
    ub = ub_abs - u_trim
    # a trim point outside freshly tightened bounds is pulled back in
    ub = np.maximum(ub, lb)
    res = solve_bounded_lsq(BoundedLsqProblem(A, dW, lb, ub))
    du = res.x
    u_sp = np.clip(u_trim + du, lb_abs, ub_abs)
    r = A @ du - dW
    residual = Wrench(r[:3], r[3:])
    saturated = bool(np.linalg.norm(r[:3]) > SAT_FORCE or np.linalg.norm(r[3:]) > SAT_MOMENT)
    return AllocationResult(u_sp, u_sp - u_trim, residual, saturated)


class Allocator:
    """Runtime wrapper holding the trim point between calls."""

    def __init__(self, p: VehicleParams, u_init=None, omega_floor: float = 0.05):
        self.p = p
        self.omega_floor = omega_floor
        u0 = np.concatenate([np.full(4, p.hover_omega), np.zeros(4)]) if u_init is None else np.asarray(u_init, float)
        self.state = AllocatorState(u0.copy())

    def update(self, W_sp: Wrench, plant: PlantState, fail: ActiveFailures | None = None) -> AllocationResult:
        u_trim = self.state.u_trim
        if fail is not None:
            u_trim = np.clip(u_trim, fail.lb_abs, fail.ub_abs)
        self.state.W_prev = controllable_wrench(plant, u_trim, self.p)
        self.state.u_trim = u_trim
        A = effectiveness_matrix(plant, u_trim, self.p, self.omega_floor)
        out = allocate(W_sp, self.state, A, fail)
        self.state.u_trim = out.u_sp
        return out


def thrust_wrench_setpoint(thrust: float, tilt, torque, p: VehicleParams) -> Wrench:
    """Collective thrust split equally along each rotor's current tilt, plus a body torque."""
    f = 0.25 * thrust * rotor_directions(np.asarray(tilt, dtype=float)).sum(axis=0)
    return Wrench(f, np.asarray(torque, dtype=float))
