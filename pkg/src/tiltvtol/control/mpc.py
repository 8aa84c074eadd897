"""Unified velocity MPC.

One controller for hover, transition and wing-borne flight: the optimizer
picks attitude setpoints, collective thrust and the four tilt rates, and the
configuration change falls out of the cost (there is no flight-mode variable).

State (16): ``[v (3, inertial), tilt (4), att (3), att_rate (3), att_rate_prev (3)]``
Input (8):  ``[tilt_rate (4), thrust (1), att_sp (3)]``

The problem is posed in a heading-aligned frame: inertial velocities and yaw
are rotated by a reference heading before solving (the course of the
velocity setpoint, or the current yaw when the setpoint is slow). The model
has no preferred heading, so this is exact; it lets the attitude cost and the
setpoint box act on yaw relative to the flight direction.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import (GRAVITY, VehicleParams, aero_wrench_arrays, airdata_arrays, rotation_body_to_inertial,
                     rotor_directions, wrap_angle)
from ..optim import NlpProblem, NlpSolution, SolverStatus, solve_nlp
from .attitude import AttitudeGains, attitude_torque

NX = 16
NU = 8
V = slice(0, 3)
TILT = slice(3, 7)
ATT = slice(7, 10)
RATE = slice(10, 13)
RATE_PREV = slice(13, 16)
U_TILT_RATE = slice(0, 4)
U_THRUST = 4
U_ATT = slice(5, 8)


@dataclass(frozen=True)
class MpcWeights:
    Q_ref: np.ndarray = field(default_factory=lambda: np.array([20.0, 10.0, 50.0]))
    Q_f: np.ndarray = field(default_factory=lambda: np.array([20.0, 10.0, 50.0]))
    Q_psi: np.ndarray = field(default_factory=lambda: np.array([10.0, 20.0, 10.0]))
    Q_psidot: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0, 3.0]))
    # input order: tilt rates (4), thrust, roll/pitch/yaw setpoints
    R_u: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0, 1.0, 0.025, 10.0, 20.0, 10.0]))
    # soft tilt/speed cost exp(a*v*chi + b*chi + c*v + d), chi = mean tilt in degrees
    a: float = -0.33
    b: float = 1.8
    c: float = -0.477
    d: float = -2.303

    def __post_init__(self):
        for name in ("Q_ref", "Q_f", "Q_psi", "Q_psidot", "R_u"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, v)
        if self.R_u.shape != (NU,):
            raise ValueError("R_u needs one weight per input")


def soft_cost(v_fwd, chi_bar_deg, w: MpcWeights):
    """Penalty on forward tilt at low forward speed."""
    z = w.a * v_fwd * chi_bar_deg + w.b * chi_bar_deg + w.c * v_fwd + w.d
    return np.exp(z)


def _soft_exponent(v_fwd, chi_bar_deg, w: MpcWeights):
    z = w.a * v_fwd * chi_bar_deg + w.b * chi_bar_deg + w.c * v_fwd + w.d
    return np.minimum(z, 200.0)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 25
    dt: float = 0.01
    v_box: np.ndarray = field(default_factory=lambda: np.array([30.0, 30.0, 10.0]))
    att_box: np.ndarray = field(default_factory=lambda: np.array([math.pi / 4, math.pi / 4, np.inf]))
    att_sp_box: np.ndarray = field(default_factory=lambda: np.array([math.pi / 3, math.pi / 3, math.pi / 2]))
    rate_box: np.ndarray = field(default_factory=lambda: np.array([math.pi, math.pi, math.pi]))
    # per-rotor share of the collective thrust; None means the vehicle's physical limit
    thrust_per_rotor_max: float | None = 23.0
    state_penalty: float = 1e3
    tol: float = 1e-4
    max_iter: int = 30
    heading_speed: float = 1.0   # m/s of setpoint before the course defines the heading
    tilt_cmd_window: float = math.radians(5.0)
    # yaw setpoint freedom about the reference heading; 0 gives coordinated turns
    yaw_sp_window: float = 0.0


def fwd_speed(v, att):
    """Body-x component of an inertial velocity."""
    R = rotation_body_to_inertial(att)
    return np.einsum("...i,...i->...", R[..., :, 0], v)


def mpc_predict(x, u, dt: float, gains: AttitudeGains, p: VehicleParams):
    """Euler-forward prediction model, batched over leading dimensions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v, chi, att, rate, rate_prev = x[..., V], x[..., TILT], x[..., ATT], x[..., RATE], x[..., RATE_PREV]
    tau = attitude_torque(u[..., U_ATT], att, rate, rate_prev, gains)
    R = rotation_body_to_inertial(att)
    f_thrust = (0.25 * u[..., U_THRUST])[..., None] * rotor_directions(chi).sum(axis=-2)
    v_body = np.einsum("...ji,...j->...i", R, v)
    Va, alpha, beta, qbar = airdata_arrays(v_body, p.aero.rho)
    f_aero, _ = aero_wrench_arrays(Va, alpha, beta, qbar, np.zeros(v.shape[:-1] + (4,)), p.aero)
    f_inertial = np.einsum("...ij,...j->...i", R, f_thrust + f_aero)
    acc = f_inertial / p.mass
    acc[..., 2] += p.gravity
    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (NX,)))
    out[..., V] = v + dt * acc
    out[..., TILT] = chi + dt * u[..., U_TILT_RATE]
    out[..., ATT] = att + dt * rate
    out[..., RATE] = rate + dt * tau / p.inertia_diag
    out[..., RATE_PREV] = rate
    return out


def mpc_cost(x, u, v_sp, w: MpcWeights, *, terminal: bool = False, u_ref=None):
    """Stage cost of one (state, input) pair; ``terminal`` adds the final velocity term."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    u_ref = np.zeros(NU) if u_ref is None else np.asarray(u_ref, dtype=float)
    ev = x[V] - np.asarray(v_sp, dtype=float)
    du = u - u_ref
    J = ev @ (w.Q_ref * ev) + x[ATT] @ (w.Q_psi * x[ATT]) + x[RATE] @ (w.Q_psidot * x[RATE])
    J += du @ (w.R_u * du)
    J += float(soft_cost(fwd_speed(x[V], x[ATT]), math.degrees(1.0) * np.mean(x[TILT]), w))
    if terminal:
        J += ev @ (w.Q_f * ev)
    return float(J)


def _rotz(psi):
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class MpcOutput:
    psi_sp: np.ndarray
    thrust_sp: float
    tilt_target: np.ndarray
    tilt_rate: np.ndarray
    status: SolverStatus
    iterations: int = 0
    kkt: float = float("nan")
    solve_time: float = 0.0
    solution: NlpSolution | None = None


class MpcController:
    """Receding-horizon velocity controller; owns its warm start and tilt command memory."""

    def __init__(self, p: VehicleParams, weights: MpcWeights | None = None, gains: AttitudeGains | None = None,
                 config: MpcConfig | None = None):
        self.p = p
        self.w = weights or MpcWeights()
        self.gains = gains or AttitudeGains.default_for(p)
        self.cfg = config or MpcConfig()
        tmax = self.cfg.thrust_per_rotor_max
        self.thrust_max = 4.0 * (p.thrust_per_rotor_max if tmax is None else tmax)
        self.reset()

    def reset(self):
        self.warm: NlpSolution | None = None
        self.warm_heading: float | None = None
        self.last_thrust = self.p.weight
        self.tilt_cmd: np.ndarray | None = None
        self.tilt_lock: np.ndarray | None = None

    def lock_tilts(self, angles):
        """Hold all servos at ``angles`` (rad, 4) and leave only thrust and attitude to the optimiser."""
        self.tilt_lock = None if angles is None else np.asarray(angles, dtype=float).reshape(4).copy()

    # -- problem construction -------------------------------------------------

    def input_bounds(self):
        c = self.cfg
        r = 0.0 if self.tilt_lock is not None else self.p.tilt_rate_max
        att = c.att_sp_box.copy()
        att[2] = min(att[2], c.yaw_sp_window)
        lb = np.concatenate([np.full(4, -r), [0.0], -att])
        ub = np.concatenate([np.full(4, r), [self.thrust_max], att])
        return lb, ub

    def state_bounds(self):
        c = self.cfg
        lo, hi = self.p.tilt_range
        lb = np.concatenate([-c.v_box, np.full(4, lo), -c.att_box, -c.rate_box, np.full(3, -np.inf)])
        ub = np.concatenate([c.v_box, np.full(4, hi), c.att_box, c.rate_box, np.full(3, np.inf)])
        return lb, ub

    def reference_heading(self, x_now, v_sp):
        if math.hypot(v_sp[0], v_sp[1]) >= self.cfg.heading_speed:
            return math.atan2(v_sp[1], v_sp[0])
        return float(x_now[ATT][2])

    def build_problem(self, x_now, v_sp, heading: float) -> NlpProblem:
        """Problem in the heading-aligned frame; ``x_now`` and ``v_sp`` are inertial."""
        p, w, cfg, gains = self.p, self.w, self.cfg, self.gains
        Rz = _rotz(heading)
        x0 = np.array(x_now, dtype=float)
        x0[V] = Rz.T @ x0[V]
        x0[ATT][2] = float(wrap_angle(x0[ATT][2] - heading))
        vsp = Rz.T @ np.clip(v_sp, -cfg.v_box, cfg.v_box)
        u_ref = np.zeros(NU)
        u_ref[U_THRUST] = self.last_thrust
        sq_ref, sq_f = np.sqrt(w.Q_ref), np.sqrt(w.Q_f)
        sq_psi, sq_rate, sq_r = np.sqrt(w.Q_psi), np.sqrt(w.Q_psidot), np.sqrt(w.R_u)
        deg = math.degrees(1.0)
        # the soft term schedules tilt against speed; with the servos held it has nothing to shape
        soft_on = 0.0 if self.tilt_lock is not None else 1.0

        def soft(x):
            z = _soft_exponent(fwd_speed(x[:, V], x[:, ATT]), deg * x[:, TILT].mean(axis=1), w)
            return soft_on * np.exp(0.5 * z)[:, None]

        def dynamics(x, u):
            return mpc_predict(x, u, cfg.dt, gains, p)

        def stage(x, u):
            return np.hstack([
                sq_ref * (x[:, V] - vsp),
                sq_psi * x[:, ATT],
                sq_rate * x[:, RATE],
                sq_r * (u - u_ref),
                soft(x),
            ])

        def terminal(x):
            ev = x[:, V] - vsp
            return np.hstack([sq_ref * ev, sq_f * ev, sq_psi * x[:, ATT], sq_rate * x[:, RATE], soft(x)])

        lb, ub = self.input_bounds()
        slb, sub = self.state_bounds()
        guess = np.concatenate([np.zeros(4), [self.last_thrust], x0[ATT]])
        return NlpProblem(cfg.horizon, cfg.dt, x0, dynamics, stage, terminal, lb, ub, slb, sub,
                          cfg.state_penalty, input_guess=guess)

    # -- runtime --------------------------------------------------------------

    def step(self, x_now, v_sp, *, shift: bool = True, log=None) -> MpcOutput:
        """One controller update: solve, apply the first input, keep the rest as warm start."""
        x_now = np.asarray(x_now, dtype=float)
        v_sp = np.asarray(v_sp, dtype=float)
        if not (np.all(np.isfinite(x_now)) and np.all(np.isfinite(v_sp))):
            raise ValueError("non-finite MPC input")
        t0 = time.perf_counter()
        heading = self.reference_heading(x_now, v_sp)
        prob = self.build_problem(x_now, v_sp, heading)
        warm = self.warm
        if warm is not None and self.warm_heading is not None:
            warm = self._rotate_warm(warm, self.warm_heading - heading)
        sol = solve_nlp(prob, warm, shift=shift, tol=self.cfg.tol, max_iter=self.cfg.max_iter, log=log)
        elapsed = time.perf_counter() - t0

        lo, hi = self.p.tilt_range
        tilt_meas = x_now[TILT]
        if self.tilt_cmd is None:
            self.tilt_cmd = tilt_meas.copy()
        if not sol.status.ok or not np.all(np.isfinite(sol.inputs)):
            self.warm = None
            return MpcOutput(x_now[ATT].copy(), self.last_thrust,
                             self.tilt_cmd.copy(), np.zeros(4), sol.status, sol.iterations, sol.kkt_residual,
                             elapsed, sol)

        u0 = sol.inputs[0]
        self.warm = sol
        self.warm_heading = heading
        self.last_thrust = float(u0[U_THRUST])
        rate = u0[U_TILT_RATE].copy()
        if self.tilt_lock is not None:
            self.tilt_cmd = self.tilt_lock.copy()
        else:
            w = self.cfg.tilt_cmd_window
            self.tilt_cmd = np.clip(self.tilt_cmd + rate * self.cfg.dt, tilt_meas - w, tilt_meas + w)
            self.tilt_cmd = np.clip(self.tilt_cmd, lo, hi)
        psi_sp = u0[U_ATT].copy()
        psi_sp[2] = float(wrap_angle(psi_sp[2] + heading))
        return MpcOutput(psi_sp, float(u0[U_THRUST]), self.tilt_cmd.copy(), rate, sol.status,
                         sol.iterations, sol.kkt_residual, elapsed, sol)

    @staticmethod
    def _rotate_warm(sol: NlpSolution, dpsi: float) -> NlpSolution:
        """Express a warm start from a previous heading frame in a new one."""
        if dpsi == 0.0:
            return sol
        Rz = _rotz(dpsi)
        X = sol.states.copy()
        X[:, V] = X[:, V] @ Rz.T
        X[:, ATT.start + 2] += dpsi
        U = sol.inputs.copy()
        U[:, U_ATT.start + 2] += dpsi
        return NlpSolution(U, X, sol.status, sol.kkt_residual, sol.iterations, sol.cost, sol.active)


def mpc_state(velocity, tilt, attitude, rates, rates_prev) -> np.ndarray:
    """Pack the 16-element MPC state."""
    return np.concatenate([velocity, tilt, attitude, rates, rates_prev]).astype(float)
