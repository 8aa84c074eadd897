"""Mode-switching PID velocity controller in the style of a stock VTOL autopilot.

Three regimes selected by airspeed: multirotor (attitude-tilted thrust, rotors
up), transition (tilt ramps with airspeed and the two attitude laws are
blended) and fixed-wing (airspeed -> thrust, climb rate -> pitch, course ->
roll, rotors forward). Kept as the comparison baseline and as the fallback
when the MPC cannot produce a solution.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..model import PlantState, VehicleParams, rotation_body_to_inertial, wrap_angle


class FlightMode(enum.Enum):
    MULTIROTOR = "Multirotor"
    TRANSITION = "Transition"
    FIXED_WING = "FixedWing"


@dataclass(frozen=True)
class BaselineConfig:
    mr_max_speed: float = 10.0
    blend_airspeed: float = 12.0
    transition_airspeed: float = 20.0
    mr_kp: np.ndarray = field(default_factory=lambda: np.array([1.2, 1.2, 3.0]))
    mr_ki: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.2, 1.0]))
    mr_tilt_limit: float = math.radians(35.0)       # roll/pitch limit at zero airspeed
    front_pitch_limit: float = math.radians(3.0)    # pitch limit during the front transition
    front_tilt: float = math.radians(35.0)          # rotor pre-tilt once a transition is requested
    fw_airspeed_kp: float = 10.0
    fw_airspeed_ki: float = 3.0
    fw_vz_kp: float = 0.08
    fw_vz_ki: float = 0.04
    fw_course_kp: float = 1.2
    fw_roll_limit: float = math.radians(35.0)
    fw_pitch_limit: float = math.radians(20.0)
    thrust_max: float = 4 * 27.36

    def __post_init__(self):
        for name in ("mr_kp", "mr_ki"):
            object.__setattr__(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy())
        if not self.mr_max_speed < self.blend_airspeed < self.transition_airspeed:
            raise ValueError("need mr_max_speed < blend_airspeed < transition_airspeed")


@dataclass
class BaselineOutput:
    psi_sp: np.ndarray
    thrust_sp: float
    tilt_target: np.ndarray
    mode: FlightMode


@dataclass
class BaselineMemory:
    int_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    int_airspeed: float = 0.0
    int_vz: float = 0.0
    fw_thrust0: float | None = None


def select_mode(Va: float, cfg: BaselineConfig) -> FlightMode:
    if Va < cfg.blend_airspeed:
        return FlightMode.MULTIROTOR
    if Va < cfg.transition_airspeed:
        return FlightMode.TRANSITION
    return FlightMode.FIXED_WING


def _multirotor(v_sp, state, cfg, mem, p, dt, yaw_sp, transition):
    err = v_sp - state.velocity
    mem.int_v = np.clip(mem.int_v + err * dt, -5.0, 5.0)
    acc = cfg.mr_kp * err + cfg.mr_ki * mem.int_v
    f = p.mass * (acc - np.array([0.0, 0.0, p.gravity]))   # desired force, NED
    c, s = math.cos(yaw_sp), math.sin(yaw_sp)
    fx = c * f[0] + s * f[1]
    fy = -s * f[0] + c * f[1]
    up = max(-f[2], 1e-3)
    chi = float(np.mean(state.tilt))
    # rotor tilt already points the thrust forward by chi; pitch supplies the rest
    lim = cfg.front_pitch_limit if transition else cfg.mr_tilt_limit
    pitch = float(np.clip(chi - math.atan2(fx, up), -lim, lim))
    roll = float(np.clip(math.atan2(fy, math.hypot(fx, up)), -cfg.mr_tilt_limit, cfg.mr_tilt_limit))
    thrust = up / max(math.cos(roll) * math.cos(chi - pitch), 0.3)
    return np.array([roll, pitch, yaw_sp]), float(np.clip(thrust, 0.0, cfg.thrust_max))


def _fixed_wing(v_sp, state, cfg, mem, p, dt, Va, thrust_now):
    if mem.fw_thrust0 is None:
        mem.fw_thrust0 = thrust_now
    speed_sp = math.hypot(v_sp[0], v_sp[1])
    e_as = speed_sp - Va
    mem.int_airspeed = float(np.clip(mem.int_airspeed + e_as * dt, -10.0, 10.0))
    thrust = mem.fw_thrust0 + cfg.fw_airspeed_kp * e_as + cfg.fw_airspeed_ki * mem.int_airspeed
    e_vz = state.velocity[2] - v_sp[2]       # sinking faster than wanted -> pitch up
    mem.int_vz = float(np.clip(mem.int_vz + e_vz * dt, -5.0, 5.0))
    pitch = cfg.fw_vz_kp * e_vz + cfg.fw_vz_ki * mem.int_vz + math.radians(1.3)
    course = math.atan2(state.velocity[1], state.velocity[0])
    course_sp = math.atan2(v_sp[1], v_sp[0]) if speed_sp > 1.0 else course
    e_course = float(wrap_angle(course_sp - course))
    roll = cfg.fw_course_kp * e_course
    psi = np.array([
        float(np.clip(roll, -cfg.fw_roll_limit, cfg.fw_roll_limit)),
        float(np.clip(pitch, -cfg.fw_pitch_limit, cfg.fw_pitch_limit)),
        course_sp,
    ])
    return psi, float(np.clip(thrust, 0.0, cfg.thrust_max))


def baseline_step(v_sp, state: PlantState, cfg: BaselineConfig, p: VehicleParams,
                  mem: BaselineMemory | None = None, dt: float = 0.01, thrust_now: float | None = None
                  ) -> BaselineOutput:
    """One update of the mode-switching controller."""
    mem = BaselineMemory() if mem is None else mem
    v_sp = np.asarray(v_sp, dtype=float)
    R = rotation_body_to_inertial(state.attitude)
    Va = float(np.linalg.norm(R.T @ state.velocity))
    mode = select_mode(Va, cfg)
    thrust_now = p.weight if thrust_now is None else thrust_now
    yaw_sp = math.atan2(v_sp[1], v_sp[0]) if math.hypot(v_sp[0], v_sp[1]) > 1.0 else float(state.attitude[2])

    # a setpoint beyond the multirotor speed cap requests the front transition:
    # rotors pre-tilt so the forward force does not have to come from pitch alone
    transition = math.hypot(v_sp[0], v_sp[1]) > cfg.mr_max_speed
    pre_tilt = cfg.front_tilt if transition else 0.0
    if mode is FlightMode.MULTIROTOR:
        psi, thrust = _multirotor(v_sp, state, cfg, mem, p, dt, yaw_sp, transition)
        mem.fw_thrust0 = None
        return BaselineOutput(psi, thrust, np.full(4, pre_tilt), mode)
    if mode is FlightMode.FIXED_WING:
        psi, thrust = _fixed_wing(v_sp, state, cfg, mem, p, dt, Va, thrust_now)
        return BaselineOutput(psi, thrust, np.full(4, math.pi / 2), mode)

    s = (Va - cfg.blend_airspeed) / (cfg.transition_airspeed - cfg.blend_airspeed)
    psi_mr, t_mr = _multirotor(v_sp, state, cfg, mem, p, dt, yaw_sp, transition)
    psi_fw, t_fw = _fixed_wing(v_sp, state, cfg, mem, p, dt, Va, thrust_now)
    psi = (1.0 - s) * psi_mr + s * psi_fw
    psi[2] = yaw_sp
    tilt = max(s * math.pi / 2, pre_tilt)
    return BaselineOutput(psi, (1.0 - s) * t_mr + s * t_fw, np.full(4, tilt), mode)


class BaselineController:
    def __init__(self, p: VehicleParams, cfg: BaselineConfig | None = None):
        self.p = p
        self.cfg = cfg or BaselineConfig(thrust_max=4 * p.thrust_per_rotor_max)
        self.mem = BaselineMemory()
        self.last_thrust = p.weight

    def reset(self):
        self.mem = BaselineMemory()
        self.last_thrust = self.p.weight

    def step(self, v_sp, state: PlantState, dt: float) -> BaselineOutput:
        out = baseline_step(v_sp, state, self.cfg, self.p, self.mem, dt, self.last_thrust)
        self.last_thrust = out.thrust_sp
        return out
