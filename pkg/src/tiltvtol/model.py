"""Vehicle model for the four-rotor tiltrotor VTOL.

Frames
------
Inertial frame is NED. Body frame is x forward, y right, z down. Attitude is
the ZYX Euler triple (roll, pitch, yaw) and ``rotation_body_to_inertial``
returns R_B^I = Rz(yaw) Ry(pitch) Rx(roll).

Rotor ``i`` points along ``[sin(tilt_i), 0, -cos(tilt_i)]`` in the body frame:
0 rad is straight up (multirotor), pi/2 is straight forward (cruise).

Actuator vector ordering (used by allocation as well)::

    [omega_1, omega_2, omega_3, omega_4, delta_a1, delta_a2, delta_e, delta_r]

Rotor speeds are normalized to [0, 1] so that thrust is ``c_F * omega**2``.
Surface deflections are normalized to [-1, 1]; the roll command seen by the
aileron moment is the differential ``(delta_a1 - delta_a2) / 2``.

The numerical kernels (names starting with an underscore-free ``*_arrays``
suffix) broadcast over leading dimensions so that the MPC prediction model
can evaluate the exact same force laws over a whole horizon at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

GRAVITY = 9.81

N_ROTORS = 4
N_SURFACES = 4
N_ALLOC = N_ROTORS + N_SURFACES


class SimulationFault(RuntimeError):
    """Raised when the plant reaches a state the model cannot represent."""


class GimbalLockError(SimulationFault):
    pass


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AeroParams:
    rho: float = 1.225
    S: float = 0.44
    S_a: float = 0.036
    S_e: float = 0.1364
    S_r: float = 0.004
    b: float = 2.0
    c_bar: float = 0.22
    C_D0: float = 0.35
    C_Dalpha: float = 0.11
    C_Z0: float = 0.03
    C_Zalpha: float = 0.2
    C_Leff: float = 0.1173
    C_Meff: float = 0.556
    C_Neff: float = 0.0881
    eff_lo: float = 5.0
    eff_hi: float = 15.0
    # the quadratic polar is only characterized inside this AoA band (deg)
    alpha_limit_deg: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.eff_lo < self.eff_hi:
            raise ValueError("aero effectiveness breakpoints must satisfy 0 <= eff_lo < eff_hi")
        if self.rho <= 0 or self.S <= 0:
            raise ValueError("rho and S must be positive")


def _default_rotor_pos():
    return np.array([
        [0.35, 0.40, 0.0],
        [-0.35, -0.40, 0.0],
        [0.35, -0.40, 0.0],
        [-0.35, 0.40, 0.0],
    ])


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 7.427
    inertia_diag: np.ndarray = field(default_factory=lambda: np.array([10.685, 5.7465, 4.6678]))
    c_F: float = 27.36
    c_K: float = 0.016 * 27.36
    rotor_pos: np.ndarray = field(default_factory=_default_rotor_pos)
    spin_dir: np.ndarray = field(default_factory=lambda: np.array([0, 0, 1, 1]))
    tilt_range: tuple[float, float] = (math.radians(-7.0), math.radians(95.0))
    tilt_rate_max: float = math.pi / 4
    thrust_per_rotor_max: float = 27.36
    aero: AeroParams = field(default_factory=AeroParams)
    gravity: float = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "inertia_diag", np.asarray(self.inertia_diag, dtype=float))
        object.__setattr__(self, "rotor_pos", np.asarray(self.rotor_pos, dtype=float).reshape(N_ROTORS, 3))
        object.__setattr__(self, "spin_dir", np.asarray(self.spin_dir, dtype=int))
        object.__setattr__(self, "tilt_range", (float(self.tilt_range[0]), float(self.tilt_range[1])))
        if self.mass <= 0 or np.any(self.inertia_diag <= 0):
            raise ValueError("mass and inertia must be positive")
        if not set(self.spin_dir.tolist()) <= {0, 1}:
            raise ValueError("spin_dir entries must be 0 or 1")
        if self.tilt_range[0] > self.tilt_range[1]:
            raise ValueError("tilt_range must be ordered")

    @property
    def spin_sign(self) -> np.ndarray:
        """(-1)**d_i for each rotor."""
        return np.where(self.spin_dir == 0, 1.0, -1.0)

    @property
    def weight(self) -> float:
        return self.mass * self.gravity

    @property
    def hover_omega(self) -> float:
        """Normalized rotor speed that carries the weight with four vertical rotors."""
        return math.sqrt(self.weight / (N_ROTORS * self.c_F))


# ---------------------------------------------------------------------------
# State and signal types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActuatorCommand:
    rotor_speed: np.ndarray = field(default_factory=lambda: np.zeros(N_ROTORS))
    surface: np.ndarray = field(default_factory=lambda: np.zeros(N_SURFACES))
    tilt_rate: np.ndarray = field(default_factory=lambda: np.zeros(N_ROTORS))
    tilt_target: np.ndarray | None = None

    def __post_init__(self):
        for name in ("rotor_speed", "surface", "tilt_rate"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(4))
        if self.tilt_target is not None:
            object.__setattr__(self, "tilt_target", np.asarray(self.tilt_target, dtype=float).reshape(4))

    @property
    def alloc_vector(self) -> np.ndarray:
        return np.concatenate([self.rotor_speed, self.surface])

    def clipped(self, p: VehicleParams) -> "ActuatorCommand":
        return replace(
            self,
            rotor_speed=np.clip(self.rotor_speed, 0.0, 1.0),
            surface=np.clip(self.surface, -1.0, 1.0),
            tilt_rate=np.clip(self.tilt_rate, -p.tilt_rate_max, p.tilt_rate_max),
        )


@dataclass(frozen=True)
class PlantState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tilt: np.ndarray = field(default_factory=lambda: np.zeros(4))
    actuators: ActuatorCommand = field(default_factory=ActuatorCommand)

    def __post_init__(self):
        for name, n in (("position", 3), ("velocity", 3), ("attitude", 3), ("body_rates", 3), ("tilt", 4)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.body_rates, self.tilt])

    @classmethod
    def from_vector(cls, x: np.ndarray, actuators: ActuatorCommand | None = None) -> "PlantState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9], x[9:12], x[12:16],
                   actuators if actuators is not None else ActuatorCommand())


@dataclass(frozen=True)
class StateDerivative:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    body_rates: np.ndarray
    tilt: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.body_rates, self.tilt])


@dataclass(frozen=True)
class AirData:
    Va: float
    alpha: float
    beta: float
    q_bar: float


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float).reshape(3))

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.force + other.force, self.moment + other.moment)

    def __sub__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.force - other.force, self.moment - other.moment)

    def scaled(self, k: float) -> "Wrench":
        return Wrench(k * self.force, k * self.moment)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @classmethod
    def from_vector(cls, w) -> "Wrench":
        w = np.asarray(w, dtype=float)
        return cls(w[:3], w[3:6])


# ---------------------------------------------------------------------------
# Broadcasting kernels
# ---------------------------------------------------------------------------


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def rotation_body_to_inertial(att: np.ndarray) -> np.ndarray:
    att = np.asarray(att, dtype=float)
    cr, sr = np.cos(att[..., 0]), np.sin(att[..., 0])
    cp, sp = np.cos(att[..., 1]), np.sin(att[..., 1])
    cy, sy = np.cos(att[..., 2]), np.sin(att[..., 2])
    R = np.empty(att.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def euler_kinematics(att: np.ndarray) -> np.ndarray:
    """Matrix T with d(att)/dt = T @ body_rates."""
    cr, sr = math.cos(att[0]), math.sin(att[0])
    cp, tp = math.cos(att[1]), math.tan(att[1])
    return np.array([
        [1.0, sr * tp, cr * tp],
        [0.0, cr, -sr],
        [0.0, sr / cp, cr / cp],
    ])


def rotor_directions(tilt: np.ndarray) -> np.ndarray:
    tilt = np.asarray(tilt, dtype=float)
    n = np.zeros(tilt.shape + (3,))
    n[..., 0] = np.sin(tilt)
    n[..., 2] = -np.cos(tilt)
    return n


def _vec3(x, y, z):
    out = np.empty(np.shape(x) + (3,))
    out[..., 0] = x
    out[..., 1] = y
    out[..., 2] = z
    return out


def _vec3(x, y, z):
    out = np.empty(np.shape(x) + (3,))
    out[..., 0] = x
    out[..., 1] = y
    out[..., 2] = z
    return out


def rotor_wrench_arrays(omega, tilt, p: VehicleParams):
    """Force and moment (body) from the rotors; broadcasts over leading dims."""
    omega = np.asarray(omega, dtype=float)
    st, ct = np.sin(tilt), np.cos(tilt)
    w2 = omega * omega
    T = p.c_F * w2
    K = p.c_K * p.spin_sign * w2
    rx, ry, rz = p.rotor_pos[:, 0], p.rotor_pos[:, 1], p.rotor_pos[:, 2]
    # thrust T_i along n_i = (sin, 0, -cos): r x n = (-ry cos, rz sin + rx cos, -ry sin)
    force = _vec3((T * st).sum(axis=-1), np.zeros(np.shape(T)[:-1]), -(T * ct).sum(axis=-1))
    moment = _vec3((K * st - T * ry * ct).sum(axis=-1),
                   (T * (rz * st + rx * ct)).sum(axis=-1),
                   -(T * ry * st + K * ct).sum(axis=-1))
    return force, moment


def aero_effectiveness(Va, p: AeroParams):
    """Smoothstep gate between multirotor-like (0) and wing-borne (1) flight."""
    s = np.clip((np.asarray(Va, dtype=float) - p.eff_lo) / (p.eff_hi - p.eff_lo), 0.0, 1.0)
    e = s * s * (3.0 - 2.0 * s)
    return float(e) if np.ndim(e) == 0 else e


def airdata_arrays(v_body, rho: float):
    """Airspeed, AoA, sideslip and dynamic pressure from body-frame air-relative velocity."""
    v_body = np.asarray(v_body, dtype=float)
    u, v, w = v_body[..., 0], v_body[..., 1], v_body[..., 2]
    Va = np.sqrt(u * u + v * v + w * w)
    alpha = np.arctan2(w, u)
    alpha = np.where(Va < 1e-6, 0.0, alpha)
    safe = np.where(Va < 1e-6, 1.0, Va)
    beta = np.where(Va < 1e-6, 0.0, np.arcsin(np.clip(v / safe, -1.0, 1.0)))
    qbar = 0.5 * rho * Va * Va
    return Va, alpha, beta, qbar


def aero_wrench_arrays(Va, alpha, beta, qbar, surface, p: AeroParams):
    """Effectiveness-gated aerodynamic force and moment in the body frame."""
    surface = np.asarray(surface, dtype=float)
    e = np.asarray(aero_effectiveness(Va, p))
    a_deg = np.minimum(np.maximum(alpha * (180.0 / np.pi), -p.alpha_limit_deg), p.alpha_limit_deg)
    a2 = a_deg * a_deg
    X = qbar * p.S * (p.C_D0 + p.C_Dalpha * a2)
    Z = qbar * p.S * (p.C_Z0 + p.C_Zalpha * a2)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    # R_W^B applied to the wind-frame force [-X, 0, -Z]
    force = _vec3(-X * ca * cb + Z * sa, -X * sb, -X * sa * cb - Z * ca)
    d_a = 0.5 * (surface[..., 0] - surface[..., 1])
    moment = _vec3(qbar * p.S_a * p.b * p.C_Leff * d_a,
                   qbar * p.S_e * p.c_bar * p.C_Meff * surface[..., 2],
                   qbar * p.S_r * p.b * p.C_Neff * surface[..., 3])
    return e[..., None] * force, e[..., None] * moment


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def airdata(state: PlantState, wind=None, p: VehicleParams | None = None) -> AirData:
    rho = (p.aero.rho if p is not None else AeroParams().rho)
    wind = np.zeros(3) if wind is None else np.asarray(wind, dtype=float)
    R = rotation_body_to_inertial(state.attitude)
    v_body = R.T @ (state.velocity - wind)
    Va, alpha, beta, qbar = airdata_arrays(v_body, rho)
    return AirData(float(Va), float(alpha), float(beta), float(qbar))


def rotor_wrench(omega, tilt, p: VehicleParams) -> Wrench:
    omega = np.asarray(omega, dtype=float)
    tilt = np.asarray(tilt, dtype=float)
    _require_finite(omega, tilt)
    f, m = rotor_wrench_arrays(omega, tilt, p)
    return Wrench(f, m)


def aero_wrench(ad: AirData, surfaces, p: AeroParams) -> Wrench:
    f, m = aero_wrench_arrays(ad.Va, ad.alpha, ad.beta, ad.q_bar, np.asarray(surfaces, dtype=float), p)
    return Wrench(f, m)


def gravity_wrench(attitude, p: VehicleParams) -> Wrench:
    R = rotation_body_to_inertial(np.asarray(attitude, dtype=float))
    return Wrench(R.T @ np.array([0.0, 0.0, p.weight]), np.zeros(3))


def _derivative_vector(x: np.ndarray, omega, surface, tilt_rate, p: VehicleParams, wind=None) -> np.ndarray:
    vel = x[3:6]
    att = x[6:9]
    rates = x[9:12]
    tilt = x[12:16]
    if abs(att[1]) > math.radians(89.0):
        raise GimbalLockError(f"pitch {math.degrees(att[1]):.1f} deg is too close to gimbal lock")
    R = rotation_body_to_inertial(att)
    air = vel if wind is None else vel - wind
    v_body = R.T @ air
    Va, alpha, beta, qbar = airdata_arrays(v_body, p.aero.rho)
    f_r, m_r = rotor_wrench_arrays(omega, tilt, p)
    f_a, m_a = aero_wrench_arrays(Va, alpha, beta, qbar, surface, p.aero)
    f_g = R[2, :] * p.weight
    force = f_r + f_a + f_g
    moment = m_r + m_a
    I = p.inertia_diag
    xdot = np.empty(16)
    xdot[0:3] = vel
    xdot[3:6] = R @ force / p.mass
    xdot[6:9] = euler_kinematics(att) @ rates
    Iw = I * rates
    gyro = (rates[1] * Iw[2] - rates[2] * Iw[1], rates[2] * Iw[0] - rates[0] * Iw[2], rates[0] * Iw[1] - rates[1] * Iw[0])
    xdot[9:12] = (moment - gyro) / I
    xdot[12:16] = np.clip(tilt_rate, -p.tilt_rate_max, p.tilt_rate_max)
    return xdot


def total_derivative(state: PlantState, cmd: ActuatorCommand, p: VehicleParams, wind=None) -> StateDerivative:
    c = cmd.clipped(p)
    xd = _derivative_vector(state.to_vector(), c.rotor_speed, c.surface, c.tilt_rate, p, wind)
    return StateDerivative(xd[0:3], xd[3:6], xd[6:9], xd[9:12], xd[12:16])


def rk4_vector(x: np.ndarray, omega, surface, tilt_rate, dt: float, p: VehicleParams, wind=None) -> np.ndarray:
    """One RK4 step on the flat 16-vector; actuation held constant over the step."""
    f = _derivative_vector
    k1 = f(x, omega, surface, tilt_rate, p, wind)
    k2 = f(x + 0.5 * dt * k1, omega, surface, tilt_rate, p, wind)
    k3 = f(x + 0.5 * dt * k2, omega, surface, tilt_rate, p, wind)
    k4 = f(x + dt * k3, omega, surface, tilt_rate, p, wind)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(xn)):
        raise SimulationFault("non-finite plant state after integration step")
    xn[8] = float(wrap_angle(xn[8]))
    xn[12:16] = np.clip(xn[12:16], p.tilt_range[0], p.tilt_range[1])
    return xn


def integrate_rk4(state: PlantState, cmd: ActuatorCommand, dt: float, p: VehicleParams, wind=None) -> PlantState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = cmd.clipped(p)
    xn = rk4_vector(state.to_vector(), c.rotor_speed, c.surface, c.tilt_rate, dt, p, wind)
    return PlantState.from_vector(xn, c)


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

BASELINE_CONFIG = Path(__file__).with_name("data") / "vehicle.toml"


def params_to_dict(p: VehicleParams) -> dict[str, Any]:
    a = p.aero
    return {
        "vehicle": {
            "mass": p.mass,
            "inertia_diag": p.inertia_diag.tolist(),
            "c_F": p.c_F,
            "c_K": p.c_K,
            "rotor_pos": p.rotor_pos.tolist(),
            "spin_dir": p.spin_dir.tolist(),
            "gravity": p.gravity,
        },
        "aero": {k: getattr(a, k) for k in AeroParams.__dataclass_fields__},
        "limits": {
            "tilt_min_deg": math.degrees(p.tilt_range[0]),
            "tilt_max_deg": math.degrees(p.tilt_range[1]),
            "tilt_rate_max": p.tilt_rate_max,
            "thrust_per_rotor_max": p.thrust_per_rotor_max,
        },
    }


def params_from_dict(d: Mapping[str, Any]) -> VehicleParams:
    unknown = set(d) - {"vehicle", "aero", "limits"}
    if unknown:
        raise ValueError(f"unknown vehicle config sections: {sorted(unknown)}")
    veh = dict(d.get("vehicle", {}))
    lim = dict(d.get("limits", {}))
    aero = AeroParams(**dict(d.get("aero", {})))
    kw: dict[str, Any] = {"aero": aero}
    for k in ("mass", "inertia_diag", "c_F", "c_K", "rotor_pos", "spin_dir", "gravity"):
        if k in veh:
            kw[k] = veh.pop(k)
    if veh:
        raise ValueError(f"unknown [vehicle] keys: {sorted(veh)}")
    defaults = VehicleParams()
    lo = math.radians(lim.pop("tilt_min_deg")) if "tilt_min_deg" in lim else defaults.tilt_range[0]
    hi = math.radians(lim.pop("tilt_max_deg")) if "tilt_max_deg" in lim else defaults.tilt_range[1]
    kw["tilt_range"] = (lo, hi)
    for k in ("tilt_rate_max", "thrust_per_rotor_max"):
        if k in lim:
            kw[k] = lim.pop(k)
    if lim:
        raise ValueError(f"unknown [limits] keys: {sorted(lim)}")
    return VehicleParams(**kw)


def load_params(path: str | Path | None = None) -> VehicleParams:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    path = BASELINE_CONFIG if path is None else Path(path)
    with open(path, "rb") as fh:
        return params_from_dict(tomllib.load(fh))


def save_params(p: VehicleParams, path: str | Path) -> None:
    import tomli_w

    with open(path, "wb") as fh:
        tomli_w.dump(params_to_dict(p), fh)
