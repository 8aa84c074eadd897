"""Scenario definitions and the TOML scenario-file loader.

A scenario file is a single TOML document::

    [scenario]
    kind = "circle"          # acceleration | accel_decel | circle | servo_jam | motor_out | hover | custom
    duration = 80.0
    target_speed = 26.0
    accel = 2.0
    radius = 250.0
    controller = "mpc"       # or "pid"

    [sim]                    # optional, rates in Hz
    plant_hz = 400

    [mpc.weights]            # optional overrides of the MPC tuning
    Q_ref = [20, 10, 50]

    [[failure]]
    kind = "motor"           # motor | limit | tilt_jam | tilt_limit
    index = 1                # 1-based: rotors 1-4, surfaces 5-8, servos 1-4
    trigger = { yaw_deg = 90 }

Actuator and servo indices are 1-based in files, 0-based in code.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .allocation import FailureSpec, Trigger
from .control import AttitudeGains, BaselineConfig, MpcConfig, MpcWeights
from .model import ActuatorCommand, PlantState, VehicleParams, load_params

SCENARIO_DIR = Path(__file__).with_name("data") / "scenarios"


class ScenarioKind(enum.Enum):
    ACCELERATION = "acceleration"
    ACCEL_DECEL = "accel_decel"
    CIRCLE = "circle"
    SERVO_JAM = "servo_jam"
    MOTOR_OUT = "motor_out"
    HOVER = "hover"
    CUSTOM = "custom"


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = self.path or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class SimConfig:
    plant_hz: int = 400
    attitude_hz: int = 250
    velocity_hz: int = 100
    duration: float = 10.0
    seed: int = 0
    controller: str = "mpc"
    failures: tuple = ()
    fallback: bool = True
    servo_tau: float = 0.05
    rotor_tau: float = 0.0
    jam_accommodation: bool = True   # on a servo jam, hold the other servos at the jam angle

    def __post_init__(self):
        if not self.plant_hz >= self.attitude_hz >= self.velocity_hz > 0:
            raise ValueError("need plant_hz >= attitude_hz >= velocity_hz > 0")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.controller not in ("mpc", "pid"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.servo_tau <= 0 or self.rotor_tau < 0:
            raise ValueError("servo_tau must be positive and rotor_tau non-negative")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = ScenarioKind.HOVER
    duration: float = 10.0
    target_speed: float = 27.74
    accel: float = 2.0
    decel: float = 2.0
    hold: float = 4.0
    radius: float = 250.0
    direction: int = 1                      # +1: yaw increases around the circle
    waypoints: np.ndarray | None = None     # custom: rows of (t, vx, vy, vz)
    failures: tuple = ()
    controller: str = "mpc"
    initial: PlantState | None = None
    params: VehicleParams = field(default_factory=VehicleParams)
    weights: MpcWeights = field(default_factory=MpcWeights)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gains: AttitudeGains | None = None
    baseline: BaselineConfig | None = None
    name: str = ""

    def __post_init__(self):
        for name in ("duration", "target_speed", "accel", "decel", "radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.hold < 0:
            raise ValueError("hold must be non-negative")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.kind is ScenarioKind.CUSTOM:
            w = np.asarray(self.waypoints, dtype=float)
            if w.ndim != 2 or w.shape[1] != 4 or len(w) < 1 or np.any(np.diff(w[:, 0]) <= 0):
                raise ValueError("custom waypoints must be rows (t, vx, vy, vz) with increasing t")
            object.__setattr__(self, "waypoints", w)

    @property
    def ramp_time(self) -> float:
        return self.target_speed / self.accel

    @property
    def circle_start(self) -> float | None:
        if self.kind in (ScenarioKind.CIRCLE, ScenarioKind.MOTOR_OUT):
            return self.ramp_time
        return None

    def sim_config(self, **overrides) -> SimConfig:
        base = dict(duration=self.duration, controller=self.controller, failures=tuple(self.failures))
        base.update(overrides)
        return SimConfig(**base)


def velocity_setpoint(sc: ScenarioConfig, t: float) -> np.ndarray:
    """Inertial (NED) velocity setpoint at time ``t``."""
    kind = sc.kind
    if kind is ScenarioKind.HOVER:
        return np.zeros(3)
    if kind is ScenarioKind.CUSTOM:
        w = sc.waypoints
        return np.array([np.interp(t, w[:, 0], w[:, i]) for i in (1, 2, 3)])
    V, a = sc.target_speed, sc.accel
    if kind in (ScenarioKind.ACCELERATION, ScenarioKind.SERVO_JAM):
        return np.array([min(a * t, V), 0.0, 0.0])
    if kind is ScenarioKind.ACCEL_DECEL:
        t_brake = sc.ramp_time + sc.hold
        vx = min(a * t, V) if t <= t_brake else max(V - sc.decel * (t - t_brake), 0.0)
        return np.array([vx, 0.0, 0.0])
    # circle: straight ramp, then constant speed with heading turning at V/R
    t1 = sc.ramp_time
    if t <= t1:
        return np.array([a * t, 0.0, 0.0])
    theta = sc.direction * V / sc.radius * (t - t1)
    return np.array([V * math.cos(theta), V * math.sin(theta), 0.0])


def hover_state(p: VehicleParams, **fields_) -> PlantState:
    return PlantState(actuators=ActuatorCommand(rotor_speed=np.full(4, p.hover_omega)), **fields_)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_DEFAULTS = {
    ScenarioKind.HOVER: dict(duration=10.0),
    ScenarioKind.ACCELERATION: dict(duration=25.0),
    ScenarioKind.ACCEL_DECEL: dict(duration=36.0),
    ScenarioKind.SERVO_JAM: dict(duration=25.0),
    ScenarioKind.CIRCLE: dict(target_speed=26.0, duration=80.0),
    ScenarioKind.MOTOR_OUT: dict(target_speed=26.0, duration=80.0),
    ScenarioKind.CUSTOM: dict(),
}


def default_failures(kind: ScenarioKind) -> tuple:
    if kind is ScenarioKind.SERVO_JAM:
        return (FailureSpec.servo_jam(0, math.radians(60.0), Trigger(at_airspeed=8.0)),)
    if kind is ScenarioKind.MOTOR_OUT:
        return (FailureSpec.motor_out(0, Trigger(at_yaw=math.radians(90.0))),)
    return ()


def preset(kind: ScenarioKind | str, **overrides) -> ScenarioConfig:
    """Scenario with the stock parameters for ``kind``."""
    kind = ScenarioKind(kind)
    args = dict(_DEFAULTS[kind])
    args["failures"] = default_failures(kind)
    args.update(overrides)
    return ScenarioConfig(kind=kind, name=kind.value, **args)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {"kind", "duration", "target_speed", "accel", "decel", "hold", "radius", "direction",
                  "waypoints", "controller", "vehicle_file", "name"}
_SIM_KEYS = {"plant_hz", "attitude_hz", "velocity_hz", "seed", "fallback", "servo_tau", "rotor_tau",
             "jam_accommodation"}
_MPC_KEYS = {"horizon", "dt", "tol", "max_iter", "thrust_per_rotor_max", "state_penalty", "heading_speed",
             "tilt_cmd_window", "yaw_sp_window"}
_TOP_KEYS = {"scenario", "sim", "initial", "mpc", "attitude", "baseline", "failure"}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*(\[\[?\s*)?[\"']?{re.escape(key)}[\"']?\s*(=|\]|\.)")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


class _Reader:
    def __init__(self, text: str, path):
        self.text = text
        self.path = path

    def fail(self, message: str, key: str | None = None):
        raise ConfigError(message, self.path, None if key is None else _line_of(self.text, key))

    def check_keys(self, table: dict, allowed: set, section: str):
        for k in table:
            if k not in allowed:
                self.fail(f"unknown key {k!r} in [{section}]", k)

    def number(self, table: dict, key: str, default=None):
        v = table.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{key} must be a number", key)
        return float(v)

    def vector(self, table: dict, key: str, n: int | None = None):
        v = table[key]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            self.fail(f"{key} must be a list of numbers", key)
        if n is not None and arr.size not in (1, n):
            self.fail(f"{key} needs {n} entries, got {arr.size}", key)
        return arr if n is None else np.broadcast_to(arr.reshape(-1), (n,)).copy()


def _trigger(r: _Reader, spec) -> Trigger:
    if not isinstance(spec, dict) or len(spec) != 1:
        r.fail("trigger must be a table with exactly one of time, yaw_deg, airspeed", "trigger")
    (k, v), = spec.items()
    if k == "time":
        return Trigger(at_time=float(v))
    if k == "yaw_deg":
        return Trigger(at_yaw=math.radians(float(v)))
    if k == "airspeed":
        return Trigger(at_airspeed=float(v))
    r.fail(f"unknown trigger {k!r}", "trigger")


def _failure(r: _Reader, block: dict, p: VehicleParams) -> FailureSpec:
    r.check_keys(block, {"kind", "index", "value", "trigger"}, "[failure]")
    kind = block.get("kind")
    idx = block.get("index")
    if not isinstance(idx, int) or isinstance(idx, bool):
        r.fail("failure index must be an integer", "index")
    trig = _trigger(r, block.get("trigger"))
    value = block.get("value")
    try:
        if kind == "motor":
            if not 1 <= idx <= 4:
                r.fail("motor index must be 1..4", "index")
            return FailureSpec.motor_out(idx - 1, trig)
        if kind == "limit":
            if not 1 <= idx <= 8:
                r.fail("actuator index must be 1..8", "index")
            lo, hi = (None, value) if not isinstance(value, list) else value
            return FailureSpec.limit(idx - 1, lo, hi, trig)
        if kind == "tilt_limit":
            if not 1 <= idx <= 4 or not isinstance(value, list) or len(value) != 2:
                r.fail("tilt_limit needs servo index 1..4 and value = [lo_deg, hi_deg]", "index")
            return FailureSpec.limit(8 + idx - 1, math.radians(value[0]), math.radians(value[1]), trig)
        if kind == "tilt_jam":
            if not 1 <= idx <= 4:
                r.fail("servo index must be 1..4", "index")
            ang = math.radians(float(value))
            lo, hi = p.tilt_range
            if not lo <= ang <= hi:
                r.fail("jam angle outside the tilt range", "value")
            return FailureSpec.servo_jam(idx - 1, ang, trig)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail(f"bad failure block: {exc}", "value")
    r.fail(f"unknown failure kind {kind!r}", "kind")


def _dataclass_overrides(r: _Reader, obj, table: dict, section: str, vector_keys=()):
    names = {f.name for f in fields(obj)}
    r.check_keys(table, names, section)
    kw = {}
    for k, v in table.items():
        kw[k] = r.vector(table, k) if k in vector_keys or isinstance(v, list) else r.number(table, k)
    try:
        return replace(obj, **kw)
    except ValueError as exc:
        r.fail(f"[{section}]: {exc}", next(iter(table)))


def parse_config(text: str, path: str | Path | None = None) -> tuple[ScenarioConfig, SimConfig]:
    """Parse scenario-file text into a scenario and a simulation config."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", path, int(m.group(1)) if m else None) from None
    r = _Reader(text, path)
    r.check_keys(doc, _TOP_KEYS, "top level")
    sc_t = doc.get("scenario", {})
    r.check_keys(sc_t, _SCENARIO_KEYS, "scenario")
    try:
        kind = ScenarioKind(sc_t.get("kind", "hover"))
    except ValueError:
        r.fail(f"unknown scenario kind {sc_t.get('kind')!r}", "kind")

    params = VehicleParams()
    if "vehicle_file" in sc_t:
        vf = Path(sc_t["vehicle_file"])
        if path is not None and not vf.is_absolute():
            vf = Path(path).parent / vf
        try:
            params = load_params(vf)
        except (OSError, ValueError) as exc:
            r.fail(f"cannot load vehicle file {vf}: {exc}", "vehicle_file")

    args = dict(_DEFAULTS[kind])
    for k in ("duration", "target_speed", "accel", "decel", "hold", "radius"):
        if k in sc_t:
            args[k] = r.number(sc_t, k)
    if "direction" in sc_t:
        args["direction"] = int(sc_t["direction"])
    if "waypoints" in sc_t:
        args["waypoints"] = r.vector(sc_t, "waypoints").reshape(-1, 4) if np.size(sc_t["waypoints"]) % 4 == 0 \
            else r.fail("waypoints must be rows of 4 numbers", "waypoints")
    controller = sc_t.get("controller", "mpc")
    if controller not in ("mpc", "pid"):
        r.fail(f"controller must be 'mpc' or 'pid', got {controller!r}", "controller")

    if "failure" in doc:
        if not isinstance(doc["failure"], list):
            r.fail("failures must be [[failure]] blocks", "failure")
        failures = tuple(_failure(r, b, params) for b in doc["failure"])
    else:
        failures = default_failures(kind)

    initial = None
    if "initial" in doc:
        it = doc["initial"]
        r.check_keys(it, {"velocity", "attitude_deg", "tilt_deg"}, "initial")
        kw = {}
        if "velocity" in it:
            kw["velocity"] = r.vector(it, "velocity", 3)
        if "attitude_deg" in it:
            kw["attitude"] = np.radians(r.vector(it, "attitude_deg", 3))
        if "tilt_deg" in it:
            kw["tilt"] = np.radians(r.vector(it, "tilt_deg", 4))
        initial = hover_state(params, **kw)

    mpc_t = doc.get("mpc", {})
    r.check_keys(mpc_t, _MPC_KEYS | {"weights", "soft"}, "mpc")
    weights = MpcWeights()
    if "weights" in mpc_t:
        weights = _dataclass_overrides(r, weights, mpc_t["weights"], "mpc.weights",
                                       ("Q_ref", "Q_f", "Q_psi", "Q_psidot", "R_u"))
        if {"a", "b", "c", "d"} & set(mpc_t["weights"]):
            r.fail("soft-cost constants belong in [mpc.soft]", "weights")
    if "soft" in mpc_t:
        r.check_keys(mpc_t["soft"], {"a", "b", "c", "d"}, "mpc.soft")
        weights = _dataclass_overrides(r, weights, mpc_t["soft"], "mpc.soft")
    mcfg = MpcConfig()
    scalar = {k: v for k, v in mpc_t.items() if k in _MPC_KEYS}
    if scalar:
        for k in ("horizon", "max_iter"):
            if k in scalar:
                scalar[k] = int(scalar[k])
        try:
            mcfg = replace(mcfg, **{k: (v if k in ("horizon", "max_iter") else float(v)) for k, v in scalar.items()})
        except (TypeError, ValueError) as exc:
            r.fail(f"[mpc]: {exc}", next(iter(scalar)))

    gains = None
    att_t = doc.get("attitude", {})
    r.check_keys(att_t, {"gains"}, "attitude")
    if "gains" in att_t:
        gains = _dataclass_overrides(r, AttitudeGains.default_for(params), att_t["gains"], "attitude.gains",
                                     ("Kp_att", "Kp_rate", "Kd_rate"))

    baseline = None
    if "baseline" in doc:
        bt = dict(doc["baseline"])
        for k in ("mr_tilt_limit", "fw_roll_limit", "fw_pitch_limit", "front_pitch_limit", "front_tilt"):
            if k + "_deg" in bt:
                bt[k] = math.radians(bt.pop(k + "_deg"))
        baseline = _dataclass_overrides(r, BaselineConfig(thrust_max=4 * params.thrust_per_rotor_max), bt,
                                        "baseline", ("mr_kp", "mr_ki"))

    try:
        sc = ScenarioConfig(kind=kind, failures=failures, controller=controller, initial=initial, params=params,
                            weights=weights, mpc=mcfg, gains=gains, baseline=baseline,
                            name=str(sc_t.get("name", kind.value)), **args)
    except ValueError as exc:
        r.fail(str(exc), "scenario")

    sim_t = doc.get("sim", {})
    r.check_keys(sim_t, _SIM_KEYS, "sim")
    sim_kw = {}
    for k, v in sim_t.items():
        if k in ("plant_hz", "attitude_hz", "velocity_hz", "seed"):
            if not isinstance(v, int) or isinstance(v, bool):
                r.fail(f"{k} must be an integer", k)
            sim_kw[k] = v
        elif k in ("fallback", "jam_accommodation"):
            sim_kw[k] = bool(v)
        else:
            sim_kw[k] = r.number(sim_t, k)
    try:
        sim = sc.sim_config(**sim_kw)
    except ValueError as exc:
        r.fail(str(exc), "sim")
    return sc, sim


def load_config(path: str | Path) -> tuple[ScenarioConfig, SimConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror or exc}", path) from None
    return parse_config(text, path)


def builtin_scenarios() -> dict[str, Path]:
    return {f.stem: f for f in sorted(SCENARIO_DIR.glob("*.toml"))}
