import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltvtol.allocation import Trigger
from tiltvtol.scenarios import (ConfigError, ScenarioKind, builtin_scenarios, load_config, parse_config, preset,
                                velocity_setpoint)


def test_acceleration_setpoint_examples():
    sc = preset("acceleration")
    assert velocity_setpoint(sc, 5.0) == pytest.approx([10, 0, 0])
    assert velocity_setpoint(sc, 20.0) == pytest.approx([27.74, 0, 0])


def test_circle_entry_is_straight_ahead():
    sc = preset("circle")
    assert velocity_setpoint(sc, sc.ramp_time) == pytest.approx([26, 0, 0])


def test_accel_decel_profile():
    sc = preset("accel_decel")
    t_brake = sc.ramp_time + sc.hold
    assert velocity_setpoint(sc, t_brake)[0] == pytest.approx(27.74)
    assert velocity_setpoint(sc, t_brake + 5)[0] == pytest.approx(27.74 - 10)
    assert velocity_setpoint(sc, sc.duration)[0] == 0.0


@pytest.mark.parametrize("kind", [k for k in ScenarioKind if k is not ScenarioKind.CUSTOM])
def test_setpoint_is_continuous(kind):
    sc = preset(kind)
    t = np.linspace(0, sc.duration, 20001)
    v = np.array([velocity_setpoint(sc, x) for x in t])
    step = np.abs(np.diff(v, axis=0)).max()
    # the steepest ramp is 2 m/s^2, i.e. 2 * dt per sample; the circle turns at V^2/R
    assert step <= 2.5 * (t[1] - t[0]) * max(sc.accel, sc.decel, sc.target_speed**2 / sc.radius)
    assert np.all(v[:, 2] == 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 80.0), st.sampled_from(["circle", "motor_out", "motor_out_r150"]))
def test_circle_speed_is_constant(t, name):
    sc, _ = load_config(builtin_scenarios()[name])
    v = velocity_setpoint(sc, t)
    if t > sc.ramp_time:
        assert np.linalg.norm(v) == pytest.approx(26.0)
    else:
        assert np.linalg.norm(v) <= 26.0 + 1e-12


def test_builtin_files_match_presets():
    files = builtin_scenarios()
    assert {"hover", "acceleration", "accel_decel", "circle", "servo_jam", "motor_out", "motor_out_r150"} <= set(files)
    for name, path in files.items():
        sc, sim = load_config(path)
        assert sim.duration == sc.duration
    sc, _ = load_config(files["servo_jam"])
    (f,) = sc.failures
    assert f.tilt_jam == (0, pytest.approx(math.radians(60))) and f.trigger == Trigger(at_airspeed=8.0)
    sc, _ = load_config(files["motor_out_r150"])
    assert sc.radius == 150.0
    assert sc.failures[0].trigger == Trigger(at_yaw=math.radians(90))


def test_full_schema_round_trip():
    text = """
[scenario]
kind = "circle"
duration = 30.0
radius = 300.0
direction = -1
controller = "pid"

[sim]
plant_hz = 400
seed = 3
fallback = false

[initial]
velocity = [1.0, 0.0, 0.0]
tilt_deg = 10.0

[mpc]
horizon = 20
tol = 1e-5

[mpc.weights]
Q_ref = [10.0, 10.0, 20.0]

[mpc.soft]
a = 0.2

[attitude.gains]
Kp_att = [5.0, 5.0, 3.0]

[baseline]
front_tilt_deg = 30.0

[[failure]]
kind = "limit"
index = 8
value = [-0.2, 0.2]
trigger = { time = 4.0 }
"""
    sc, sim = parse_config(text)
    assert sc.kind is ScenarioKind.CIRCLE and sc.radius == 300.0 and sc.direction == -1
    assert sim.controller == "pid" and sim.seed == 3 and not sim.fallback and sim.duration == 30.0
    assert sc.initial.tilt == pytest.approx(np.full(4, math.radians(10)))
    assert sc.mpc.horizon == 20 and sc.mpc.tol == 1e-5
    assert sc.weights.Q_ref == pytest.approx([10, 10, 20]) and sc.weights.a == 0.2
    assert sc.gains.Kp_att == pytest.approx([5, 5, 3])
    assert sc.baseline.front_tilt == pytest.approx(math.radians(30))
    (f,) = sc.failures
    assert f.ub_abs[7] == 0.2 and f.lb_abs[7] == -0.2


@pytest.mark.parametrize("text, line, fragment", [
    ('[scenario]\nkind = "hover"\nspeed = 3\n', 3, "unknown key"),
    ('[scenario]\nkind = "loop"\n', 2, "unknown scenario kind"),
    ('[scenario]\nkind = "hover"\n\n[sim]\nplant_hz = 400.5\n', 5, "integer"),
    ('[scenario]\nkind = "hover"\nradius = -3\n', None, "radius"),
    ('[scenario\nkind = "hover"\n', 1, "syntax"),
    ('[scenario]\nkind = "hover"\n[[failure]]\nkind = "motor"\nindex = 7\ntrigger = { time = 1.0 }\n', 5, "motor index"),
    ('[scenario]\nkind = "hover"\n[[failure]]\nkind = "motor"\nindex = 1\ntrigger = { when = 1.0 }\n', 6, "trigger"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "bad.toml")
    assert fragment in str(exc.value)
    assert exc.value.path == "bad.toml"
    if line is not None:
        assert exc.value.line == line
        assert f"bad.toml:{line}:" in str(exc.value)


def test_missing_file_names_the_path(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError) as exc:
        load_config(missing)
    assert str(missing) in str(exc.value)


def test_readme_schema_example_parses():
    import re
    from pathlib import Path
    readme = Path(__file__).resolve().parents[1] / "README.md"
    if not readme.exists():
        pytest.skip("README not available")
    block = re.search(r"```toml\n(.*?)```", readme.read_text(), re.S).group(1)
    vehicle = Path(__file__).resolve().parents[1] / "src" / "tiltvtol" / "data" / "vehicle.toml"
    sc, sim = parse_config(block.replace('"vehicle.toml"', f'"{vehicle}"'))
    assert sc.kind is ScenarioKind.CIRCLE and sim.duration == 80.0
