"""SVG figures from simulation logs.

One file per figure family: velocity tracking, tilt and pitch, roll and yaw,
actuator commands, and the horizontal trajectory. Output is deterministic for
identical logs (fixed SVG hash salt, no date metadata).
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "tiltvtol"
# keep labels as text so the files stay small and searchable
matplotlib.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": None}

FIGURES = ("velocity.svg", "tilt_pitch.svg", "roll_yaw.svg", "commands.svg", "trajectory.svg")


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _mark_events(ax, logs):
    for lg in logs:
        if lg.failure_time is not None:
            ax.axvline(lg.failure_time, color="k", ls="--", lw=0.8, gid="failure")


def _series(logs, labels):
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    if labels is None:
        labels = [lg.meta.get("controller", "") for lg in logs] if len(logs) > 1 else [""]
    return list(logs), list(labels)


def _suffix(label):
    return f" ({label})" if label else ""


def emit_plots(logs, out_dir: str | Path, labels=None) -> list[Path]:
    """Write all figures for one log, or overlays for several, into ``out_dir``."""
    logs, labels = _series(logs, labels)
    if any(len(lg) == 0 for lg in logs):
        raise ValueError("cannot plot an empty log")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    for i, (ax, name) in enumerate(zip(axes, ("v_x", "v_y", "v_z"))):
        ax.plot(logs[0].t, logs[0].v_sp[:, i], "k:", lw=1.2, label=f"{name} setpoint")
        for lg, lab in zip(logs, labels):
            ax.plot(lg.t, lg.v[:, i], lw=1.0, label=name + _suffix(lab))
        ax.set_ylabel(f"{name} [m/s]")
        ax.legend(loc="best", fontsize=8)
        _mark_events(ax, logs)
    axes[-1].set_xlabel("time [s]")
    written.append(out / "velocity.svg")
    _save(fig, written[-1])

    fig, axes = plt.subplots(2, 1, figsize=(8, 5.5), sharex=True)
    for lg, lab in zip(logs, labels):
        for j in range(4):
            axes[0].plot(lg.t, np.degrees(lg.tilt[:, j]), lw=0.9, label=f"tilt {j + 1}" + _suffix(lab))
        axes[1].plot(lg.t, np.degrees(lg.attitude[:, 1]), lw=1.0, label="pitch" + _suffix(lab))
        axes[1].plot(lg.t, np.degrees(lg.attitude_sp[:, 1]), ":", lw=1.0, label="pitch setpoint" + _suffix(lab))
    axes[0].set_ylabel("tilt [deg]")
    axes[1].set_ylabel("pitch [deg]")
    axes[1].set_xlabel("time [s]")
    for ax in axes:
        ax.legend(loc="best", fontsize=7)
        _mark_events(ax, logs)
    written.append(out / "tilt_pitch.svg")
    _save(fig, written[-1])

    fig, axes = plt.subplots(2, 1, figsize=(8, 5.5), sharex=True)
    for lg, lab in zip(logs, labels):
        for ax, k, name in ((axes[0], 0, "roll"), (axes[1], 2, "yaw")):
            ax.plot(lg.t, np.degrees(lg.attitude[:, k]), lw=1.0, label=name + _suffix(lab))
            ax.plot(lg.t, np.degrees(lg.attitude_sp[:, k]), ":", lw=1.0, label=f"{name} setpoint" + _suffix(lab))
    axes[0].set_ylabel("roll [deg]")
    axes[1].set_ylabel("yaw [deg]")
    axes[1].set_xlabel("time [s]")
    for ax in axes:
        ax.legend(loc="best", fontsize=7)
        _mark_events(ax, logs)
    written.append(out / "roll_yaw.svg")
    _save(fig, written[-1])

    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    surf_names = ("aileron L", "aileron R", "elevator", "rudder")
    for lg, lab in zip(logs, labels):
        for j in range(4):
            axes[0].plot(lg.t, lg.rotor_cmd[:, j], lw=0.9, label=f"rotor {j + 1}" + _suffix(lab))
            axes[1].plot(lg.t, np.degrees(lg.tilt_cmd[:, j]), lw=0.9, label=f"servo {j + 1}" + _suffix(lab))
            axes[2].plot(lg.t, lg.surfaces[:, j], lw=0.9, label=surf_names[j] + _suffix(lab))
    axes[0].set_ylabel("rotor command [-]")
    axes[1].set_ylabel("tilt command [deg]")
    axes[2].set_ylabel("surface command [-]")
    axes[2].set_xlabel("time [s]")
    for ax in axes:
        ax.legend(loc="best", fontsize=6, ncol=2)
        _mark_events(ax, logs)
    written.append(out / "commands.svg")
    _save(fig, written[-1])

    fig, ax = plt.subplots(figsize=(6, 6))
    for lg, lab in zip(logs, labels):
        # NED: east on the horizontal axis, north up
        ax.plot(lg.position[:, 1], lg.position[:, 0], lw=1.0, label=lab or "path")
        if lg.failure_time is not None:
            i = int(np.searchsorted(lg.t, lg.failure_time))
            ax.plot(lg.position[i, 1], lg.position[i, 0], "kx")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    written.append(out / "trajectory.svg")
    _save(fig, written[-1])
    return written
