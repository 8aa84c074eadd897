"""Cascaded attitude loop shared by the MPC prediction model and the runtime.

Attitude error -> rate setpoint (P), rate error -> torque (PD on the rate
history). Rates are body rates; the same arithmetic is used inside the MPC
prediction so both paths agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import PlantState, VehicleParams

RATE_LIMIT = np.array([math.pi, math.pi, math.pi])


@dataclass(frozen=True)
class AttitudeGains:
    Kp_att: np.ndarray
    Kp_rate: np.ndarray
    Kd_rate: np.ndarray

    def __post_init__(self):
        for name in ("Kp_att", "Kp_rate", "Kd_rate"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if np.any(v < 0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, v)

    @classmethod
    def default_for(cls, p: VehicleParams) -> "AttitudeGains":
        return cls(Kp_att=np.full(3, 3.0), Kp_rate=8.0 * p.inertia_diag, Kd_rate=0.4 * p.inertia_diag)


def rate_setpoint(psi_sp, psi, gains: AttitudeGains):
    err = np.asarray(psi_sp, dtype=float) - np.asarray(psi, dtype=float)
    # yaw error taken the short way round
    err = np.concatenate([err[..., :2], np.mod(err[..., 2:] + np.pi, 2 * np.pi) - np.pi], axis=-1)
    return np.clip(gains.Kp_att * err, -RATE_LIMIT, RATE_LIMIT)


def attitude_torque(psi_sp, psi, rate, rate_prev, gains: AttitudeGains):
    rate = np.asarray(rate, dtype=float)
    rate_sp = rate_setpoint(psi_sp, psi, gains)
    return gains.Kp_rate * (rate_sp - rate) + gains.Kd_rate * (np.asarray(rate_prev, dtype=float) - rate)


def attitude_step(psi_sp, state: PlantState, gains: AttitudeGains, prev_rate) -> np.ndarray:
    """Torque setpoint (N m, body) for the attitude setpoint ``psi_sp``."""
    return attitude_torque(psi_sp, state.attitude, state.body_rates, prev_rate, gains)
