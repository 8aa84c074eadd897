from .attitude import AttitudeGains, attitude_step, attitude_torque, rate_setpoint
from .baseline import BaselineConfig, BaselineController, FlightMode, baseline_step
from .mpc import MpcConfig, MpcController, MpcOutput, MpcWeights, mpc_cost, mpc_predict, mpc_state, soft_cost

__all__ = [
    "AttitudeGains", "attitude_step", "attitude_torque", "rate_setpoint",
    "BaselineConfig", "BaselineController", "FlightMode", "baseline_step",
    "MpcConfig", "MpcController", "MpcOutput", "MpcWeights", "mpc_cost", "mpc_predict", "mpc_state", "soft_cost",
]
