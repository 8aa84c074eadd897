"""Unified MPC flight-control stack and simulator for a quad tiltrotor VTOL."""

__version__ = "0.1.0"
