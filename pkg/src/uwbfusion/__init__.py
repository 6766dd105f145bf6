"""Relative localization of a MAV to a moving target from UWB ranges, IMU, flow and altitude sensors."""

__version__ = "0.1.0"
