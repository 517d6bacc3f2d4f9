"""Fault reactivation screening for compartmentalized gas-storage reservoirs."""

__version__ = "0.1.0"
