"""Reflected two-dimensional walks with state-dependent drift: classification,
steady-state ratios, simulation and birth-death recurrence tests."""

__version__ = "0.1.0"
