"""Navier-Stokes-Voigt equations with delayed forcing: simulator and verification lab."""

__version__ = "0.1.0"
