"""Dynamic risk budgeting under time-consistent distortion risk measures."""

__version__ = "0.1.0"
