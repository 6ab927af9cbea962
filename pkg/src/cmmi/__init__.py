"""Slot scheduling for vehicles across multiple intersections, solved as a game."""

__version__ = "0.1.0"
