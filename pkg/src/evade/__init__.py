"""Scenario-aware collision avoidance: decision engine and 2D simulator."""

__version__ = "0.1.0"
