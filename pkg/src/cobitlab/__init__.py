"""Coherent-communication laboratory: protocol simulation, resource calculus, gate capacities."""

__version__ = "0.1.0"
