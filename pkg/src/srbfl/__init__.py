"""Sharded blockchain federated learning with subjective-logic reputation."""

__version__ = "0.1.0"
