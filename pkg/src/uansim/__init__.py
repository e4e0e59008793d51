"""Simulator and multi-agent learning harness for power allocation in
imperfect, energy-constrained underwater acoustic sensor networks."""

__version__ = "0.1.0"
