"""Superconducting-memristor neuromorphic simulator.

Two tiers: a behavioral transient engine that characterizes neuron, synapse
and weight-cell circuits, and a calibrated rate-domain evaluator used to
evolve cart-pole controllers.
"""
from __future__ import annotations

__version__ = "0.1.0"
