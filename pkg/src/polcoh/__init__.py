"""Polariton condensate simulation and quantum-coherence analysis of displaced thermal states."""

__version__ = "0.1.0"
