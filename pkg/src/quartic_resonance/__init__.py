"""Quantum and classical dynamics of two coupled quartic oscillators
near the coupling resonance under two-frequency driving."""

__version__ = "0.1.0"
