"""Latent-modulated neural fields with parameterized latent ODE dynamics."""

__version__ = "0.1.0"
