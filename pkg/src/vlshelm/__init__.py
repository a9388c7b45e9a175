"""Bounded-domain Helmholtz scattering with a variational Lippmann-Schwinger solver,
data-driven reduced order models and regularized waveform inversion."""

__version__ = "0.1.0"
