"""Nonlocal oscillatory media: special functions, radial calculus, spiral
asymptotics, a pseudo-spectral simulator and an experiment harness."""

__version__ = "0.1.0"
