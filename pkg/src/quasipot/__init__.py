"""quasipot - local quasipotentials, characteristics and Monte Carlo checks for weak-noise SDEs."""

__version__ = "1.0.0"
