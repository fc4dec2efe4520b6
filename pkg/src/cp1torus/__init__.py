"""Numerics for CP1 structures on once-punctured tori.

Holonomy by ODE transport, BQ discreteness rasters, pleating rays and
Fuchsian centers, flat-torus quadratic differentials, and a finite
difference lab for the Schwarzian tensor calculus.
"""

from .elliptic import Modulus, reduce_point, wp

__all__ = ["Modulus", "reduce_point", "wp"]
__version__ = "0.1.0"
