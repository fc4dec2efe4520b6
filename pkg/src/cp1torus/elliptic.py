"""Weierstrass P on the lattice Z + tau Z, with SL2(Z) conditioning.

The evaluation route is a theta q-series on the SL2(Z)-reduced modulus
(geometric convergence); the direct lattice sum survives only as a test
oracle.  All tau-dependent constants are computed once per Modulus and
are immutable afterwards, so values may be shared across workers.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import PoleProximity

GUARD_FACTOR = 1e-4  # times the lattice systole


def _sl2_reduce(tau):
    """Reduce tau into the standard fundamental domain.

    Returns (tau_red, (a, b, c, d)) with tau_red = (a tau + b)/(c tau + d).
    """
    a, b, c, d = 1, 0, 0, 1
    t = complex(tau)
    for _ in range(256):
        n = int(np.floor(t.real + 0.5))
        if n != 0:
            t = t - n
            a, b = a - n * c, b - n * d
        if abs(t) < 1.0 - 1e-15:
            t = -1.0 / t
            a, b, c, d = -c, -d, a, b
        else:
            break
    return t, (a, b, c, d)


@dataclass(frozen=True)
class Modulus:
    """Torus parameter tau in the upper half-plane; fixes the lattice Z+tauZ."""

    tau: complex

    def __post_init__(self):
        t = complex(self.tau)
        if not (t.imag > 0.0):
            raise ValueError(f"Im(tau) must be positive, got {t}")
        object.__setattr__(self, "tau", t)

    @property
    def cell_area(self):
        """Area of the fundamental cell, Im(tau)."""
        return self.tau.imag

    @cached_property
    def _reduction(self):
        tau_red, (a, b, c, d) = _sl2_reduce(self.tau)
        # Z + tau Z = mu * (Z + tau_red Z) with mu = c*tau + d
        mu = c * self.tau + d
        return tau_red, mu

    @cached_property
    def systole(self):
        """Length of the shortest nonzero lattice vector."""
        tau_red, mu = self._reduction
        cands = [abs(m + n * tau_red) for m in (-1, 0, 1) for n in (-1, 0, 1)
                 if (m, n) != (0, 0)]
        return min(cands) * abs(mu)

    @property
    def guard_radius(self):
        return GUARD_FACTOR * self.systole

    @cached_property
    def _packed(self):
        """(cpar, fpar) arrays consumed by the numba kernels."""
        tau_red, mu = self._reduction
        cpar = np.zeros(3 + _kernels.NQ, dtype=np.complex128)
        cpar[0] = tau_red
        cpar[1] = mu
        n = np.arange(_kernels.NQ)
        qpow = np.exp(1j * np.pi * tau_red * (n * n + n))
        # eta1 = -pi^2/6 * theta1'''(0)/theta1'(0) for the reduced lattice
        sgn = (-1.0) ** n
        k = 2 * n + 1
        num = np.sum(sgn * k**3 * qpow)
        den = np.sum(sgn * k * qpow)
        cpar[2] = (np.pi**2 / 6.0) * (num / den)
        cpar[3:] = qpow
        guard_red = self.guard_radius / abs(mu)
        fpar = np.array([guard_red], dtype=np.float64)
        return cpar, fpar


def reduce_point(z, m):
    """Translate z into the centered fundamental cell of Z + tau Z.

    Returns (z_reduced, (j, k)) with z_reduced = z + j + k*tau exactly;
    lattice coordinates end up in [-1/2, 1/2) (half-integer ties go up).
    """
    tau = m.tau
    z = complex(z)
    b = z.imag / tau.imag
    a = z.real - b * tau.real
    na = int(np.floor(a + 0.5))
    nb = int(np.floor(b + 0.5))
    return z - na - nb * tau, (-na, -nb)


def lattice_distance(z, m):
    """Distance from z to the nearest point of Z + tau Z."""
    cpar, _ = m._packed
    mu = complex(cpar[1])
    w = complex(z) / mu
    b = w.imag / complex(cpar[0]).imag
    a = w.real - b * complex(cpar[0]).real
    wc = w - np.floor(a + 0.5) - np.floor(b + 0.5) * complex(cpar[0])
    tau_red = complex(cpar[0])
    best = min(abs(wc - mm - nn * tau_red) for mm in (-1, 0, 1) for nn in (-1, 0, 1))
    return best * abs(mu)


def wp(z, m, tol=1e-12):
    """Weierstrass P(z; Z + tau Z).

    The q-series on the reduced modulus reaches machine accuracy, well
    below any admissible tol; tol only has to be positive.  Raises
    PoleProximity within the guard radius of a lattice point.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    cpar, fpar = m._packed
    zs = np.asarray(z, dtype=np.complex128)
    scalar = zs.ndim == 0
    flat = np.atleast_1d(zs).ravel()
    out = np.empty_like(flat)
    for i, zz in enumerate(flat):
        val, dist = _kernels.wp_point(zz, cpar, fpar)
        if dist < m.guard_radius:
            raise PoleProximity(
                f"z={zz} is {dist:.3e} from a lattice point "
                f"(guard {m.guard_radius:.3e})")
        out[i] = val
    if scalar:
        return complex(out[0])
    return out.reshape(np.atleast_1d(zs).shape)
