"""Holonomy of CP1 structures on the punctured torus by ODE transport.

The developing map is the solution quotient of y'' + q y = 0 with
q(z) = P(z;tau)/4 + b0 + c on C minus the lattice.  The 1/4 makes both
indicial exponents at lattice points equal 1/2, so the local monodromy
around the puncture is parabolic with trace -2, and displacing c by w
shifts the Schwarzian of the structure by exactly 2 w dz^2.

b0 is the accessory constant calibrated so that c = 0 is the
uniformizing (Fuchsian) structure; see calibrate_origin.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .elliptic import Modulus, wp
from .errors import (CalibrationFailure, CommutatorDrift, PoleProximity,
                     StepFailure)

DEFAULT_TOL = 1e-10


class MobiusMap:
    """SL2(C) lift of a Mobius transformation (2x2 complex, det 1)."""

    __slots__ = ("mat",)

    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=np.complex128).reshape(2, 2)

    @classmethod
    def identity(cls):
        return cls(np.eye(2, dtype=np.complex128))

    @property
    def a(self):
        return self.mat[0, 0]

    @property
    def b(self):
        return self.mat[0, 1]

    @property
    def c(self):
        return self.mat[1, 0]

    @property
    def d(self):
        return self.mat[1, 1]

    @property
    def trace(self):
        return self.mat[0, 0] + self.mat[1, 1]

    @property
    def det(self):
        return self.mat[0, 0] * self.mat[1, 1] - self.mat[0, 1] * self.mat[1, 0]

    def inv(self):
        # adjugate; valid because det = 1
        m = self.mat
        return MobiusMap([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])

    def __matmul__(self, other):
        return MobiusMap(self.mat @ other.mat)

    def __neg__(self):
        return MobiusMap(-self.mat)

    def apply(self, z):
        m = self.mat
        return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])

    def is_sl2(self, tol=1e-8):
        return abs(self.det - 1.0) <= tol

    def __repr__(self):
        return f"MobiusMap({self.mat.tolist()})"


def commutator(a, b):
    return a @ b @ a.inv() @ b.inv()


@dataclass(frozen=True)
class ProjectivePoint:
    """A CP1 structure on the torus of modulus m, in the affine chart.

    c is the affine Schwarzian coordinate relative to the calibrated
    origin; b0 is the cached accessory constant of the Modulus.
    """

    m: Modulus
    c: complex
    b0: complex

    @property
    def offset(self):
        return complex(self.b0) + complex(self.c)


@dataclass(frozen=True)
class GeneratorPair:
    """SL2 lifts of the holonomy around z -> z+1 (A) and z -> z+tau (B)."""

    A: MobiusMap
    B: MobiusMap

    @property
    def commutator_trace(self):
        return commutator(self.A, self.B).trace


def potential(z, p):
    """q(z) = P(z; tau)/4 + b0 + c; propagates PoleProximity."""
    return 0.25 * wp(z, p.m, tol=1e-12) + p.offset


def base_point(m):
    """Default ODE base point, deep inside the fundamental cell."""
    return (1.0 + m.tau) / 2.0


def _as_path(path):
    arr = np.asarray(list(path), dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("path must contain at least two points")
    return arr


def transport(path, p, tol=DEFAULT_TOL):
    """Fundamental solution matrix of Y' = [[0,1],[-q,0]] Y along a polyline.

    det = 1 up to integration error (Wronskian conservation).
    """
    arr = _as_path(path)
    cpar, fpar = p.m._packed
    out = np.empty(4, dtype=np.complex128)
    st = _kernels.transport_path(arr, complex(p.offset), cpar, fpar, tol, tol, out)
    if st == _kernels.STATUS_POLE:
        raise PoleProximity(f"path passes within the guard radius of the lattice: {arr}")
    if st == _kernels.STATUS_STEPFAIL:
        raise StepFailure(f"integrator hit the step floor at tol={tol}")
    return MobiusMap(out.reshape(2, 2))


def transport_many(path, m, offsets, tol=DEFAULT_TOL):
    """One path, a batch of potential offsets b0+c. Returns (mats, status)."""
    arr = _as_path(path)
    offs = np.ascontiguousarray(offsets, dtype=np.complex128)
    cpar, fpar = m._packed
    out = np.empty((offs.size, 4), dtype=np.complex128)
    st = np.empty(offs.size, dtype=np.int64)
    _kernels.transport_path_many(arr, offs, cpar, fpar, tol, tol, out, st)
    return out.reshape(-1, 2, 2), st


def generator_traces_many(m, offsets, tol=DEFAULT_TOL, base=None):
    """Batched (x, y, z, tr[A,B]) over potential offsets. Returns (out, status)."""
    z0 = base_point(m) if base is None else complex(base)
    pa = np.array([z0, z0 + 1.0], dtype=np.complex128)
    pb = np.array([z0, z0 + m.tau], dtype=np.complex128)
    offs = np.ascontiguousarray(offsets, dtype=np.complex128)
    cpar, fpar = m._packed
    out = np.empty((offs.size, 4), dtype=np.complex128)
    st = np.empty(offs.size, dtype=np.int64)
    _kernels.generator_traces_many(pa, pb, offs, cpar, fpar, tol, tol, out, st)
    return out, st


def _normalize_signs(A, B):
    """Even sign normalization: Re tr >= 0 for both generators.

    Ties (purely imaginary trace) break toward positive imaginary part.
    The commutator and the Markov identity are insensitive to this.
    """
    def want_flip(t):
        if t.real != 0.0:
            return t.real < 0.0
        return t.imag < 0.0

    if want_flip(A.trace):
        A = -A
    if want_flip(B.trace):
        B = -B
    return A, B


def holonomy_generators(p, tol=DEFAULT_TOL, base=None):
    """Holonomy lifts A (z -> z+1) and B (z -> z+tau) from the base point."""
    z0 = base_point(p.m) if base is None else complex(base)
    A = transport([z0, z0 + 1.0], p, tol)
    B = transport([z0, z0 + p.m.tau], p, tol)
    A, B = _normalize_signs(A, B)
    g = GeneratorPair(A, B)
    drift = abs(g.commutator_trace + 2.0)
    scale = max(1.0, abs(A.trace), abs(B.trace)) ** 2
    if drift > max(1e-6, 1e4 * tol) * scale:
        raise CommutatorDrift(
            f"tr[A,B] = {g.commutator_trace}, drift {drift:.3e} at tol {tol}")
    return g


def trace_triple(g, tol=1e-6):
    """(x, y, z) = (tr A, tr B, tr AB); raises CommutatorDrift if unsound."""
    from .discreteness import TraceTriple

    drift = abs(g.commutator_trace + 2.0)
    scale = max(1.0, abs(g.A.trace), abs(g.B.trace)) ** 2
    if drift > tol * scale:
        raise CommutatorDrift(f"tr[A,B]+2 = {drift:.3e} exceeds {tol:.1e}")
    return TraceTriple(g.A.trace, g.B.trace, (g.A @ g.B).trace)


# --- calibration ------------------------------------------------------------


def _bq_tag(x, y, z, depth=40, eps=1e-3):
    tag, *_ = _kernels.bq_classify_kernel(
        complex(x), complex(y), complex(z), depth, eps, 200000, 1e-6)
    return tag


def _real_axis_roots(m, lo, hi, samples, tol):
    """Roots of Im(tr AB)(b0) = 0 for real b0 in [lo, hi] (rectangular case)."""
    grid = np.linspace(lo, hi, samples)
    out, st = generator_traces_many(m, grid.astype(np.complex128), tol)
    imz = np.where(st == 0, out[:, 2].imag, np.nan)
    roots = []
    for i in range(len(grid) - 1):
        a, b = imz[i], imz[i + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0.0:
            def f(b0):
                o, s = generator_traces_many(m, np.array([b0 + 0j]), tol)
                if s[0] != 0:
                    raise StepFailure("trace evaluation failed during scan")
                return o[0, 2].imag
            roots.append(brentq(f, grid[i], grid[i + 1], xtol=1e-13, rtol=1e-15))
    return roots


def _validate_candidate(m, b0, tol):
    out, st = generator_traces_many(m, np.array([b0], dtype=np.complex128), tol)
    if st[0] != 0:
        return None
    x, y, z, comm = out[0]
    scale = max(1.0, abs(x), abs(y), abs(z))
    reality = max(abs(x.imag), abs(y.imag), abs(z.imag))
    markov = abs(x * x + y * y + z * z - x * y * z)
    if reality > 1e-7 * scale:
        return None
    if not (x.real > 2.0 and y.real > 2.0 and z.real > 2.0):
        # even sign change cannot make all three positive unless exactly
        # two are negative; normalize before judging
        xs, ys, zs = abs(x.real), abs(y.real), abs(z.real)
        if not (xs > 2.0 and ys > 2.0 and zs > 2.0):
            return None
        x, y, z = xs + 0j, ys + 0j, zs + 0j
    if _bq_tag(x.real, y.real, z.real) != _kernels.BQ_DISCRETE:
        return None
    return {
        "b0": b0,
        "triple": (complex(x), complex(y), complex(z)),
        "reality": float(reality),
        "markov": float(markov),
        "commutator": float(abs(comm + 2.0)),
    }


def _calibrate_rectangular(m, tol):
    """Scan real b0 for the all-real-trace, BQ-discrete solution."""
    for half_width in (4.0, 12.0):
        roots = _real_axis_roots(m, -half_width, half_width, 481, tol)
        cands = [c for r in roots if (c := _validate_candidate(m, r + 0j, tol))]
        if cands:
            # the uniformizing point has the smallest generator traces;
            # Fuchsian centers on the axis carry a grafted (longer) curve
            cands.sort(key=lambda c: max(abs(c["triple"][0]), abs(c["triple"][1])))
            return cands[0]
    raise CalibrationFailure(f"no BQ-discrete real-trace b0 found for tau={m.tau}")


def _gauss_newton_b0(m, b0, tol, max_iter=30):
    """Drive (Im x, Im y, Im z)(b0) to zero; b0 complex. Returns (b0, resid)."""
    h = 1e-6
    b0 = complex(b0)
    last = np.inf
    for _ in range(max_iter):
        offs = np.array([b0, b0 + h, b0 - h, b0 + 1j * h, b0 - 1j * h],
                        dtype=np.complex128)
        out, st = generator_traces_many(m, offs, tol)
        if np.any(st != 0):
            raise CalibrationFailure("trace evaluation failed during Newton")
        f0 = out[0, :3]
        dre = (out[1, :3] - out[2, :3]) / (2 * h)
        dim = (out[3, :3] - out[4, :3]) / (2j * h)
        fp = 0.5 * (dre + dim)  # holomorphic derivative, averaged estimates
        r = f0.imag
        scale = max(1.0, float(np.max(np.abs(f0))))
        resid = float(np.max(np.abs(r))) / scale
        if resid < max(tol * 10, 1e-12):
            return b0, resid
        J = np.column_stack([fp.imag, fp.real])  # d Im f / d(Re b0, Im b0)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if not np.all(np.isfinite(step)):
            raise CalibrationFailure("singular Jacobian in calibration Newton")
        b0 = b0 + step[0] + 1j * step[1]
        if resid > 10 * last and resid > 1e-6:
            raise CalibrationFailure(f"Newton diverging, residual {resid:.3e}")
        last = resid
    if last < 1e-8:
        return b0, last
    raise CalibrationFailure(f"Newton stalled, residual {last:.3e}")


@lru_cache(maxsize=64)
def _calibrate_cached(tau, tol):
    m = Modulus(tau)
    rect = Modulus(1j * m.tau.imag)
    seed = _calibrate_rectangular(rect, tol)
    if abs(m.tau.real) < 1e-14:
        report = dict(seed)
        report["path_steps"] = 0
        return report
    # continue b0 in the real part of tau from the rectangular seed
    b0 = complex(seed["b0"])
    s, ds = 0.0, 0.25
    steps = 0
    while s < 1.0:
        ds = min(ds, 1.0 - s)
        mt = Modulus(1j * m.tau.imag + (s + ds) * m.tau.real)
        try:
            b0_new, _ = _gauss_newton_b0(mt, b0, tol)
        except CalibrationFailure:
            ds *= 0.5
            if ds < 1e-4:
                raise CalibrationFailure(
                    f"continuation to tau={m.tau} stalled at s={s}")
            continue
        b0, s = b0_new, s + ds
        ds *= 1.5
        steps += 1
    cand = _validate_candidate(m, b0, tol)
    if cand is None:
        raise CalibrationFailure(
            f"continuation endpoint failed validation at tau={m.tau}, b0={b0}")
    cand["path_steps"] = steps
    return cand


def calibrate_report(m, tol=DEFAULT_TOL):
    """Calibration result with residual diagnostics (dict)."""
    report = dict(_calibrate_cached(m.tau, float(tol)))
    x, y, z = report["triple"]
    report["residuals"] = {
        "im_x": abs(x.imag),
        "im_y": abs(y.imag),
        "im_z": abs(z.imag),
        "markov": report.pop("markov"),
        "commutator": report.pop("commutator"),
    }
    report.pop("reality", None)
    return report


def calibrate_origin(m, tol=DEFAULT_TOL):
    """Accessory constant b0 making c = 0 the Fuchsian (uniformizing) point.

    Rectangular moduli are solved by a deterministic scan along the real
    b0 axis; every other modulus by continuation of b0 while Re(tau)
    sweeps from the rectangular seed to its target.  The result is
    cached per (tau, tol) and reproducible run to run.
    """
    return complex(_calibrate_cached(m.tau, float(tol))["b0"])


def projective_point(m, c=0j, tol=DEFAULT_TOL):
    """ProjectivePoint at affine coordinate c over the calibrated origin."""
    return ProjectivePoint(m=m, c=complex(c), b0=calibrate_origin(m, tol))
