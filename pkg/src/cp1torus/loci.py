"""Pleating rays, grafting weights and Fuchsian centers.

A pleating ray for a slope gamma is the branch through c = 0 of
{ Im tr rho_c(gamma) = 0, Re tr > 2 }: bending along gamma keeps its
holonomy real hyperbolic.  Because tr rho_c(gamma) is holomorphic in c,
the direction conj(f')/|f'| is tangent to the level set and strictly
increases Re f, so the ray is traced by following it with a Newton
corrector in the normal direction.

The grafting weight is read off as the continuous phase of the ratio u
of diagonal entries of a transversal's holonomy in the frame that
diagonalizes rho(gamma); it interpolates the 2 pi n values attained at
the Fuchsian centers.
"""

from dataclasses import dataclass, field

import numpy as np

from .discreteness import TraceTriple, bq_classify, Classification
from .elliptic import Modulus
from .errors import (BranchLoss, ContinuationStall, DegenerateAxis,
                     NewtonDivergence)
from .flatdiff import (Slope, farey_neighbor, foliation_map, l1_norm,
                       slope_word)
from .holonomy import (DEFAULT_TOL, MobiusMap, base_point, calibrate_origin,
                       projective_point, transport, transport_many)

DEFAULT_STEP = np.pi / 16.0
CORRECTOR_TARGET = 1e-9


@dataclass(frozen=True)
class RayPoint:
    """One continuation node: grafting weight t at affine coordinate c."""

    t: float
    c: complex
    triple: TraceTriple
    residual: float  # |Im tr rho(gamma)| / max(1, |tr|)


@dataclass(frozen=True)
class FuchsianCenter:
    """The 2 pi n - integral point on the pleating ray of one slope."""

    slope: Slope
    n: int
    c: complex
    triple: TraceTriple
    weight: float
    residuals: dict = field(default_factory=dict)


def _word_matrix(word, A, B):
    mats = {"A": A, "B": B, "a": np.linalg.inv(A), "b": np.linalg.inv(B)}
    out = np.eye(2, dtype=np.complex128)
    for ch in word:
        out = out @ mats[ch]
    return out


class _CurveSystem:
    """Batched evaluator of generator and curve matrices at offsets b0+c."""

    def __init__(self, m, s, tol=DEFAULT_TOL):
        self.m = m
        self.s = s
        self.tol = tol
        self.b0 = calibrate_origin(m, tol)
        self.delta = farey_neighbor(s)
        self.word_g = slope_word(s)
        self.word_d = slope_word(self.delta)
        z0 = base_point(m)
        self.path_a = np.array([z0, z0 + 1.0], dtype=np.complex128)
        self.path_b = np.array([z0, z0 + m.tau], dtype=np.complex128)

    def eval(self, cs):
        """Per c: (M_gamma, M_delta, triple).  Raises on transport failure."""
        cs = np.asarray(cs, dtype=np.complex128).ravel()
        offs = self.b0 + cs
        mats_a, st_a = transport_many(self.path_a, self.m, offs, self.tol)
        mats_b, st_b = transport_many(self.path_b, self.m, offs, self.tol)
        if np.any(st_a != 0) or np.any(st_b != 0):
            raise ContinuationStall(f"transport failed along the ray near c={cs}")
        out = []
        for A, B in zip(mats_a, mats_b):
            Mg = _word_matrix(self.word_g, A, B)
            Md = _word_matrix(self.word_d, A, B)
            tri = TraceTriple(A[0, 0] + A[1, 1], B[0, 0] + B[1, 1],
                              (A @ B)[0, 0] + (A @ B)[1, 1])
            out.append((Mg, Md, tri))
        return out

    def trace_gamma(self, cs):
        return np.array([np.trace(mg) for mg, _, _ in self.eval(cs)])

    def fprime(self, c, h=None):
        """Holomorphic d/dc of (tr gamma, tr delta) by central differences."""
        h = 1e-6 * max(1.0, abs(c)) if h is None else h
        vals = self.eval([c + h, c - h, c + 1j * h, c - 1j * h])
        tg = [np.trace(v[0]) for v in vals]
        td = [np.trace(v[1]) for v in vals]
        dg = 0.5 * ((tg[0] - tg[1]) / (2 * h) + (tg[2] - tg[3]) / (2j * h))
        dd = 0.5 * ((td[0] - td[1]) / (2 * h) + (td[2] - td[3]) / (2j * h))
        return dg, dd


def _axis_ratio(Mg, Md):
    """u = ratio of diagonal entries of M_delta in M_gamma's eigenframe."""
    a, b = Mg[0, 0], Mg[0, 1]
    c, d = Mg[1, 0], Mg[1, 1]
    tr = a + d
    disc = np.sqrt(tr * tr - 4.0 + 0j)
    lam1 = (tr + disc) / 2.0
    lam2 = (tr - disc) / 2.0
    if abs(lam1) < abs(lam2):
        lam1, lam2 = lam2, lam1
    if abs(abs(lam1) - 1.0) < 1e-12:
        raise DegenerateAxis(f"tr rho(gamma) = {tr} has no hyperbolic axis")

    def evec(lam):
        v1 = np.array([b, lam - a])
        v2 = np.array([lam - d, c])
        return v1 if np.max(np.abs(v1)) >= np.max(np.abs(v2)) else v2

    V = np.column_stack([evec(lam1), evec(lam2)])
    W = np.linalg.solve(V, Md @ V)
    return W[0, 0] / W[1, 1]


def _wrap(dphi):
    return (dphi + np.pi) % (2.0 * np.pi) - np.pi


class _PhaseTracker:
    """Continuous branch of Im log u, normalized to 0 at the first sample.

    The transversal orientation is locked to the first nonzero phase
    increment, so the extracted weight starts increasing; the lock is
    deterministic for a given ray.
    """

    def __init__(self):
        self.prev = None
        self.total = 0.0
        self.sign = 0.0

    def feed(self, u):
        raw = float(np.angle(u))
        if self.prev is None:
            self.prev = raw
            return 0.0
        inc = _wrap(raw - self.prev)
        self.prev = raw
        self.total += inc
        return self.signed()

    def increment_ok(self, u):
        if self.prev is None:
            return True
        return abs(_wrap(float(np.angle(u)) - self.prev)) < 0.5 * np.pi

    def signed(self):
        if self.sign == 0.0 and abs(self.total) > 1e-9:
            self.sign = 1.0 if self.total > 0 else -1.0
        return (self.sign if self.sign != 0.0 else 1.0) * self.total


def _ray_walk(system, t_max, step, emit):
    """Shared continuation engine; calls emit(t, c, triple, residual, Mg, Md).

    Yields control back once t >= t_max.
    """
    (Mg, Md, tri) = system.eval([0.0])[0]
    x0 = np.trace(Mg)
    if not (x0.real > 2.0 and abs(x0.imag) < 1e-6 * max(1.0, abs(x0))):
        raise DegenerateAxis(
            f"calibrated origin has tr rho(gamma) = {x0}; not hyperbolic real")
    phase = _PhaseTracker()
    phase.feed(_axis_ratio(Mg, Md))
    emit(0.0, 0.0 + 0.0j, tri, 0.0, Mg, Md)

    c = 0.0 + 0.0j
    t = 0.0
    ds = 0.05
    floor = 1e-12
    while t < t_max:
        dg, _ = system.fprime(c)
        if abs(dg) == 0.0:
            raise ContinuationStall(f"d tr/dc vanished at c={c}")
        tangent = np.conj(dg) / abs(dg)
        accepted = False
        while not accepted:
            if ds < floor:
                raise ContinuationStall(f"step floor reached at c={c}, t={t}")
            c_pred = c + ds * tangent
            c_new, ok, resid = _correct(system, c_pred, tangent)
            if not ok:
                ds *= 0.5
                continue
            if abs(c_new - c_pred) > 10.0 * ds:
                raise BranchLoss(
                    f"corrector jumped {abs(c_new - c_pred):.3e} at step {ds:.3e}")
            (Mg, Md, tri) = system.eval([c_new])[0]
            u = _axis_ratio(Mg, Md)
            if not phase.increment_ok(u):
                ds *= 0.5
                continue
            t_new = phase.feed(u)
            dt = abs(t_new - t)
            accepted = True
        c, t = c_new, t_new
        emit(t, c, tri, resid, Mg, Md)
        dt = max(dt, 1e-9)
        ds *= min(2.5, max(0.3, step / dt))
    return


def _correct(system, c, tangent, max_iter=8):
    """Newton along the normal i*tangent until Im tr(gamma) is negligible."""
    for _ in range(max_iter):
        Mg, _, _ = system.eval([c])[0]
        f = np.trace(Mg)
        scale = max(1.0, abs(f))
        if abs(f.imag) < CORRECTOR_TARGET * scale:
            return c, True, abs(f.imag) / scale
        dg, _ = system.fprime(c)
        denom = (dg * 1j * tangent).imag
        if denom == 0.0:
            return c, False, np.inf
        s = -f.imag / denom
        c = c + s * 1j * tangent
    Mg, _, _ = system.eval([c])[0]
    f = np.trace(Mg)
    scale = max(1.0, abs(f))
    ok = abs(f.imag) < 10 * CORRECTOR_TARGET * scale
    return c, ok, abs(f.imag) / scale


def curve_holonomy(p, s, tol=DEFAULT_TOL):
    """rho(gamma) as the transport along the straight loop z0 -> z0 + (p+q tau).

    Lattice points on the segment (slopes with p, q both odd) are passed
    on a deterministic semicircular indentation to the left of travel;
    either side gives the same trace, being conjugate routes.
    """
    m = p.m
    z0 = base_point(m)
    v = s.vector(m)
    path = _indented_segment(z0, z0 + v, m)
    return transport(path, p, tol)


def _indented_segment(za, zb, m):
    """Straight segment with semicircular detours around lattice hits."""
    from .elliptic import lattice_distance, reduce_point

    v = zb - za
    L = abs(v)
    u = v / L
    r = 0.05 * m.systole
    # find parameters where the segment comes within r of a lattice point
    ts = np.linspace(0.0, 1.0, max(64, int(8 * L / m.systole)))
    hits = []
    for t in ts:
        z = za + t * v
        zr, (j, k) = reduce_point(z, m)
        if abs(zr) < r:
            w = z - zr  # the lattice point
            th = ((w - za) / u).real / L
            if 1e-9 < th < 1 - 1e-9 and not any(abs(th - h) < r / L for h in hits):
                hits.append(th)
    pts = [za]
    for th in sorted(hits):
        w = za + th * v
        arc = [w + r * u * np.exp(1j * phi) for phi in np.linspace(np.pi, 0.0, 9)]
        pts.extend(arc)
    pts.append(zb)
    return np.array(pts, dtype=np.complex128)


def pleating_ray(m, s, t_max, step=DEFAULT_STEP, tol=DEFAULT_TOL):
    """Trace { c : Im tr rho_c(gamma) = 0, Re tr > 2 } from the origin.

    Points are emitted at roughly uniform spacing in the extracted
    grafting weight t until t >= t_max; each carries the relative
    corrector residual.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    system = _CurveSystem(m, s, tol)
    points = []

    def emit(t, c, tri, resid, Mg, Md):
        points.append(RayPoint(float(t), complex(c), tri, float(resid)))

    _ray_walk(system, t_max, step, emit)
    return points


def grafting_weight(ray_prefix, g_end=None, *, m, s, tol=DEFAULT_TOL):
    """Re-extract the grafting weight at the end of a stored ray prefix.

    Replays the phase of the diagonalized transversal ratio along the
    prefix, normalized to 0 at the origin; at Fuchsian centers the
    result is 2 pi n.  g_end (a GeneratorPair) overrides the holonomy
    at the final point when the caller has a fresher computation.
    """
    if not ray_prefix or ray_prefix[0].t != 0.0:
        raise ValueError("ray prefix must start at the origin")
    system = _CurveSystem(m, s, tol)
    cs = [rp.c for rp in ray_prefix]
    vals = system.eval(cs)
    if g_end is not None:
        A, B = g_end.A.mat, g_end.B.mat
        Mg = _word_matrix(system.word_g, A, B)
        Md = _word_matrix(system.word_d, A, B)
        vals[-1] = (Mg, Md, ray_prefix[-1].triple)
    phase = _PhaseTracker()
    w = 0.0
    for Mg, Md, _ in vals:
        tr = np.trace(Mg)
        if abs(tr) <= 2.0:
            raise DegenerateAxis(f"tr rho(gamma) = {tr} on the ray prefix")
        w = phase.feed(_axis_ratio(Mg, Md))
    return float(w)


def _reality_gap(tri):
    """The non-gamma reality defect: Im of whichever trace moves most.

    Along a pleating ray Im(tr gamma) is held at zero by the corrector,
    so the center is the on-ray zero of the remaining imaginary parts.
    On symmetric rays one of them can vanish identically; the signed
    gap uses the larger of Im y, Im z so the root is simple.
    """
    iy, iz = tri.y.imag, tri.z.imag
    return iy if abs(iy) >= abs(iz) else iz


def fuchsian_center(m, s, n, tol=DEFAULT_TOL, bq_depth=60):
    """Locate the n-th Fuchsian center on the pleating ray of slope s.

    Follows the ray until the extracted weight crosses 2 pi n, brackets
    the zero of the remaining trace-reality defect along the ray, and
    refines it with a corrector-projected root find; verifies reality
    of the triple, the Markov identity, BQ-discreteness and the weight.
    """
    from scipy.optimize import brentq

    if n < 1:
        raise ValueError("center index n must be >= 1")
    target = 2.0 * np.pi * n
    system = _CurveSystem(m, s, tol)
    nodes = []

    def emit(t, c, tri, resid, Mg, Md):
        nodes.append((float(t), complex(c), tri))

    _ray_walk(system, target + 0.45, DEFAULT_STEP, emit)
    if nodes[-1][0] < target:
        raise ContinuationStall(f"ray ended before weight {target}")

    # bracket the reality-gap zero nearest the 2 pi n crossing
    gaps = [_reality_gap(tri) for _, _, tri in nodes]
    bracket = None
    for i in range(len(nodes) - 1):
        if gaps[i] == 0.0 or gaps[i] * gaps[i + 1] < 0.0:
            mid_t = 0.5 * (nodes[i][0] + nodes[i + 1][0])
            if bracket is None or abs(mid_t - target) < abs(bracket[2] - target):
                bracket = (i, i + 1, mid_t)
    if bracket is None:
        raise NewtonDivergence(
            f"no reality-gap sign change near weight {target} on the ray")
    i0, i1, _ = bracket
    ca, cb = nodes[i0][1], nodes[i1][1]
    dg, _ = system.fprime(ca)
    tangent = np.conj(dg) / abs(dg)

    def gap_at(sigma):
        c_try = ca + sigma * (cb - ca)
        c_proj, ok, _ = _correct(system, c_try, tangent)
        if not ok:
            raise NewtonDivergence(f"corrector failed while bracketing at {c_try}")
        _, _, tri = system.eval([c_proj])[0]
        gap_at.last = (c_proj, tri)
        return _reality_gap(tri)

    ga = gap_at(0.0)
    gb = gap_at(1.0)
    if ga == 0.0:
        gap_at(0.0)
    elif gb == 0.0:
        gap_at(1.0)
    else:
        brentq(gap_at, 0.0, 1.0, xtol=1e-14, rtol=8.9e-16)
    c, tri = gap_at.last

    Mg, Md, _ = system.eval([c])[0]
    x, y, z = tri.x, tri.y, tri.z
    scale = max(1.0, abs(x), abs(y), abs(z))
    reality = max(abs(x.imag), abs(y.imag), abs(z.imag)) / scale
    markov = tri.markov_residual / scale**3
    if reality > 1e-8:
        raise NewtonDivergence(
            f"center triple not real: relative imaginary part {reality:.2e}")
    # certify at an eps below the center's own parabolic gap: transversal
    # traces approach 2 exponentially in n, shrinking the usable band
    gap = min(abs(x.real), abs(y.real), abs(z.real)) - 2.0
    if gap <= 0:
        raise NewtonDivergence(f"center triple has a trace inside [-2,2]: {tri}")
    eps_cert = min(1e-3, 0.5 * gap)
    tag = bq_classify(TraceTriple(abs(x.real) + 0j, abs(y.real) + 0j,
                                  abs(z.real) + 0j),
                      max_depth=bq_depth, eps=eps_cert).tag
    if Classification(tag) != Classification.DISCRETE_BQ:
        raise NewtonDivergence(
            f"center failed BQ certification at eps={eps_cert:.2e}: "
            f"{Classification(tag).name}")
    prefix_nodes = [RayPoint(t, cc, tr, 0.0) for t, cc, tr in nodes
                    if t <= target + 0.4]
    w = _weight_at(system, prefix_nodes, c)
    if abs(w - target) > 1e-5:
        raise NewtonDivergence(
            f"extracted weight {w} is not {target} (center n={n})")
    return FuchsianCenter(
        slope=s, n=n, c=complex(c), triple=tri, weight=float(w),
        residuals={
            "reality_rel": float(reality),
            "markov_rel": float(markov),
            "im_tr_gamma": float(abs(np.trace(Mg).imag)),
            "im_tr_delta": float(abs(np.trace(Md).imag)),
            "bq": Classification(tag).name,
            "bq_eps": float(eps_cert),
        })


def _weight_at(system, prefix, c_target):
    """Phase replay along the prefix, then a short straight hop to c_target."""
    cs = [rp.c for rp in prefix]
    c_last = cs[-1]
    hops = max(2, int(np.ceil(abs(c_target - c_last) / max(1e-9, 0.05 * max(1.0, abs(c_last))))))
    cs = cs + [c_last + (c_target - c_last) * k / hops for k in range(1, hops + 1)]
    vals = system.eval(cs)
    phase = _PhaseTracker()
    w = 0.0
    for Mg, Md, _ in vals:
        w = phase.feed(_axis_ratio(Mg, Md))
    return float(w)


def normdiff_series(m, s, t_max, step=DEFAULT_STEP, tol=DEFAULT_TOL):
    """|| 2 phi_T(t gamma) + phi_F(t gamma) ||_1 along the pleating ray.

    phi_T at ray coordinate c is 2 c dz^2, so the norm is
    |4 c(t) + a(t)| Im tau with a(t) the Jenkins-Strebel coefficient;
    also reports the ratio against ||2 phi_T||_1 = 4 |c| Im tau.
    """
    ray = pleating_ray(m, s, t_max, step, tol)
    out = []
    for rp in ray:
        a = foliation_map(s, rp.t, m).a
        norm = abs(4.0 * rp.c + a) * m.tau.imag
        denom = 4.0 * abs(rp.c) * m.tau.imag
        ratio = norm / denom if denom > 0 else 0.0
        out.append((rp.t, float(norm), float(ratio)))
    return out
