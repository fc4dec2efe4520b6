"""Numba kernels: Weierstrass P, ODE transport, BQ tree search.

Everything here is deterministic (no fastmath), so rasters are
bit-identical regardless of how pixels are distributed over workers.

Lattice data is passed as a packed complex array `cpar`:
    cpar[0] = tau_red   (SL2(Z)-reduced modulus)
    cpar[1] = mu        with  Z + tau Z = mu * (Z + tau_red Z)
    cpar[2] = eta1      quasi-period constant of the reduced lattice
    cpar[3:3+NQ] = exp(i pi tau_red (n^2+n)), n = 0..NQ-1
and a float array `fpar`:
    fpar[0] = guard radius in reduced-lattice coordinates
"""

import numpy as np
from numba import njit

NQ = 12  # theta series terms; |q|^(n^2+n) underflows long before n = NQ

PI = np.pi

# DOPRI5 (Dormand-Prince 5(4)) coefficients
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1 = 35.0 / 384.0 - 5179.0 / 57600.0
_E3 = 500.0 / 1113.0 - 7571.0 / 16695.0
_E4 = 125.0 / 192.0 - 393.0 / 640.0
_E5 = -2187.0 / 6784.0 + 92097.0 / 339200.0
_E6 = 11.0 / 84.0 - 187.0 / 2100.0
_E7 = -1.0 / 40.0
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0

STATUS_OK = 0
STATUS_POLE = 1
STATUS_STEPFAIL = 2


@njit(cache=True)
def _reduce_red(w, tau_red):
    """Center w into the fundamental cell of Z + tau_red Z.

    Half-integer lattice coordinates shift up, so results land in
    [-1/2, 1/2) x [-1/2, 1/2) exactly; reproducible bit for bit.
    """
    b = w.imag / tau_red.imag
    a = w.real - b * tau_red.real
    na = np.floor(a + 0.5)
    nb = np.floor(b + 0.5)
    return w - na - nb * tau_red, na, nb


@njit(cache=True)
def _lattice_dist_red(w, tau_red):
    """Distance from cell-centered w to the nearest reduced-lattice point."""
    best = abs(w)
    for m in range(-1, 2):
        for n in range(-1, 2):
            d = abs(w - m - n * tau_red)
            if d < best:
                best = d
    return best


@njit(cache=True)
def wp_red(w, cpar):
    """P(w) for the reduced lattice, w already cell-centered and off-lattice."""
    tau_red = cpar[0]
    eta1 = cpar[2]
    v = PI * w
    u = np.exp(1j * v)           # |log u| bounded: w is cell-centered
    iu = 1.0 / u
    up = u                        # u^(2n+1)
    um = iu
    t0 = 0.0j                     # theta1 / (2 q^{1/4}) series with sin expanded
    t1 = 0.0j                     # same for theta1'
    t2 = 0.0j                     # same for theta1''
    sgn = 1.0
    u2 = u * u
    iu2 = iu * iu
    for n in range(NQ):
        k = 2.0 * n + 1.0
        qn = cpar[3 + n]
        ep = qn * up
        em = qn * um
        s = (ep - em) * (-0.5j)   # q^{n^2+n} sin((2n+1)v)
        c = (ep + em) * 0.5
        t0 += sgn * s
        t1 += sgn * k * c
        t2 -= sgn * k * k * s
        if abs(ep) + abs(em) < 1e-17 * (abs(t0) + 1e-300):
            break
        sgn = -sgn
        up = up * u2
        um = um * iu2
    return -2.0 * eta1 - PI * PI * (t2 * t0 - t1 * t1) / (t0 * t0)


@njit(cache=True)
def wp_point(z, cpar, fpar):
    """P(z; Z+tauZ) with pole guarding. Returns (value, dist_to_lattice)."""
    mu = cpar[1]
    w = z / mu
    wred, _, _ = _reduce_red(w, cpar[0])
    dist = _lattice_dist_red(wred, cpar[0])
    if dist < fpar[0]:
        return 0.0j, dist * abs(mu)
    return wp_red(wred, cpar) / (mu * mu), dist * abs(mu)


@njit(cache=True)
def _rhs(z, w, offset, cpar, fpar, y00, y01, y10, y11):
    """Derivative of the 2x2 fundamental system along segment direction w.

    Y' = w * [[0,1],[-q,0]] Y with q = P/4 + offset.  Returns a pole flag
    in the last slot (q set to 0 there; the step is aborted by caller).
    """
    mu = cpar[1]
    zr = z / mu
    wred, _, _ = _reduce_red(zr, cpar[0])
    dist = _lattice_dist_red(wred, cpar[0])
    if dist < fpar[0]:
        return 0.0j, 0.0j, 0.0j, 0.0j, True
    q = 0.25 * wp_red(wred, cpar) / (mu * mu) + offset
    wq = -w * q
    return w * y10, w * y11, wq * y00, wq * y01, False


@njit(cache=True)
def transport_segment(za, zb, offset, cpar, fpar, rtol, atol, y):
    """Advance fundamental matrix y (flat 4-vector) from za to zb. DOPRI5.

    Returns STATUS_*.  y is updated in place.
    """
    w = zb - za
    if abs(w) == 0.0:
        return STATUS_OK
    y00, y01, y10, y11 = y[0], y[1], y[2], y[3]
    s = 0.0
    # first-step heuristic: resolve both the segment and the local frequency
    q0, pole = 0.0j, False
    k100, k101, k110, k111, pole = _rhs(za, w, offset, cpar, fpar, y00, y01, y10, y11)
    if pole:
        return STATUS_POLE
    freq = np.sqrt(abs(0.25 * wp_point(za, cpar, fpar)[0] + offset)) * abs(w) + 1.0
    h = min(0.1, 0.5 / freq)
    hmin = 1e-13
    have_k1 = True
    nreject = 0
    while s < 1.0:
        if h < hmin:
            return STATUS_STEPFAIL
        if s + h > 1.0:
            h = 1.0 - s
            have_k1 = have_k1  # keep FSAL
        if not have_k1:
            k100, k101, k110, k111, pole = _rhs(za + s * w, w, offset, cpar, fpar, y00, y01, y10, y11)
            if pole:
                return STATUS_POLE
            have_k1 = True
        a00 = y00 + h * _A21 * k100
        a01 = y01 + h * _A21 * k101
        a10 = y10 + h * _A21 * k110
        a11 = y11 + h * _A21 * k111
        k200, k201, k210, k211, pole = _rhs(za + (s + _C2 * h) * w, w, offset, cpar, fpar, a00, a01, a10, a11)
        if pole:
            return STATUS_POLE
        a00 = y00 + h * (_A31 * k100 + _A32 * k200)
        a01 = y01 + h * (_A31 * k101 + _A32 * k201)
        a10 = y10 + h * (_A31 * k110 + _A32 * k210)
        a11 = y11 + h * (_A31 * k111 + _A32 * k211)
        k300, k301, k310, k311, pole = _rhs(za + (s + _C3 * h) * w, w, offset, cpar, fpar, a00, a01, a10, a11)
        if pole:
            return STATUS_POLE
        a00 = y00 + h * (_A41 * k100 + _A42 * k200 + _A43 * k300)
        a01 = y01 + h * (_A41 * k101 + _A42 * k201 + _A43 * k301)
        a10 = y10 + h * (_A41 * k110 + _A42 * k210 + _A43 * k310)
        a11 = y11 + h * (_A41 * k111 + _A42 * k211 + _A43 * k311)
        k400, k401, k410, k411, pole = _rhs(za + (s + _C4 * h) * w, w, offset, cpar, fpar, a00, a01, a10, a11)
        if pole:
            return STATUS_POLE
        a00 = y00 + h * (_A51 * k100 + _A52 * k200 + _A53 * k300 + _A54 * k400)
        a01 = y01 + h * (_A51 * k101 + _A52 * k201 + _A53 * k301 + _A54 * k401)
        a10 = y10 + h * (_A51 * k110 + _A52 * k210 + _A53 * k310 + _A54 * k410)
        a11 = y11 + h * (_A51 * k111 + _A52 * k211 + _A53 * k311 + _A54 * k411)
        k500, k501, k510, k511, pole = _rhs(za + (s + _C5 * h) * w, w, offset, cpar, fpar, a00, a01, a10, a11)
        if pole:
            return STATUS_POLE
        a00 = y00 + h * (_A61 * k100 + _A62 * k200 + _A63 * k300 + _A64 * k400 + _A65 * k500)
        a01 = y01 + h * (_A61 * k101 + _A62 * k201 + _A63 * k301 + _A64 * k401 + _A65 * k501)
        a10 = y10 + h * (_A61 * k110 + _A62 * k210 + _A63 * k310 + _A64 * k410 + _A65 * k510)
        a11 = y11 + h * (_A61 * k111 + _A62 * k211 + _A63 * k311 + _A64 * k411 + _A65 * k511)
        k600, k601, k610, k611, pole = _rhs(za + (s + h) * w, w, offset, cpar, fpar, a00, a01, a10, a11)
        if pole:
            return STATUS_POLE
        n00 = y00 + h * (_B1 * k100 + _B3 * k300 + _B4 * k400 + _B5 * k500 + _B6 * k600)
        n01 = y01 + h * (_B1 * k101 + _B3 * k301 + _B4 * k401 + _B5 * k501 + _B6 * k601)
        n10 = y10 + h * (_B1 * k110 + _B3 * k310 + _B4 * k410 + _B5 * k510 + _B6 * k610)
        n11 = y11 + h * (_B1 * k111 + _B3 * k311 + _B4 * k411 + _B5 * k511 + _B6 * k611)
        k700, k701, k710, k711, pole = _rhs(za + (s + h) * w, w, offset, cpar, fpar, n00, n01, n10, n11)
        if pole:
            return STATUS_POLE
        e00 = h * (_E1 * k100 + _E3 * k300 + _E4 * k400 + _E5 * k500 + _E6 * k600 + _E7 * k700)
        e01 = h * (_E1 * k101 + _E3 * k301 + _E4 * k401 + _E5 * k501 + _E6 * k601 + _E7 * k701)
        e10 = h * (_E1 * k110 + _E3 * k310 + _E4 * k410 + _E5 * k510 + _E6 * k610 + _E7 * k710)
        e11 = h * (_E1 * k111 + _E3 * k311 + _E4 * k411 + _E5 * k511 + _E6 * k611 + _E7 * k711)
        ymax = max(max(abs(y00), abs(y01)), max(abs(y10), abs(y11)))
        nmax = max(max(abs(n00), abs(n01)), max(abs(n10), abs(n11)))
        sc = atol + rtol * max(ymax, nmax)
        err = max(max(abs(e00), abs(e01)), max(abs(e10), abs(e11))) / sc
        if err <= 1.0:
            s += h
            y00, y01, y10, y11 = n00, n01, n10, n11
            k100, k101, k110, k111 = k700, k701, k710, k711  # FSAL
            nreject = 0
            fac = 0.9 * err ** -0.2 if err > 1e-10 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            nreject += 1
            if nreject > 60:
                return STATUS_STEPFAIL
            h *= max(0.2, 0.9 * err ** -0.2)
            have_k1 = True  # k1 unchanged at same s
    y[0], y[1], y[2], y[3] = y00, y01, y10, y11
    return STATUS_OK


@njit(cache=True)
def transport_path(path, offset, cpar, fpar, rtol, atol, out):
    """Fundamental matrix along a polyline; out = flat 4-vector."""
    out[0], out[1], out[2], out[3] = 1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j
    for i in range(len(path) - 1):
        st = transport_segment(path[i], path[i + 1], offset, cpar, fpar, rtol, atol, out)
        if st != STATUS_OK:
            return st
    return STATUS_OK


@njit(cache=True)
def transport_path_many(path, offsets, cpar, fpar, rtol, atol, out, status):
    """Independently integrate one path for a batch of potential offsets."""
    for j in range(offsets.shape[0]):
        status[j] = transport_path(path, offsets[j], cpar, fpar, rtol, atol, out[j])


@njit(cache=True)
def generator_traces_many(path_a, path_b, offsets, cpar, fpar, rtol, atol, out, status):
    """Per offset: traces (x, y, z) and tr[A,B]; out shape (n, 4)."""
    ya = np.empty(4, dtype=np.complex128)
    yb = np.empty(4, dtype=np.complex128)
    for j in range(offsets.shape[0]):
        st = transport_path(path_a, offsets[j], cpar, fpar, rtol, atol, ya)
        if st == STATUS_OK:
            st = transport_path(path_b, offsets[j], cpar, fpar, rtol, atol, yb)
        status[j] = st
        if st != STATUS_OK:
            out[j, 0] = np.nan
            out[j, 1] = np.nan
            out[j, 2] = np.nan
            out[j, 3] = np.nan
            continue
        a00, a01, a10, a11 = ya[0], ya[1], ya[2], ya[3]
        b00, b01, b10, b11 = yb[0], yb[1], yb[2], yb[3]
        out[j, 0] = a00 + a11
        out[j, 1] = b00 + b11
        # AB
        ab00 = a00 * b00 + a01 * b10
        ab01 = a00 * b01 + a01 * b11
        ab10 = a10 * b00 + a11 * b10
        ab11 = a10 * b01 + a11 * b11
        out[j, 2] = ab00 + ab11
        # [A,B] = A B A^{-1} B^{-1}; inverses via adjugate (det = 1)
        ai00, ai01, ai10, ai11 = a11, -a01, -a10, a00
        bi00, bi01, bi10, bi11 = b11, -b01, -b10, b00
        c00 = ab00 * ai00 + ab01 * ai10
        c01 = ab00 * ai01 + ab01 * ai11
        c10 = ab10 * ai00 + ab11 * ai10
        c11 = ab10 * ai01 + ab11 * ai11
        d00 = c00 * bi00 + c01 * bi10
        d11 = c10 * bi01 + c11 * bi11
        out[j, 3] = d00 + d11


# --- BQ tree search --------------------------------------------------------

BQ_DISCRETE = 0
BQ_VIOLATED = 1
BQ_UNKNOWN = 2
BQ_ERROR = 3


@njit(cache=True)
def _markov_residual(x, y, z):
    return abs(x * x + y * y + z * z - x * y * z)


@njit(cache=True)
def bq_classify_kernel(x, y, z, max_depth, eps, node_budget, markov_tol):
    """Depth-limited Bowditch-style walk of the Markov triple tree.

    Returns (tag, depth_used, nodes, evid_re, evid_im, evid_depth).
    evid_* hold the offending trace for BQ_VIOLATED, else 0.
    """
    scale = max(1.0, max(abs(x), max(abs(y), abs(z))))
    if _markov_residual(x, y, z) > markov_tol * scale * scale * scale:
        return BQ_ERROR, 0, 0, 0.0, 0.0, 0
    low = 2.0 - eps
    high = 2.0 + eps
    m = min(abs(x), min(abs(y), abs(z)))
    if m <= low:
        w = x
        if abs(y) < abs(w):
            w = y
        if abs(z) < abs(w):
            w = z
        return BQ_VIOLATED, 0, 1, w.real, w.imag, 0
    if max_depth == 0:
        return BQ_UNKNOWN, 0, 1, 0.0, 0.0, 0
    # DFS stack; each frame: parent triple + which coordinate to flip + depth
    cap = 2 * max_depth + 8
    sx = np.empty(cap, dtype=np.complex128)
    sy = np.empty(cap, dtype=np.complex128)
    sz = np.empty(cap, dtype=np.complex128)
    sk = np.empty(cap, dtype=np.int8)
    sd = np.empty(cap, dtype=np.int32)
    top = 0
    for k in range(3):
        sx[top] = x
        sy[top] = y
        sz[top] = z
        sk[top] = k
        sd[top] = 1
        top += 1
    nodes = 1
    deepest = 0
    any_unknown = False
    while top > 0:
        top -= 1
        px, py, pz = sx[top], sy[top], sz[top]
        k = sk[top]
        d = sd[top]
        nodes += 1
        if nodes > node_budget:
            return BQ_UNKNOWN, deepest, nodes, 0.0, 0.0, 0
        if d > deepest:
            deepest = d
        if k == 0:
            old = px
            nw = py * pz - px
            cx, cy, cz = nw, py, pz
            ea, eb = py, pz
        elif k == 1:
            old = py
            nw = px * pz - py
            cx, cy, cz = px, nw, pz
            ea, eb = px, pz
        else:
            old = pz
            nw = px * py - pz
            cx, cy, cz = px, py, nw
            ea, eb = px, py
        aw = abs(nw)
        if aw <= low:
            return BQ_VIOLATED, d, nodes, nw.real, nw.imag, d
        if abs(ea) >= high and abs(eb) >= high and aw > abs(old):
            continue  # escaping branch: certified growing, prune
        if d == max_depth:
            if min(abs(ea), min(abs(eb), aw)) < high:
                # persists to full depth without escaping and without
                # clearing the growth threshold: treat as BQ failure
                return BQ_VIOLATED, d, nodes, nw.real, nw.imag, d
            any_unknown = True
            continue
        for j in range(3):
            if j == k:
                continue  # immediate backtrack returns to the parent
            sx[top] = cx
            sy[top] = cy
            sz[top] = cz
            sk[top] = j
            sd[top] = d + 1
            top += 1
    if any_unknown:
        return BQ_UNKNOWN, deepest, nodes, 0.0, 0.0, 0
    return BQ_DISCRETE, deepest, nodes, 0.0, 0.0, 0


@njit(cache=True)
def _jorgensen_value(a00, a01, a10, a11, b00, b01, b10, b11):
    """|tr^2 A - 4| + |tr[A,B] - 2| for one ordered pair."""
    tra = a00 + a11
    ab00 = a00 * b00 + a01 * b10
    ab01 = a00 * b01 + a01 * b11
    ab10 = a10 * b00 + a11 * b10
    ab11 = a10 * b01 + a11 * b11
    c00 = ab00 * a11 - ab01 * a10
    c01 = -ab00 * a01 + ab01 * a00
    c10 = ab10 * a11 - ab11 * a10
    c11 = -ab10 * a01 + ab11 * a00
    d00 = c00 * b11 - c01 * b10
    d11 = -c10 * b01 + c11 * b00
    return abs(tra * tra - 4.0) + abs(d00 + d11 - 2.0)


@njit(cache=True)
def jorgensen_reject_kernel(a, b):
    """True if some tested pair from <A,B> violates Jorgensen's bound.

    Pairs tested: (A,B), (B,A), (A, BAB^-1), (B, ABA^-1).  For punctured
    torus pairs tr[A,B] = -2 makes the first two inert; the conjugate
    pairs catch degenerate configurations.
    """
    a00, a01, a10, a11 = a[0], a[1], a[2], a[3]
    b00, b01, b10, b11 = b[0], b[1], b[2], b[3]
    if _jorgensen_value(a00, a01, a10, a11, b00, b01, b10, b11) < 1.0:
        return True
    if _jorgensen_value(b00, b01, b10, b11, a00, a01, a10, a11) < 1.0:
        return True
    # BAB^-1
    t00 = b00 * a00 + b01 * a10
    t01 = b00 * a01 + b01 * a11
    t10 = b10 * a00 + b11 * a10
    t11 = b10 * a01 + b11 * a11
    c00 = t00 * b11 - t01 * b10
    c01 = -t00 * b01 + t01 * b00
    c10 = t10 * b11 - t11 * b10
    c11 = -t10 * b01 + t11 * b00
    if _jorgensen_value(a00, a01, a10, a11, c00, c01, c10, c11) < 1.0:
        return True
    # ABA^-1
    t00 = a00 * b00 + a01 * b10
    t01 = a00 * b01 + a01 * b11
    t10 = a10 * b00 + a11 * b10
    t11 = a10 * b01 + a11 * b11
    c00 = t00 * a11 - t01 * a10
    c01 = -t00 * a01 + t01 * a00
    c10 = t10 * a11 - t11 * a10
    c11 = -t10 * a01 + t11 * a00
    if _jorgensen_value(b00, b01, b10, b11, c00, c01, c10, c11) < 1.0:
        return True
    return False


@njit(cache=True)
def scan_rows_kernel(path_a, path_b, offsets, cpar, fpar, rtol, atol,
                     max_depth, eps, node_budget, markov_tol, commutator_tol,
                     classes, depths):
    """Classify a batch of pixels (their c-offsets) into BQ classes."""
    ya = np.empty(4, dtype=np.complex128)
    yb = np.empty(4, dtype=np.complex128)
    for j in range(offsets.shape[0]):
        st = transport_path(path_a, offsets[j], cpar, fpar, rtol, atol, ya)
        if st == STATUS_OK:
            st = transport_path(path_b, offsets[j], cpar, fpar, rtol, atol, yb)
        if st != STATUS_OK:
            classes[j] = BQ_ERROR
            depths[j] = 0
            continue
        x = ya[0] + ya[3]
        y = yb[0] + yb[3]
        ab00 = ya[0] * yb[0] + ya[1] * yb[2]
        ab11 = ya[2] * yb[1] + ya[3] * yb[3]
        z = ab00 + ab11
        # commutator trace for drift detection
        c00 = (ya[0] * yb[0] + ya[1] * yb[2]) * ya[3] - (ya[0] * yb[1] + ya[1] * yb[3]) * ya[2]
        c01 = -(ya[0] * yb[0] + ya[1] * yb[2]) * ya[1] + (ya[0] * yb[1] + ya[1] * yb[3]) * ya[0]
        c10 = (ya[2] * yb[0] + ya[3] * yb[2]) * ya[3] - (ya[2] * yb[1] + ya[3] * yb[3]) * ya[2]
        c11 = -(ya[2] * yb[0] + ya[3] * yb[2]) * ya[1] + (ya[2] * yb[1] + ya[3] * yb[3]) * ya[0]
        d00 = c00 * yb[3] - c01 * yb[2]
        d11 = -c10 * yb[1] + c11 * yb[0]
        scale = max(1.0, max(abs(x), max(abs(y), abs(z))))
        if abs(d00 + d11 + 2.0) > commutator_tol * scale * scale:
            classes[j] = BQ_ERROR
            depths[j] = 0
            continue
        if jorgensen_reject_kernel(ya, yb):
            classes[j] = BQ_VIOLATED
            depths[j] = 0
            continue
        tag, dused, _, _, _, _ = bq_classify_kernel(
            x, y, z, max_depth, eps, node_budget, markov_tol)
        classes[j] = tag
        depths[j] = dused
