"""Closed-form geometry of quadratic differentials on the flat torus.

Q(X) of the punctured torus is one-dimensional, spanned by dz^2 in the
flat coordinate, so extremal lengths, the foliation map on weighted
slopes, L1 norms and trajectory directions all have exact formulas.
"""

import math
from dataclasses import dataclass

from .errors import ZeroDifferential


@dataclass(frozen=True)
class Slope:
    """Primitive homotopy class (p, q) ~ (-p, -q) of a simple closed curve."""

    p: int
    q: int

    def __post_init__(self):
        p, q = int(self.p), int(self.q)
        if p == 0 and q == 0:
            raise ValueError("slope (0,0) is not a curve class")
        if math.gcd(p, q) != 1:
            raise ValueError(f"slope ({p},{q}) is not primitive")
        # canonical representative: q > 0, or q == 0 and p > 0
        if q < 0 or (q == 0 and p < 0):
            p, q = -p, -q
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def vector(self, m):
        """The lattice translation p + q tau realizing the class."""
        return self.p + self.q * m.tau

    def __str__(self):
        return f"{self.p}/{self.q}"

    @classmethod
    def parse(cls, text):
        p, _, q = text.partition("/")
        return cls(int(p), int(q))


@dataclass(frozen=True)
class TorusQuadDiff:
    """The differential a dz^2 on the punctured torus."""

    a: complex

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))


def extremal_length(s, m):
    """E(s, X) = |p + q tau|^2 / Im tau (flat annulus modulus)."""
    return abs(s.vector(m)) ** 2 / m.tau.imag


def foliation_map(s, t, m):
    """Jenkins-Strebel differential of the weighted slope t * (p,q).

    The horizontal foliation of the result runs in direction
    arg(p + q tau) and its L1 norm is t^2 E(s, m).
    """
    if t < 0:
        raise ValueError("weight must be nonnegative")
    v = s.p + s.q * m.tau.conjugate()
    return TorusQuadDiff(t * t * v * v / (m.tau.imag ** 2))


def l1_norm(d, m):
    """|a| times the cell area Im tau."""
    return abs(d.a) * m.tau.imag


def foliation_slopes(d):
    """(horizontal, vertical) trajectory directions, mod pi.

    Horizontal trajectories are directions v with a v^2 > 0.
    """
    if d.a == 0:
        raise ZeroDifferential("foliation directions undefined for a = 0")
    import cmath

    horizontal = (-cmath.phase(d.a) / 2.0) % math.pi
    vertical = (horizontal + math.pi / 2.0) % math.pi
    return horizontal, vertical


def intersection_number(s1, s2):
    """Geometric intersection number |p1 q2 - p2 q1|."""
    return abs(s1.p * s2.q - s2.p * s1.q)


def farey_neighbor(s):
    """Deterministic transversal: the i(.,.) = 1 neighbor of smallest size.

    Solves p s' - q r = 1 and minimizes |r| + |s'| over the solution
    line (ties to the smaller shift), so the same slope always yields
    the same transversal.
    """
    g, ca, cb = _extended_gcd(s.p, -s.q)  # p*ca - q*cb = g = +-1
    if g < 0:
        ca, cb = -ca, -cb
    x, y = cb, ca  # p*y - q*x = 1; general solution (x + k p, y + k q)
    assert s.p * y - s.q * x == 1
    best = None
    k0 = round((-x * s.p - y * s.q) / (s.p**2 + s.q**2))
    for k in range(k0 - 2, k0 + 3):
        cand = (x + k * s.p, y + k * s.q)
        size = abs(cand[0]) + abs(cand[1])
        if best is None or size < best[0] or (size == best[0] and cand < best[1]):
            best = (size, cand)
    return Slope(best[1][0], best[1][1])


def _extended_gcd(a, b):
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        qq = old_r // r
        old_r, r = r, old_r - qq * r
        old_s, s = s, old_s - qq * s
        old_t, t = t, old_t - qq * t
    return old_r, old_s, old_t


def slope_word(s):
    """Word in {A, B, a, b} whose deck translation is p + q tau.

    Stern-Brocot mediant construction; lower-case letters are inverses.
    Concatenation W1 + W2 composes deck translations, so any bracketing
    realizes the same curve class up to conjugacy.
    """
    p, q = s.p, s.q
    if q == 0:
        return "A" if p > 0 else "a"
    if p == 0:
        return "B"
    if p > 0:
        lo = (1, 0, "A")
    else:
        lo = (-1, 0, "a")
    hi = (0, 1, "B")
    for _ in range(10_000):
        med = (lo[0] + hi[0], lo[1] + hi[1], lo[2] + hi[2])
        cross = p * med[1] - q * med[0]
        if cross == 0:
            return med[2]
        # target lies strictly between lo and med, or med and hi
        if (p * lo[1] - q * lo[0]) * cross < 0:
            hi = med
        else:
            lo = med
    raise RuntimeError(f"Stern-Brocot walk did not terminate for {s}")


def systole_slopes(m, tol=1e-9):
    """All primitive slopes realizing the shortest flat geodesic."""
    best = None
    found = []
    for p in range(-4, 5):
        for q in range(0, 5):
            if q == 0 and p <= 0:
                continue
            if math.gcd(p, q) != 1:
                continue
            ln = abs(p + q * m.tau)
            if best is None or ln < best - tol:
                best = ln
                found = [Slope(p, q)]
            elif abs(ln - best) <= tol:
                found.append(Slope(p, q))
    return sorted(set(found), key=lambda s: (s.q, s.p))
