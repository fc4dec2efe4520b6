"""BQ discreteness classification on the Markov variety.

A punctured-torus representation with parabolic commutator is encoded
by its trace triple (x, y, z) with x^2 + y^2 + z^2 = xyz.  Simple
closed curves correspond to vertices of the Farey tree, reached from
the root triple by Vieta flips.  Bowditch's condition is semi-decided
by a depth-limited walk: a branch is pruned once its traces certify
escape, a trace in the closed band |w| <= 2 - eps certifies failure.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import CommutatorDrift

DEFAULT_DEPTH = 60
DEFAULT_EPS = 1e-3
DEFAULT_NODE_BUDGET = 200_000
MARKOV_TOL = 1e-6


class Classification(enum.IntEnum):
    DISCRETE_BQ = _kernels.BQ_DISCRETE
    BQ_VIOLATED = _kernels.BQ_VIOLATED
    UNKNOWN = _kernels.BQ_UNKNOWN
    ERROR = _kernels.BQ_ERROR


@dataclass(frozen=True)
class TraceTriple:
    """(tr A, tr B, tr AB) of a punctured-torus representation."""

    x: complex
    y: complex
    z: complex

    def __post_init__(self):
        object.__setattr__(self, "x", complex(self.x))
        object.__setattr__(self, "y", complex(self.y))
        object.__setattr__(self, "z", complex(self.z))

    @property
    def markov_residual(self):
        x, y, z = self.x, self.y, self.z
        return abs(x * x + y * y + z * z - x * y * z)

    @property
    def scale(self):
        return max(1.0, abs(self.x), abs(self.y), abs(self.z))

    def as_tuple(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class PixelClass:
    """Classification certificate at a reported search depth."""

    tag: Classification
    depth_used: int
    evidence: complex | None = None
    evidence_depth: int | None = None


def neighbor_flip(t, which):
    """Vieta flip of one coordinate, e.g. z -> xy - z.  An involution."""
    x, y, z = t.x, t.y, t.z
    if which == 0:
        return TraceTriple(y * z - x, y, z)
    if which == 1:
        return TraceTriple(x, x * z - y, z)
    if which == 2:
        return TraceTriple(x, y, x * y - z)
    raise ValueError(f"flip index must be 0, 1 or 2, got {which}")


def bq_classify(t, max_depth=DEFAULT_DEPTH, eps=DEFAULT_EPS,
                node_budget=DEFAULT_NODE_BUDGET):
    """Classify a triple as DISCRETE_BQ / BQ_VIOLATED / UNKNOWN / ERROR.

    DISCRETE_BQ means every branch of the flip tree was pruned by the
    growth certificate (edge traces >= 2+eps, strictly growing flip);
    BQ_VIOLATED records the offending trace as evidence.  The node
    budget is a deterministic work cap; exceeding it yields UNKNOWN.
    """
    tag, depth, _nodes, ev_re, ev_im, ev_d = _kernels.bq_classify_kernel(
        complex(t.x), complex(t.y), complex(t.z),
        int(max_depth), float(eps), int(node_budget), MARKOV_TOL)
    cls = Classification(tag)
    if cls == Classification.BQ_VIOLATED:
        return PixelClass(cls, depth, complex(ev_re, ev_im), ev_d)
    return PixelClass(cls, depth)


def jorgensen_reject(g):
    """True if a tested pair from <A,B> violates Jorgensen's inequality.

    |tr^2 U - 4| + |tr[U,V] - 2| < 1 for non-elementary <U,V> is
    impossible in a discrete group, so True certifies non-discreteness
    (modulo elementary degenerations); False is no conclusion.  Since
    genuine punctured-torus pairs have tr[A,B] = -2, the (A,B) test is
    inert for them and the conjugated pairs do the work.
    """
    a = np.ascontiguousarray(g.A.mat.reshape(4), dtype=np.complex128)
    b = np.ascontiguousarray(g.B.mat.reshape(4), dtype=np.complex128)
    return bool(_kernels.jorgensen_reject_kernel(a, b))
