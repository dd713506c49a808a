"""Convex piecewise-linear functions on a closed interval.

A function is stored as its left end ``lo``, the value there, and a list
of ``(length, slope)`` segments in nondecreasing slope order, which is
what makes infimal convolution a plain merge of segment lists.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass

_LEN_TOL = 1e-12


@dataclass
class ConvexPWL:
    lo: float
    f_lo: float
    segs: list[tuple[float, float]]

    @classmethod
    def point(cls, x: float, value: float) -> ConvexPWL:
        return cls(x, value, [])

    @property
    def hi(self) -> float:
        return self.lo + math.fsum(length for length, _ in self.segs)

    def __call__(self, x: float) -> float:
        pos, val = self.lo, self.f_lo
        for length, slope in self.segs:
            if x <= pos + length:
                return val + slope * max(x - pos, 0.0)
            pos += length
            val += slope * length
        return val

    def knots(self) -> list[float]:
        """Segment start points (the left end included)."""
        out, pos = [], self.lo
        for length, _ in self.segs:
            out.append(pos)
            pos += length
        return out

    def reflect(self) -> ConvexPWL:
        """``x -> self(-x)``."""
        return ConvexPWL(-self.hi, self(self.hi), [(ln, -s) for ln, s in reversed(self.segs)])

    def restrict(self, a: float, b: float) -> ConvexPWL | None:
        """Restriction to ``[a, b]``; ``None`` when the intersection is empty."""
        hi = self.hi
        lo_new, hi_new = max(self.lo, a), min(hi, b)
        if hi_new < lo_new - 1e-9:
            return None
        if hi_new < lo_new:
            hi_new = lo_new
        f_new = self(lo_new)
        segs, pos = [], self.lo
        for length, slope in self.segs:
            s, e = max(pos, lo_new), min(pos + length, hi_new)
            if e - s > _LEN_TOL:
                segs.append((e - s, slope))
            pos += length
        return ConvexPWL(lo_new, f_new, segs)

    def pieces(self) -> tuple[list[float], list[float]]:
        """Segment start points and slopes, for bisect lookups."""
        return self.knots(), [s for _, s in self.segs]


def infconv(f: ConvexPWL, g: ConvexPWL) -> ConvexPWL:
    """Infimal convolution ``h(x) = min_y f(y) + g(x - y)``."""
    merged = list(heapq.merge(f.segs, g.segs, key=lambda seg: seg[1]))
    segs: list[tuple[float, float]] = []
    for length, slope in merged:
        if segs and segs[-1][1] == slope:
            segs[-1] = (segs[-1][0] + length, slope)
        else:
            segs.append((length, slope))
    return ConvexPWL(f.lo + g.lo, f.f_lo + g.f_lo, segs)


def argmin_sum(
    f: ConvexPWL, g: ConvexPWL, shift: float, slope_tol: float = 1e-12
) -> float | None:
    """Minimiser of ``f(d) + g(shift + d)``, the one nearest 0 among ties.

    Returns ``None`` when the two domains do not overlap.
    """
    a = max(f.lo, g.lo - shift)
    b = min(f.hi, g.hi - shift)
    if b < a - 1e-9:
        return None
    if b <= a:
        return a
    fk, fs = f.pieces()
    gk, gs = g.pieces()
    cuts = {a, b}
    cuts.update(x for x in fk if a < x < b)
    cuts.update(x - shift for x in gk if a < x - shift < b)
    pts = sorted(cuts)

    def slope(knots, slopes, x):
        if not slopes:
            return 0.0
        i = bisect_right(knots, x) - 1
        return slopes[min(max(i, 0), len(slopes) - 1)]

    left = None
    for x0, x1 in zip(pts, pts[1:]):
        if x1 - x0 <= 0:
            continue
        mid = 0.5 * (x0 + x1)
        s = slope(fk, fs, mid) + slope(gk, gs, shift + mid)
        if left is None:
            if s >= -slope_tol:
                left = x0
                if s > slope_tol:
                    return _nearest_zero(left, left)
                right = x1
        else:
            if s > slope_tol:
                return _nearest_zero(left, right)
            right = x1
    if left is None:
        return b
    return _nearest_zero(left, right)


def _nearest_zero(a: float, b: float) -> float:
    return min(max(0.0, a), b)
