"""Exact scalar arithmetic: rationals, complex rationals and polynomials in hbar.

Rationals are ``gmpy2.mpq``.  Complex rationals are plain ``(re, im)`` tuples so
the hot loops of the bracket code can inline them without method dispatch.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping

import gmpy2

Q = gmpy2.mpq
ZERO = Q(0)
ONE = Q(1)
CZERO = (ZERO, ZERO)
CONE = (ONE, ZERO)
CI = (ZERO, ONE)


def to_q(x) -> gmpy2.mpq:
    """Convert ints, Fractions, mpq, decimal strings or floats to an exact mpq.

    Floats are converted exactly (binary expansion), so prefer strings such as
    ``"0.001"`` or ``"1/1000"`` when a decimal value is meant.
    """
    if isinstance(x, type(ONE)):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a rational")
    if isinstance(x, int):
        return Q(x)
    if isinstance(x, Fraction):
        return Q(x.numerator, x.denominator)
    if isinstance(x, str):
        return Q(Fraction(x.strip()))
    if isinstance(x, float):
        return Q(Fraction(x))
    if hasattr(x, "p") and hasattr(x, "q"):  # sympy Rational
        return Q(int(x.p), int(x.q))
    raise TypeError(f"cannot convert {x!r} to a rational")


def to_c(x) -> tuple:
    """Convert a real or complex exact value to an ``(re, im)`` pair."""
    if isinstance(x, tuple):
        return (to_q(x[0]), to_q(x[1]))
    if isinstance(x, complex):
        return (to_q(x.real), to_q(x.imag))
    return (to_q(x), ZERO)


def cmul(a, b):
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


def cadd(a, b):
    return (a[0] + b[0], a[1] + b[1])


def cscale(a, r):
    return (a[0] * r, a[1] * r)


def cconj(a):
    return (a[0], -a[1])


def cabs(a) -> float:
    return abs(complex(float(a[0]), float(a[1])))


def cfloat(a) -> complex:
    return complex(float(a[0]), float(a[1]))


def qstr(q) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def cstr(a) -> str:
    re, im = a
    if im == 0:
        return qstr(re)
    if re == 0:
        return f"{qstr(im)}i"
    sign = "+" if im > 0 else "-"
    return f"({qstr(re)}{sign}{qstr(abs(im))}i)"


class HbarPoly:
    """Real polynomial in hbar with exact rational coefficients.

    Used for energies and frequency shifts, which carry hbar corrections in
    quantum mode.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs: Mapping[int, object] | None = None):
        c = {}
        for h, v in (coeffs or {}).items():
            v = to_q(v)
            if v != 0:
                c[int(h)] = v
        self._c = c

    @classmethod
    def const(cls, v) -> "HbarPoly":
        return cls({0: v})

    @property
    def coeffs(self) -> dict:
        return dict(self._c)

    def __getitem__(self, h: int):
        return self._c.get(h, ZERO)

    def is_zero(self) -> bool:
        return not self._c

    def degree(self) -> int:
        return max(self._c, default=-1)

    def __add__(self, other):
        if not isinstance(other, HbarPoly):
            other = HbarPoly.const(other)
        c = dict(self._c)
        for h, v in other._c.items():
            c[h] = c.get(h, ZERO) + v
        return HbarPoly(c)

    __radd__ = __add__

    def __neg__(self):
        return HbarPoly({h: -v for h, v in self._c.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, HbarPoly) else HbarPoly.const(-to_q(other)))

    def __mul__(self, other):
        if not isinstance(other, HbarPoly):
            r = to_q(other)
            return HbarPoly({h: v * r for h, v in self._c.items()})
        c: dict = {}
        for h1, v1 in self._c.items():
            for h2, v2 in other._c.items():
                c[h1 + h2] = c.get(h1 + h2, ZERO) + v1 * v2
        return HbarPoly(c)

    __rmul__ = __mul__

    def shift(self, e: int) -> "HbarPoly":
        """Multiply by hbar**e."""
        return HbarPoly({h + e: v for h, v in self._c.items()})

    def classical(self):
        return self[0]

    def evaluate(self, hbar) -> gmpy2.mpq:
        hb = to_q(hbar)
        return sum((v * hb**h for h, v in self._c.items()), ZERO)

    def __call__(self, hbar) -> float:
        return float(self.evaluate(hbar))

    def __eq__(self, other):
        if not isinstance(other, HbarPoly):
            other = HbarPoly.const(other)
        return self._c == other._c

    def __hash__(self):
        return hash(tuple(sorted(self._c.items())))

    def to_triples(self) -> list:
        return [[h, int(v.numerator), int(v.denominator)] for h, v in sorted(self._c.items())]

    @classmethod
    def from_triples(cls, rows: Iterable) -> "HbarPoly":
        return cls({int(h): Q(int(a), int(b)) for h, a, b in rows})

    def __repr__(self):
        if not self._c:
            return "0"
        parts = []
        for h, v in sorted(self._c.items()):
            parts.append(qstr(v) + ("" if h == 0 else f"*hbar^{h}"))
        return " + ".join(parts)
