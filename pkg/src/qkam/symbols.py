"""Exact algebra of polynomial phase-space symbols.

A symbol is a finite sum of monomials ``hbar**h * z**m * zbar**n`` in the complex
frame ``z_j = omega_j x_j + i xi_j`` attached to a fixed base frequency vector.
Coefficients are exact complex rationals.  In this frame

* the harmonic flow acts as ``z_j -> z_j exp(-i phi_j)``, so a monomial carries the
  angular index ``k = n - m``;
* ``p0 = (|xi|^2 + |omega x|^2) / 2 = sum_j |z_j|^2 / 2`` and the actions are
  ``I_j = |z_j|^2 / (2 omega_j)``;
* the Poisson bracket (``df/dt = {f, p0}``) reads
  ``{f, g} = sum_j 2 i omega_j (f_{zbar_j} g_{z_j} - f_{z_j} g_{zbar_j})``,
  hence ``{sum_j nu_j I_j, mono} = -i <nu, k> mono`` for any frequency vector ``nu``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence


from .scalars import (
    CZERO,
    ONE,
    Q,
    ZERO,
    HbarPoly,
    cabs,
    cfloat,
    cmul,
    cstr,
    to_c,
    to_q,
)

DEFAULT_DEGREE_CAP = 10


class FrameMismatch(ValueError):
    """Raised when two symbols built on different base frequencies are combined."""


class ZeroDivisor(ZeroDivisionError):
    """An angular index ``k`` with ``<omega, k> = 0`` reached the homological solver."""

    def __init__(self, k):
        super().__init__(f"resonant angular index k={tuple(k)}: <omega, k> = 0")
        self.k = tuple(k)


class NonNormalInput(ValueError):
    """A symbol with nonzero angular index was passed where a normal form is required."""


class NonTerminatingSeries(RuntimeError):
    """The Lie series did not terminate within the configured number of orders."""


@dataclass(frozen=True)
class SmallDivisorWarning:
    """Recorded when ``|<omega, k>| < gamma |k|^-tau`` for an index met by the solver."""

    k: tuple
    divisor: float
    threshold: float


@dataclass(frozen=True)
class Frame:
    """Base frequencies defining the complexification ``z_j = omega_j x_j + i xi_j``."""

    omega: tuple

    def __post_init__(self):
        om = tuple(to_q(w) for w in self.omega)
        if not om:
            raise ValueError("frame needs at least one frequency")
        if any(w <= 0 for w in om):
            raise ValueError("frame frequencies must be positive")
        object.__setattr__(self, "omega", om)

    @property
    def l(self) -> int:
        return len(self.omega)

    @classmethod
    def of(cls, omega) -> "Frame":
        if isinstance(omega, Frame):
            return omega
        if hasattr(omega, "frame"):
            return omega.frame
        if hasattr(omega, "omega"):
            return cls(tuple(omega.omega))
        if isinstance(omega, (int, float, str)) or hasattr(omega, "numerator"):
            return cls((omega,))
        return cls(tuple(omega))

    def floats(self) -> tuple:
        return tuple(float(w) for w in self.omega)


class Monomial(NamedTuple):
    m: tuple  # exponent of z
    n: tuple  # exponent of zbar

    @property
    def degree(self) -> int:
        return sum(self.m) + sum(self.n)

    @property
    def angular_index(self) -> tuple:
        return angular_index(self)


def angular_index(mono: Monomial) -> tuple:
    """Angular index ``k = n - m``: the monomial picks up ``exp(i<k, phi>)`` under the flow."""
    return tuple(b - a for a, b in zip(mono.m, mono.n))


@dataclass(frozen=True)
class TruncationLedger:
    """Terms dropped by the degree cap: how many and the largest magnitude."""

    dropped: int = 0
    max_dropped: float = 0.0

    def merge(self, *others: "TruncationLedger") -> "TruncationLedger":
        d, mx = self.dropped, self.max_dropped
        for o in others:
            if o is None:
                continue
            d += o.dropped
            mx = max(mx, o.max_dropped)
        return TruncationLedger(d, mx)

    @property
    def flag(self) -> bool:
        return self.dropped > 0


_EMPTY_LEDGER = TruncationLedger()


def _split(key: tuple, l: int):
    return key[:l], key[l : 2 * l], key[2 * l]


class _Acc:
    """Accumulator for exact complex coefficients with degree-cap bookkeeping."""

    __slots__ = ("d", "cap", "l", "dropped", "maxd")

    def __init__(self, l: int, cap: int):
        self.d: dict = {}
        self.cap = cap
        self.l = l
        self.dropped: dict = {}
        self.maxd = 0.0

    def add(self, key, re, im):
        deg = sum(key[: 2 * self.l])
        if deg > self.cap:
            old = self.dropped.get(key)
            self.dropped[key] = (re, im) if old is None else (old[0] + re, old[1] + im)
            return
        old = self.d.get(key)
        if old is None:
            self.d[key] = (re, im)
        else:
            self.d[key] = (old[0] + re, old[1] + im)

    def ledger(self, *extra) -> TruncationLedger:
        n = 0
        mx = 0.0
        for v in self.dropped.values():
            if v[0] != 0 or v[1] != 0:
                n += 1
                mx = max(mx, cabs(v))
        return TruncationLedger(n, mx).merge(*extra)

    def terms(self) -> dict:
        return {k: v for k, v in self.d.items() if v[0] != 0 or v[1] != 0}


class PolySymbol:
    """Immutable polynomial symbol with exact complex-rational, hbar-graded coefficients.

    Terms are stored as ``{(m_1..m_l, n_1..n_l, h): (re, im)}``.
    """

    __slots__ = ("frame", "degree_cap", "_terms", "truncation")

    def __init__(
        self,
        frame,
        terms: Mapping | None = None,
        degree_cap: int = DEFAULT_DEGREE_CAP,
        truncation: TruncationLedger | None = None,
    ):
        frame = Frame.of(frame)
        l = frame.l
        acc = _Acc(l, degree_cap)
        for key, val in (terms or {}).items():
            key = tuple(int(a) for a in key)
            if len(key) == 2 * l:
                key = key + (0,)
            if len(key) != 2 * l + 1 or min(key) < 0:
                raise ValueError(f"bad monomial key {key} for l={l}")
            c = to_c(val)
            acc.add(key, c[0], c[1])
        self.frame = frame
        self.degree_cap = int(degree_cap)
        self._terms = acc.terms()
        self.truncation = acc.ledger(truncation)

    @classmethod
    def _make(cls, frame, cap, terms, ledger=None) -> "PolySymbol":
        obj = object.__new__(cls)
        obj.frame = frame
        obj.degree_cap = cap
        obj._terms = terms
        obj.truncation = ledger if ledger is not None else _EMPTY_LEDGER
        return obj

    # ------------------------------------------------------------------ builders
    @classmethod
    def zero(cls, frame, degree_cap: int = DEFAULT_DEGREE_CAP) -> "PolySymbol":
        return cls._make(Frame.of(frame), degree_cap, {})

    @classmethod
    def constant(cls, frame, value, degree_cap: int = DEFAULT_DEGREE_CAP, hbar_power: int = 0):
        frame = Frame.of(frame)
        return cls(frame, {(0,) * (2 * frame.l) + (hbar_power,): value}, degree_cap)

    @classmethod
    def from_hbar_poly(cls, frame, poly: HbarPoly, degree_cap: int = DEFAULT_DEGREE_CAP):
        frame = Frame.of(frame)
        z = (0,) * (2 * frame.l)
        return cls(frame, {z + (h,): v for h, v in poly.coeffs.items()}, degree_cap)

    @classmethod
    def monomial(cls, frame, m, n, coeff=1, h: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        frame = Frame.of(frame)
        return cls(frame, {tuple(m) + tuple(n) + (h,): coeff}, degree_cap)

    @classmethod
    def z(cls, frame, j: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        frame = Frame.of(frame)
        e = _unit(frame.l, j)
        return cls.monomial(frame, e, (0,) * frame.l, 1, 0, degree_cap)

    @classmethod
    def zbar(cls, frame, j: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        frame = Frame.of(frame)
        e = _unit(frame.l, j)
        return cls.monomial(frame, (0,) * frame.l, e, 1, 0, degree_cap)

    @classmethod
    def x(cls, frame, j: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        """Position ``x_j = (z_j + zbar_j) / (2 omega_j)``."""
        frame = Frame.of(frame)
        c = ONE / (2 * frame.omega[j])
        e, o = _unit(frame.l, j), (0,) * frame.l
        return cls(frame, {e + o + (0,): c, o + e + (0,): c}, degree_cap)

    @classmethod
    def xi(cls, frame, j: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        """Momentum ``xi_j = (z_j - zbar_j) / (2i)``."""
        frame = Frame.of(frame)
        e, o = _unit(frame.l, j), (0,) * frame.l
        half = Q(1, 2)
        return cls(frame, {e + o + (0,): (ZERO, -half), o + e + (0,): (ZERO, half)}, degree_cap)

    @classmethod
    def action(cls, frame, j: int = 0, degree_cap: int = DEFAULT_DEGREE_CAP):
        """Action ``I_j = |z_j|^2 / (2 omega_j)``."""
        frame = Frame.of(frame)
        e = _unit(frame.l, j)
        return cls.monomial(frame, e, e, ONE / (2 * frame.omega[j]), 0, degree_cap)

    @classmethod
    def harmonic(cls, frame, nu=None, degree_cap: int = DEFAULT_DEGREE_CAP):
        """``sum_j nu_j I_j``; with ``nu`` omitted this is ``p0`` of the base frame."""
        frame = Frame.of(frame)
        nu = frame.omega if nu is None else tuple(to_q(v) for v in nu)
        terms = {}
        for j in range(frame.l):
            e = _unit(frame.l, j)
            terms[e + e + (0,)] = nu[j] / (2 * frame.omega[j])
        return cls(frame, terms, degree_cap)

    @classmethod
    def hbar(cls, frame, degree_cap: int = DEFAULT_DEGREE_CAP):
        return cls.constant(frame, 1, degree_cap, hbar_power=1)

    @classmethod
    def from_xxi(cls, frame, coeffs: Mapping, degree_cap: int = DEFAULT_DEGREE_CAP):
        """Build from ``{(a_1..a_l, b_1..b_l[, h]): c}`` meaning ``c hbar^h x^a xi^b``."""
        frame = Frame.of(frame)
        l = frame.l
        xs = [cls.x(frame, j, 10**9) for j in range(l)]
        ps = [cls.xi(frame, j, 10**9) for j in range(l)]
        xpow = [[cls.constant(frame, 1, 10**9)] for _ in range(l)]
        ppow = [[cls.constant(frame, 1, 10**9)] for _ in range(l)]
        total = cls.zero(frame, 10**9)
        for key, c in coeffs.items():
            key = tuple(key)
            a, b = key[:l], key[l : 2 * l]
            h = key[2 * l] if len(key) > 2 * l else 0
            term = cls.constant(frame, c, 10**9, hbar_power=h)
            for j in range(l):
                while len(xpow[j]) <= a[j]:
                    xpow[j].append(xpow[j][-1] * xs[j])
                while len(ppow[j]) <= b[j]:
                    ppow[j].append(ppow[j][-1] * ps[j])
                term = term * xpow[j][a[j]] * ppow[j][b[j]]
            total = total + term
        return total.with_cap(degree_cap)

    @classmethod
    def from_expression(cls, expr: str, frame, degree_cap: int = DEFAULT_DEGREE_CAP):
        """Parse a polynomial in ``x``, ``xi`` (or ``x1, xi1, ...``), ``z``, ``zb``, ``I`` and ``hbar``.

        Numbers are read exactly (``0.1`` means ``1/10``).
        """
        import sympy as sp

        frame = Frame.of(frame)
        l = frame.l
        names = {}
        builders = {}
        for j in range(l):
            suffixes = [str(j + 1)] + ([""] if l == 1 else [])
            for s in suffixes:
                for base, ctor in (("x", cls.x), ("xi", cls.xi), ("z", cls.z), ("zb", cls.zbar), ("I", cls.action)):
                    nm = base + s
                    names[nm] = sp.Symbol(nm)
                    builders[nm] = ctor(frame, j, 10**9)
        names["hbar"] = sp.Symbol("hbar")
        builders["hbar"] = cls.hbar(frame, 10**9)
        parsed = sp.sympify(expr, locals=names, rational=True)
        syms = sorted(parsed.free_symbols, key=lambda s: s.name)
        unknown = [s.name for s in syms if s.name not in builders]
        if unknown:
            raise ValueError(f"unknown variables in symbol expression: {unknown}")
        if not syms:
            val = sp.nsimplify(parsed)
            re, im = sp.re(val), sp.im(val)
            return cls.constant(frame, (to_q(sp.Rational(re)), to_q(sp.Rational(im))), degree_cap)
        poly = sp.Poly(sp.expand(parsed), *syms)
        total = cls.zero(frame, 10**9)
        for exps, c in poly.terms():
            c = sp.nsimplify(c)
            term = cls.constant(frame, (to_q(sp.Rational(sp.re(c))), to_q(sp.Rational(sp.im(c)))), 10**9)
            for s, e in zip(syms, exps):
                for _ in range(e):
                    term = term * builders[s.name]
            total = total + term
        return total.with_cap(degree_cap)

    # ------------------------------------------------------------------ access
    @property
    def l(self) -> int:
        return self.frame.l

    @property
    def terms(self) -> Mapping:
        return MappingProxyType(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self):
        return bool(self._terms)

    def monomials(self) -> dict:
        """``{Monomial: HbarPoly-like dict {h: (re, im)}}``."""
        out: dict = {}
        l = self.l
        for key, v in self._terms.items():
            m, n, h = _split(key, l)
            out.setdefault(Monomial(m, n), {})[h] = v
        return out

    def coefficient(self, m, n, h: int = 0):
        return self._terms.get(tuple(m) + tuple(n) + (h,), CZERO)

    def degree(self) -> int:
        l2 = 2 * self.l
        return max((sum(k[:l2]) for k in self._terms), default=-1)

    def order(self) -> int:
        """Vanishing order at ``z = 0`` (smallest total degree present)."""
        l2 = 2 * self.l
        return min((sum(k[:l2]) for k in self._terms), default=10**9)

    def weighted_order(self) -> int:
        """Vanishing order with hbar counted as degree 2 (hbar ~ |z|^2 semiclassically)."""
        l2 = 2 * self.l
        return min((sum(k[:l2]) + 2 * k[-1] for k in self._terms), default=10**9)

    def hbar_degree(self) -> int:
        return max((k[-1] for k in self._terms), default=-1)

    def min_hbar(self) -> int:
        return min((k[-1] for k in self._terms), default=10**9)

    def angular_indices(self) -> set:
        l = self.l
        return {tuple(key[l + j] - key[j] for j in range(l)) for key in self._terms}

    def hbar_part(self, e: int) -> "PolySymbol":
        """Coefficient of ``hbar**e`` (returned with hbar power 0)."""
        t = {k[:-1] + (0,): v for k, v in self._terms.items() if k[-1] == e}
        return PolySymbol._make(self.frame, self.degree_cap, t)

    def classical(self) -> "PolySymbol":
        return self.hbar_part(0)

    def eval_hbar(self, hbar) -> "PolySymbol":
        """Substitute an exact rational value for hbar."""
        hb = to_q(hbar)
        acc = _Acc(self.l, self.degree_cap)
        for k, (re, im) in self._terms.items():
            f = hb ** k[-1]
            acc.add(k[:-1] + (0,), re * f, im * f)
        return PolySymbol._make(self.frame, self.degree_cap, acc.terms(), self.truncation)

    def with_cap(self, degree_cap: int) -> "PolySymbol":
        return PolySymbol(self.frame, self._terms, degree_cap, self.truncation)

    def mul_hbar(self, e: int = 1) -> "PolySymbol":
        t = {k[:-1] + (k[-1] + e,): v for k, v in self._terms.items()}
        return PolySymbol._make(self.frame, self.degree_cap, t, self.truncation)

    def drop_truncation(self) -> "PolySymbol":
        return PolySymbol._make(self.frame, self.degree_cap, self._terms)

    # ------------------------------------------------------------------ algebra
    def _check(self, other: "PolySymbol"):
        if self.frame != other.frame:
            raise FrameMismatch(f"frames differ: {self.frame.omega} vs {other.frame.omega}")

    def __add__(self, other):
        if not isinstance(other, PolySymbol):
            other = PolySymbol.constant(self.frame, other, self.degree_cap)
        self._check(other)
        cap = min(self.degree_cap, other.degree_cap)
        acc = _Acc(self.l, cap)
        for k, v in self._terms.items():
            acc.add(k, *v)
        for k, v in other._terms.items():
            acc.add(k, *v)
        return PolySymbol._make(self.frame, cap, acc.terms(), acc.ledger(self.truncation, other.truncation))

    __radd__ = __add__

    def __neg__(self):
        return PolySymbol._make(
            self.frame, self.degree_cap, {k: (-v[0], -v[1]) for k, v in self._terms.items()}, self.truncation
        )

    def __sub__(self, other):
        if not isinstance(other, PolySymbol):
            other = PolySymbol.constant(self.frame, other, self.degree_cap)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> "PolySymbol":
        c = to_c(c)
        if c == CZERO:
            return PolySymbol._make(self.frame, self.degree_cap, {}, self.truncation)
        t = {k: cmul(v, c) for k, v in self._terms.items()}
        return PolySymbol._make(self.frame, self.degree_cap, t, self.truncation)

    def __mul__(self, other):
        if not isinstance(other, PolySymbol):
            return self.scale(other)
        self._check(other)
        cap = min(self.degree_cap, other.degree_cap)
        acc = _Acc(self.l, cap)
        for k1, (a, b) in self._terms.items():
            for k2, (c, d) in other._terms.items():
                acc.add(tuple(x + y for x, y in zip(k1, k2)), a * c - b * d, a * d + b * c)
        return PolySymbol._make(self.frame, cap, acc.terms(), acc.ledger(self.truncation, other.truncation))

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, n: int):
        out = PolySymbol.constant(self.frame, 1, self.degree_cap)
        for _ in range(n):
            out = out * self
        return out

    def conj(self) -> "PolySymbol":
        l = self.l
        t = {}
        for k, (re, im) in self._terms.items():
            m, n, h = _split(k, l)
            t[n + m + (h,)] = (re, -im)
        return PolySymbol._make(self.frame, self.degree_cap, t, self.truncation)

    def is_real(self) -> bool:
        """Real-valued for real hbar: ``c(n, m) == conj(c(m, n))`` for every term."""
        return self.conj()._terms == self._terms

    def __eq__(self, other):
        if not isinstance(other, PolySymbol):
            return NotImplemented
        return self.frame == other.frame and self._terms == other._terms

    __hash__ = None

    # ------------------------------------------------------------------ numerics
    def evaluate_z(self, z: Sequence[complex], hbar: float = 0.0) -> complex:
        l = self.l
        zc = [complex(v) for v in z]
        zb = [v.conjugate() for v in zc]
        total = 0j
        for k, c in self._terms.items():
            m, n, h = _split(k, l)
            val = cfloat(c) * (hbar**h if h else 1.0)
            for j in range(l):
                val *= zc[j] ** m[j] * zb[j] ** n[j]
            total += val
        return total

    def evaluate(self, x: Sequence[float], xi: Sequence[float], hbar: float = 0.0) -> complex:
        om = self.frame.floats()
        z = [om[j] * x[j] + 1j * xi[j] for j in range(self.l)]
        return self.evaluate_z(z, hbar)

    def l1_norm(self, hbar: float | None = None) -> float:
        """Sum of coefficient magnitudes; hbar powers are evaluated when ``hbar`` is given."""
        if hbar is None:
            return math.fsum(cabs(v) for v in self._terms.values())
        acc: dict = {}
        for k, v in self._terms.items():
            acc[k[:-1]] = acc.get(k[:-1], 0j) + cfloat(v) * hbar ** k[-1]
        return math.fsum(abs(v) for v in acc.values())

    def max_coefficient(self) -> float:
        return max((cabs(v) for v in self._terms.values()), default=0.0)

    # ------------------------------------------------------------------ serialization
    def to_records(self) -> list:
        """Plain records ``{m, n, coefficient, [coefficient_imag]}``.

        ``coefficient`` lists ``[hbar_exponent, numerator, denominator]`` triples of the
        real part; ``coefficient_imag`` (present only when nonzero) the imaginary part.
        """
        rows = []
        for mono, hc in sorted(self.monomials().items()):
            re_rows = [[h, int(v[0].numerator), int(v[0].denominator)] for h, v in sorted(hc.items()) if v[0] != 0]
            im_rows = [[h, int(v[1].numerator), int(v[1].denominator)] for h, v in sorted(hc.items()) if v[1] != 0]
            rec = {"m": list(mono.m), "n": list(mono.n), "coefficient": re_rows}
            if im_rows:
                rec["coefficient_imag"] = im_rows
            rows.append(rec)
        return rows

    @classmethod
    def from_records(cls, records: Iterable[Mapping], frame, degree_cap: int = DEFAULT_DEGREE_CAP):
        frame = Frame.of(frame)
        terms: dict = {}
        for rec in records:
            m, n = tuple(rec["m"]), tuple(rec["n"])
            if len(m) != frame.l or len(n) != frame.l:
                raise ValueError(f"record {rec} does not match l={frame.l}")
            for h, a, b in rec.get("coefficient", []):
                k = m + n + (int(h),)
                re, im = terms.get(k, CZERO)
                terms[k] = (re + Q(int(a), int(b)), im)
            for h, a, b in rec.get("coefficient_imag", []):
                k = m + n + (int(h),)
                re, im = terms.get(k, CZERO)
                terms[k] = (re, im + Q(int(a), int(b)))
        return cls(frame, terms, degree_cap)

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "omega": [str(w) for w in self.frame.omega],
            "degree_cap": self.degree_cap,
            "terms": self.to_records(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolySymbol":
        frame = Frame(tuple(to_q(w) for w in d["omega"]))
        if "l" in d and int(d["l"]) != frame.l:
            raise ValueError("l does not match the number of frequencies")
        return cls.from_records(d["terms"], frame, int(d.get("degree_cap", DEFAULT_DEGREE_CAP)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolySymbol":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        if not self._terms:
            return "PolySymbol(0)"
        l = self.l
        parts = []
        for k in sorted(self._terms):
            m, n, h = _split(k, l)
            fac = []
            for j in range(l):
                sfx = str(j + 1) if l > 1 else ""
                if m[j]:
                    fac.append(f"z{sfx}" + (f"^{m[j]}" if m[j] > 1 else ""))
                if n[j]:
                    fac.append(f"zb{sfx}" + (f"^{n[j]}" if n[j] > 1 else ""))
            if h:
                fac.append("hbar" + (f"^{h}" if h > 1 else ""))
            parts.append(cstr(self._terms[k]) + ("*" + "*".join(fac) if fac else ""))
        return "PolySymbol(" + " + ".join(parts) + ")"


def _unit(l: int, j: int) -> tuple:
    return tuple(1 if i == j else 0 for i in range(l))


# ---------------------------------------------------------------------- angular structure
def angular_project(f: PolySymbol, k) -> PolySymbol:
    """Sub-sum of the terms of ``f`` with angular index ``k``."""
    k = tuple(k)
    l = f.l
    t = {
        key: v
        for key, v in f.items()
        if all(key[l + j] - key[j] == k[j] for j in range(l))
    }
    return PolySymbol._make(f.frame, f.degree_cap, t)


def angular_decomposition(f: PolySymbol) -> dict:
    """``{k: f_k}`` over the occurring angular indices; the parts sum to ``f``."""
    l = f.l
    parts: dict = {}
    for key, v in f.items():
        k = tuple(key[l + j] - key[j] for j in range(l))
        parts.setdefault(k, {})[key] = v
    return {k: PolySymbol._make(f.frame, f.degree_cap, t) for k, t in parts.items()}


# ---------------------------------------------------------------------- brackets
@lru_cache(maxsize=None)
def _lambda_patterns(l: int, order: int):
    """Derivative patterns of the ``order``-th power of the Poisson bidifferential.

    Each entry is ``(a, b, multinomial, signs)`` with ``a_j`` the number of
    ``(dbar_j f)(d_j g)`` factors and ``b_j`` the number of ``(d_j f)(dbar_j g)`` ones.
    """
    out = []
    for parts in itertools.product(range(order + 1), repeat=2 * l):
        if sum(parts) != order:
            continue
        a, b = parts[:l], parts[l:]
        mult = math.factorial(order)
        for v in parts:
            mult //= math.factorial(v)
        out.append((a, b, mult, (-1) ** sum(b)))
    return tuple(out)


def _falling(n: int, k: int) -> int:
    r = 1
    for i in range(k):
        r *= n - i
    return r


_I_POW = [(1, 0), (0, 1), (-1, 0), (0, -1)]


def _bidifferential(f: PolySymbol, g: PolySymbol, order: int, weight, acc: _Acc, hshift: int = 0):
    """Accumulate ``weight * hbar**hshift * (f Lambda^order g)`` into ``acc``."""
    l = f.l
    om2 = [2 * w for w in f.frame.omega]
    pats = _lambda_patterns(l, order)
    # per-pattern constant (2 i omega)^{a+b} * sign * multinomial * weight
    consts = []
    for a, b, mult, sign in pats:
        c = Q(mult * sign) * weight
        ipow = 0
        for j in range(l):
            c *= om2[j] ** (a[j] + b[j])
            ipow += a[j] + b[j]
        re, im = _I_POW[ipow % 4]
        consts.append((a, b, (c * re, c * im)))
    fsplit = [(_split(k, l), v) for k, v in f.items()]
    gsplit = [(_split(k, l), v) for k, v in g.items()]
    for (m1, n1, h1), (fr, fi) in fsplit:
        d1 = sum(m1) + sum(n1)
        if d1 < order:
            continue
        for (m2, n2, h2), (gr, gi) in gsplit:
            if sum(m2) + sum(n2) < order:
                continue
            pr = fr * gr - fi * gi
            pi = fr * gi + fi * gr
            for a, b, (cr, ci) in consts:
                coef = 1
                for j in range(l):
                    aj, bj = a[j], b[j]
                    if aj > n1[j] or bj > m1[j] or aj > m2[j] or bj > n2[j]:
                        coef = 0
                        break
                    coef *= _falling(n1[j], aj) * _falling(m1[j], bj) * _falling(m2[j], aj) * _falling(n2[j], bj)
                if not coef:
                    continue
                key = tuple(m1[j] + m2[j] - a[j] - b[j] for j in range(l)) + tuple(
                    n1[j] + n2[j] - a[j] - b[j] for j in range(l)
                ) + (h1 + h2 + hshift,)
                vr = pr * cr - pi * ci
                vi = pr * ci + pi * cr
                acc.add(key, vr * coef, vi * coef)


def poisson_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """Classical bracket ``{f, g} = sum_j d_{x_j} f d_{xi_j} g - d_{xi_j} f d_{x_j} g``."""
    f._check(g)
    cap = min(f.degree_cap, g.degree_cap)
    acc = _Acc(f.l, cap)
    _bidifferential(f, g, 1, ONE, acc)
    return PolySymbol._make(f.frame, cap, acc.terms(), acc.ledger(f.truncation, g.truncation))


def moyal_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """Moyal bracket ``(f#g - g#f) / (i hbar) = (2/hbar) f sin(hbar Lambda / 2) g``.

    Normalized so that the hbar-free part is the Poisson bracket; the series stops
    once the derivative order exceeds the smaller degree.
    """
    f._check(g)
    cap = min(f.degree_cap, g.degree_cap)
    acc = _Acc(f.l, cap)
    top = min(f.degree(), g.degree())
    j = 0
    while 2 * j + 1 <= top:
        weight = Q((-1) ** j, 4**j * math.factorial(2 * j + 1))
        _bidifferential(f, g, 2 * j + 1, weight, acc, hshift=2 * j)
        j += 1
    return PolySymbol._make(f.frame, cap, acc.terms(), acc.ledger(f.truncation, g.truncation))


def moyal_product(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """Weyl composition ``f # g = f exp(i hbar Lambda / 2) g`` (finite on polynomials)."""
    f._check(g)
    cap = min(f.degree_cap, g.degree_cap)
    acc = _Acc(f.l, cap)
    for k1, v1 in f.items():
        for k2, v2 in g.items():
            p = cmul(v1, v2)
            acc.add(tuple(a + b for a, b in zip(k1, k2)), *p)
    top = min(f.degree(), g.degree())
    for n in range(1, top + 1):
        # (i/2)^n / n!
        re, im = _I_POW[n % 4]
        w = Q(1, 2**n * math.factorial(n))
        tmp = _Acc(f.l, cap)
        _bidifferential(f, g, n, w, tmp, hshift=n)
        for k, (a, b) in tmp.d.items():
            acc.add(k, a * re - b * im, a * im + b * re)
        for k, (a, b) in tmp.dropped.items():
            acc.dropped[k] = (a * re - b * im, a * im + b * re)
    return PolySymbol._make(f.frame, cap, acc.terms(), acc.ledger(f.truncation, g.truncation))


def bracket(f: PolySymbol, g: PolySymbol, mode: str = "classical") -> PolySymbol:
    if mode == "classical":
        return poisson_bracket(f, g)
    if mode == "quantum":
        return moyal_bracket(f, g)
    raise ValueError(f"unknown bracket mode {mode!r}")


# ---------------------------------------------------------------------- homological equation
@dataclass(frozen=True)
class HomologicalSolution:
    w: PolySymbol
    N: PolySymbol
    min_divisor: float
    min_divisor_k: tuple | None
    warnings: tuple = ()


def _freq_vector(omega_eff, frame: Frame):
    if omega_eff is None:
        return frame.omega, None, None
    gamma = getattr(omega_eff, "gamma", None)
    tau = getattr(omega_eff, "tau", None)
    om = getattr(omega_eff, "omega", omega_eff)
    if isinstance(om, Frame):
        om = om.omega
    return tuple(to_q(v) for v in om), gamma, tau


def solve_homological(g: PolySymbol, omega_eff=None, gamma=None, tau=None) -> HomologicalSolution:
    """Solve ``{sum_j nu_j I_j, w} + N = g`` with ``N`` the angular-zero part of ``g``.

    ``omega_eff`` holds the frequencies ``nu`` (a sequence, a Frame or an object with
    ``omega``/``gamma``/``tau`` attributes); it defaults to the base frame.  Each
    ``k != 0`` component is divided by ``-i <nu, k>``.  Divisors under
    ``gamma |k|^-tau`` are recorded as warnings.
    """
    nu, g_gamma, g_tau = _freq_vector(omega_eff, g.frame)
    gamma = g_gamma if gamma is None else gamma
    tau = g_tau if tau is None else tau
    l = g.l
    w_terms: dict = {}
    n_terms: dict = {}
    min_div = math.inf
    min_k = None
    warns = []
    divisors: dict = {}
    for key, (re, im) in g.items():
        k = tuple(key[l + j] - key[j] for j in range(l))
        if not any(k):
            n_terms[key] = (re, im)
            continue
        d = divisors.get(k)
        if d is None:
            d = sum((nu[j] * k[j] for j in range(l)), ZERO)
            if d == 0:
                raise ZeroDivisor(k)
            divisors[k] = d
            fd = abs(float(d))
            if fd < min_div:
                min_div, min_k = fd, k
            if gamma is not None and tau is not None:
                thr = float(gamma) * sum(abs(c) for c in k) ** (-float(tau))
                if fd < thr:
                    warns.append(SmallDivisorWarning(k, fd, thr))
        # w_k = g_k / (-i d) = i g_k / d
        w_terms[key] = (-im / d, re / d)
    w = PolySymbol._make(g.frame, g.degree_cap, w_terms)
    N = PolySymbol._make(g.frame, g.degree_cap, n_terms)
    return HomologicalSolution(w, N, min_div, min_k, tuple(warns))


# ---------------------------------------------------------------------- Lie transforms
def lie_transform(
    H: PolySymbol,
    w: PolySymbol,
    t=1,
    mode: str = "classical",
    max_order: int = 64,
    strict: bool = True,
) -> PolySymbol:
    """``sum_r t^r g_r`` with ``g_0 = H`` and ``g_r = bracket(w, g_{r-1}) / r``.

    The series ends when a term vanishes (degree growth past the cap does this for
    generators of degree >= 3).  Purely quadratic generators never terminate; then
    ``strict=False`` truncates after ``max_order`` orders, otherwise
    :class:`NonTerminatingSeries` is raised.
    """
    if not w.is_zero() and w.order() < 2:
        raise ValueError("generator must vanish to order >= 2 at z = 0")
    t = to_c(t)
    total = H
    g = H
    tp = (ONE, ZERO)
    for r in range(1, max_order + 1):
        g = bracket(w, g, mode).scale(Q(1, r))
        if g.is_zero():
            return total
        tp = cmul(tp, t)
        total = total + g.scale(tp)
    if strict:
        raise NonTerminatingSeries(
            f"Lie series still nonzero after {max_order} orders "
            f"(last term degree {g.degree()}, l1 norm {g.l1_norm():.3e})"
        )
    return total


# ---------------------------------------------------------------------- normal form split
def _rising_poly(r: int) -> list:
    """Coefficients (ascending in n) of (n+1)(n+2)...(n+r)."""
    c = [1]
    for i in range(1, r + 1):
        nxt = [0] * (len(c) + 1)
        for d, v in enumerate(c):
            nxt[d] += v * i
            nxt[d + 1] += v
        c = nxt
    return c


@lru_cache(maxsize=None)
def weyl_power_diagonal(m: int) -> tuple:
    """Diagonal of the Weyl quantization of ``I**m`` for one unit oscillator.

    Returned as ``((i, e, c), ...)`` meaning ``sum c * J**i * hbar**e`` with
    ``J = n * hbar`` the shifted action of level ``n``.  Derived from the inverse heat
    flow to the anti-Wick symbol and the Bargmann moments
    ``<n| T(|z_B|^{2r}) |n> = hbar^r (n+1)...(n+r)``.
    """
    poly_n: dict = {}
    for j in range(m + 1):
        r = m - j
        c = Q(-1, 2) ** j / math.factorial(j) * Q(math.factorial(m) // math.factorial(r)) ** 2
        for d, v in enumerate(_rising_poly(r)):
            if v:
                poly_n[d] = poly_n.get(d, ZERO) + c * v
    # hbar^m n^i = J^i hbar^(m-i)
    return tuple((i, m - i, v) for i, v in sorted(poly_n.items()) if v != 0)


class ActionPolynomial:
    """Polynomial in the level actions ``J_j = alpha_j hbar`` and in ``hbar``.

    Keys are ``(i_1..i_l, e)`` for ``prod J_j^{i_j} * hbar^e``.
    """

    __slots__ = ("l", "coeffs")

    def __init__(self, l: int, coeffs: Mapping):
        self.l = l
        self.coeffs = {k: v for k, v in coeffs.items() if v != 0}

    def evaluate(self, J: Sequence, hbar) -> float:
        total = 0.0
        for k, v in self.coeffs.items():
            term = float(v) * float(hbar) ** k[-1]
            for j in range(self.l):
                term *= float(J[j]) ** k[j]
            total += term
        return total

    def evaluate_exact(self, J: Sequence, hbar):
        hb = to_q(hbar)
        Jq = [to_q(x) for x in J]
        total = ZERO
        for k, v in self.coeffs.items():
            term = v * hb ** k[-1]
            for j in range(self.l):
                term *= Jq[j] ** k[j]
            total += term
        return total

    def at_level(self, alpha: Sequence[int], hbar):
        """Exact diagonal element at multi-index ``alpha``."""
        hb = to_q(hbar)
        return self.evaluate_exact([a * hb for a in alpha], hb)

    def j_degree_part(self, d: int) -> dict:
        return {k: v for k, v in self.coeffs.items() if sum(k[:-1]) == d}

    def min_j_degree(self) -> int:
        return min((sum(k[:-1]) for k in self.coeffs), default=10**9)


def diagonal_polynomial(f: PolySymbol) -> ActionPolynomial:
    """``<psi_alpha, Op^W(f) psi_alpha>`` as an exact polynomial in ``(alpha hbar, hbar)``.

    Only the angular-zero terms of ``f`` contribute; the eigenbasis is that of the
    oscillator with the frame frequencies.
    """
    l = f.l
    om = f.frame.omega
    out: dict = {}
    for key, (re, _im) in f.items():
        m, n, h = _split(key, l)
        if m != n:
            continue
        # |z_j|^{2 m_j} = (2 omega_j)^{m_j} I_j^{m_j}
        pref = re
        factors = []
        for j in range(l):
            pref *= (2 * om[j]) ** m[j]
            factors.append(weyl_power_diagonal(m[j]))
        for combo in itertools.product(*factors):
            c = pref
            e = h
            idx = []
            for (i, ej, v) in combo:
                c *= v
                e += ej
                idx.append(i)
            k = tuple(idx) + (e,)
            out[k] = out.get(k, ZERO) + c
    return ActionPolynomial(l, out)


@dataclass(frozen=True)
class NormalDecomposition:
    """Split of an angular-zero symbol into energy, frequency shift and remainder."""

    energy: HbarPoly
    frequency_shift: tuple
    remainder: PolySymbol
    ordering: str = "symbol"

    def recompose(self) -> PolySymbol:
        frame = self.remainder.frame
        cap = self.remainder.degree_cap
        out = self.remainder + PolySymbol.from_hbar_poly(frame, self.energy, cap)
        for j, s in enumerate(self.frequency_shift):
            for h, v in s.coeffs.items():
                out = out + PolySymbol.action(frame, j, cap).scale(v).mul_hbar(h)
        return out


def decompose_normal(N: PolySymbol, ordering: str = "symbol") -> NormalDecomposition:
    """Split a function of the actions into ``E + <shift, I> + R``.

    ``ordering="symbol"`` reads ``E`` and ``shift`` off the constant and linear action
    terms of the symbol itself.  ``ordering="number"`` expands the quantized diagonal
    in the level actions ``J = alpha hbar`` instead, so that the diagonal of the
    quantized remainder vanishes to second order in ``J`` uniformly in hbar; both
    coincide at hbar = 0.
    """
    l = N.l
    for key, v in N.items():
        if key[:l] != key[l : 2 * l]:
            raise NonNormalInput(f"term with angular index {tuple(key[l + j] - key[j] for j in range(l))}")
        if v[1] != 0:
            raise NonNormalInput("normal part has a non-real coefficient")
    cap = N.degree_cap
    om = N.frame.omega
    if ordering == "symbol":
        energy = {}
        shift = [dict() for _ in range(l)]
        zero = (0,) * l
        for key, (re, _im) in N.items():
            m = key[:l]
            if m == zero:
                energy[key[-1]] = re
            elif sum(m) == 1:
                j = m.index(1)
                shift[j][key[-1]] = re * 2 * om[j]
        E = HbarPoly(energy)
        S = tuple(HbarPoly(s) for s in shift)
    elif ordering == "number":
        G = diagonal_polynomial(N)
        g0 = {}
        g1 = [dict() for _ in range(l)]
        for k, v in G.coeffs.items():
            i = k[:-1]
            if sum(i) == 0:
                g0[k[-1]] = g0.get(k[-1], ZERO) + v
            elif sum(i) == 1:
                j = i.index(1)
                g1[j][k[-1]] = g1[j].get(k[-1], ZERO) + v
        S = tuple(HbarPoly(s) for s in g1)
        E = HbarPoly(g0)
        for s in S:
            E = E - s.shift(1) * Q(1, 2)
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    R = N - PolySymbol.from_hbar_poly(N.frame, E, cap)
    for j, s in enumerate(S):
        for h, v in s.coeffs.items():
            R = R - PolySymbol.action(N.frame, j, cap).scale(v).mul_hbar(h)
    R = PolySymbol._make(R.frame, R.degree_cap, dict(R.items()), N.truncation)
    return NormalDecomposition(E, S, R, ordering)
