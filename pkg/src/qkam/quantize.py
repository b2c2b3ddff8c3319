"""Quantization of polynomial symbols on the oscillator eigenbasis.

Conventions (per mode, frame frequency ``w``):

* Bargmann variable ``z_B = (w x - i xi) / sqrt(2 w)``, so ``|z_B|^2 = I`` and the
  frame coordinate is ``z = sqrt(2 w) conj(z_B)``.
* Anti-Wick (Toeplitz) quantization sends ``z -> sqrt(2 w hbar) a`` and
  ``zbar -> sqrt(2 w hbar) a^dagger`` with every annihilator to the left.
* Weyl quantization is reached through the heat flow
  ``Op^AW(g) = Op^W(exp(hbar Lap / 4) g)`` with ``Lap = sum_j 4 w_j d_{z_j} d_{zbar_j}``
  (the Euclidean Laplacian in the rescaled coordinates ``(w x, xi)``).

Basis states are multi-indices ``alpha`` with ``alpha_j < N``, flattened in row-major
order (mode 0 slowest), which matches ``numpy.kron`` of per-mode matrices.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .scalars import Q, ZERO, cfloat, to_q
from .symbols import Frame, PolySymbol, _Acc, _split


class NonHermitian(ValueError):
    """Matrix passed to the eigensolver is not Hermitian."""


class AmbiguousMatch(RuntimeError):
    """Two predicted levels compete for one eigenvalue within the matching resolution."""

    def __init__(self, conflicts):
        super().__init__(f"{len(conflicts)} ambiguous level assignment(s): {conflicts[:3]}")
        self.conflicts = list(conflicts)


# ---------------------------------------------------------------------- heat flow
def laplacian(f: PolySymbol) -> PolySymbol:
    """``sum_j 4 w_j d_{z_j} d_{zbar_j} f``."""
    l = f.l
    om = f.frame.omega
    acc = _Acc(l, f.degree_cap)
    for key, (re, im) in f.items():
        m, n, h = _split(key, l)
        for j in range(l):
            if m[j] and n[j]:
                c = 4 * om[j] * m[j] * n[j]
                mm = m[:j] + (m[j] - 1,) + m[j + 1 :]
                nn = n[:j] + (n[j] - 1,) + n[j + 1 :]
                acc.add(mm + nn + (h,), re * c, im * c)
    return PolySymbol._make(f.frame, f.degree_cap, acc.terms(), f.truncation)


def heat_flow(f: PolySymbol, t, hbar_power: int = 0) -> PolySymbol:
    """``exp(s Lap) f = sum_j s^j Lap^j f / j!`` with ``s = t * hbar**hbar_power``.

    Exact and finite on polynomials.  ``heat_flow(f, Q(1, 4), 1)`` maps an anti-Wick
    symbol to the Weyl symbol of the same operator; ``Q(-1, 4)`` inverts it.
    """
    t = to_q(t)
    out = f
    term = f
    j = 0
    while True:
        j += 1
        term = laplacian(term).scale(t / j).mul_hbar(hbar_power)
        if term.is_zero():
            return out
        out = out + term


@dataclass(frozen=True)
class TruncatedExpansion:
    expansion: PolySymbol
    discarded: PolySymbol
    order_drop: int  # degree lost by the discarded part
    hbar_gain: int  # extra hbar order of the discarded part
    leading_hbar: int  # smallest hbar exponent present in the discarded part

    @property
    def certified(self) -> bool:
        return self.discarded.is_zero() or self.leading_hbar >= self.hbar_gain


def weyl_from_antiwick_truncated(g: PolySymbol, n_terms: int) -> TruncatedExpansion:
    """Weyl symbol of ``Op^AW(g)`` kept to ``n_terms`` heat-kernel orders.

    The discarded part ``sum_{k >= n} (hbar Lap / 4)^k g / k!`` is explicit on
    polynomials; its hbar order is at least ``min_hbar(g) + n_terms``.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    kept = PolySymbol.zero(g.frame, g.degree_cap)
    dropped = PolySymbol.zero(g.frame, g.degree_cap)
    term = g
    k = 0
    while not term.is_zero():
        if k < n_terms:
            kept = kept + term
        else:
            dropped = dropped + term
        k += 1
        term = laplacian(term).scale(Q(1, 4 * k)).mul_hbar(1)
    base = g.min_hbar() if not g.is_zero() else 0
    lead = dropped.min_hbar() - base if not dropped.is_zero() else n_terms
    return TruncatedExpansion(kept, dropped, 2 * n_terms, n_terms, lead)


# ---------------------------------------------------------------------- matrices
def basis_indices(l: int, N: int) -> list:
    return list(itertools.product(range(N), repeat=l))


@dataclass
class OperatorMatrix:
    """Truncated matrix of an operator on the oscillator eigenbasis.

    ``dense`` is a floating-point array; ``exact`` (exact backend) maps
    ``(row, col)`` to a sympy number for the nonzero entries.
    """

    basis_cutoff: int
    l: int
    hbar: object
    dense: np.ndarray | None = None
    exact: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.basis_cutoff**self.l

    @property
    def matrix(self) -> np.ndarray:
        if self.dense is None:
            a = np.zeros((self.dim, self.dim), dtype=complex)
            for (i, j), v in self.exact.items():
                a[i, j] = complex(v)
            self.dense = a if np.any(a.imag) else a.real.copy()
        return self.dense

    def diagonal(self):
        if self.exact is not None:
            return [self.exact.get((i, i), 0) for i in range(self.dim)]
        return np.diag(self.dense).copy()

    def is_hermitian(self, rtol: float = 1e-14) -> bool:
        if self.exact is not None and self.dense is None:
            import sympy as sp

            for (i, j), v in self.exact.items():
                w = self.exact.get((j, i), 0)
                if sp.simplify(v - sp.conjugate(w)) != 0:
                    return False
            return True
        a = self.dense
        scale = max(float(np.max(np.abs(a))), 1e-300)
        return float(np.max(np.abs(a - a.conj().T))) <= rtol * scale

    def index(self, alpha: Sequence[int]) -> int:
        i = 0
        for a in alpha:
            i = i * self.basis_cutoff + a
        return i

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.basis_cutoff, self.l, self.hbar, self.matrix + other.matrix, None, {})

    def scaled(self, c) -> "OperatorMatrix":
        return OperatorMatrix(self.basis_cutoff, self.l, self.hbar, self.matrix * c, None, dict(self.meta))


def _mode_band_float(m: int, n: int, w: float, hbar: float, N: int) -> np.ndarray:
    """Per-mode matrix of the anti-Wick quantization of ``z^m zbar^n``.

    ``<beta| a^m (a^dagger)^n |alpha>`` with ``beta = alpha + n - m`` equals
    ``s! / sqrt(alpha! beta!)``, ``s = alpha + n``, computed as a product of two short
    square-rooted ranges to stay accurate for large levels.
    """
    out = np.zeros((N, N))
    pref = (2.0 * w * hbar) ** ((m + n) / 2.0)
    for alpha in range(N):
        beta = alpha + n - m
        if beta < 0 or beta >= N:
            continue
        s = alpha + n
        v = math.sqrt(math.prod(range(alpha + 1, s + 1))) * math.sqrt(math.prod(range(beta + 1, s + 1)))
        out[beta, alpha] = pref * v
    return out


def _mode_band_exact(m: int, n: int, w, hbar, N: int) -> dict:
    out = {}
    base = (2 * w * hbar) ** (m + n)
    for alpha in range(N):
        beta = alpha + n - m
        if beta < 0 or beta >= N:
            continue
        s = alpha + n
        r = base * Q(math.prod(range(alpha + 1, s + 1)) * math.prod(range(beta + 1, s + 1)))
        out[(beta, alpha)] = r
    return out


def _sym_sqrt(r):
    import sympy as sp

    num, den = int(r.numerator), int(r.denominator)
    return sp.sqrt(sp.Rational(num, den))


def toeplitz_matrix_elements(f: PolySymbol, hbar, N: int, backend: str = "float") -> OperatorMatrix:
    """Anti-Wick (Toeplitz) matrix of ``f`` on the first ``N`` levels per mode.

    ``backend="exact"`` needs rational ``hbar`` and returns sympy entries (rational
    on the diagonal); ``"float"`` returns a dense numpy array.
    """
    l = f.l
    om = f.frame.omega
    groups: dict = {}
    for key, c in f.items():
        m, n, h = _split(key, l)
        groups.setdefault((m, n), []).append((h, c))
    if backend == "float":
        hb = float(hbar)
        dim = N**l
        total = np.zeros((dim, dim), dtype=complex)
        for (m, n), hc in groups.items():
            coef = sum(cfloat(c) * hb**h for h, c in hc)
            if coef == 0:
                continue
            mat = np.ones((1, 1))
            for j in range(l):
                mat = np.kron(mat, _mode_band_float(m[j], n[j], float(om[j]), hb, N))
            total += coef * mat
        dense = total.real.copy() if not np.any(total.imag) else total
        return OperatorMatrix(N, l, hbar, dense, None, {"route": "toeplitz"})
    if backend == "exact":
        import sympy as sp

        hb = to_q(hbar)
        entries: dict = {}
        for (m, n), hc in groups.items():
            re = sum((c[0] * hb**h for h, c in hc), ZERO)
            im = sum((c[1] * hb**h for h, c in hc), ZERO)
            if re == 0 and im == 0:
                continue
            coef = sp.Rational(int(re.numerator), int(re.denominator)) + sp.I * sp.Rational(
                int(im.numerator), int(im.denominator)
            )
            per_mode = [_mode_band_exact(m[j], n[j], om[j], hb, N) for j in range(l)]
            for combo in itertools.product(*(pm.items() for pm in per_mode)):
                row = col = 0
                rad = Q(1)
                for (b, a), r in combo:
                    row = row * N + b
                    col = col * N + a
                    rad *= r
                v = coef * _sym_sqrt(rad)
                entries[(row, col)] = entries.get((row, col), 0) + v
        entries = {k: v for k, v in entries.items() if v != 0}
        return OperatorMatrix(N, l, hbar, None, entries, {"route": "toeplitz", "backend": "exact"})
    raise ValueError(f"unknown backend {backend!r}")


def weyl_matrix_elements(f: PolySymbol, hbar, N: int, backend: str = "float") -> OperatorMatrix:
    """Weyl quantization via the anti-Wick route: inverse heat flow, then Toeplitz."""
    g = heat_flow(f.with_cap(10**9), Q(-1, 4), 1)
    M = toeplitz_matrix_elements(g, hbar, N, backend)
    M.meta = {"route": "weyl-via-antiwick", **({"backend": backend})}
    return M


def _ladder_mats(N: int, pad: int, backend: str):
    size = N + pad
    if backend == "float":
        a = np.diag(np.sqrt(np.arange(1, size)), 1)
        return a, a.T.copy(), np.eye(size)
    import sympy as sp

    a = sp.zeros(size, size)
    for i in range(1, size):
        a[i - 1, i] = sp.sqrt(i)
    return a, a.T, sp.eye(size)


def ladder_weyl_matrix(f: PolySymbol, hbar, N: int, backend: str = "float") -> OperatorMatrix:
    """Weyl quantization by symmetrizing ladder-operator products (independent route).

    Each monomial ``z^m zbar^n`` becomes the average over all orderings of ``m``
    factors ``sqrt(2 w hbar) a`` and ``n`` factors ``sqrt(2 w hbar) a^dagger``.
    Products are formed in a padded basis so the cropped block is exact.
    """
    l = f.l
    om = f.frame.omega
    deg = max(f.degree(), 0)
    pad = deg + 1
    a, ad, eye = _ladder_mats(N, pad, backend)
    cache: dict = {}

    def sym(mj: int, nj: int):
        key = (mj, nj)
        if key not in cache:
            words = set(itertools.permutations("a" * mj + "d" * nj))
            acc = None
            for wrd in words:
                p = eye
                for ch in wrd:
                    p = p * (a if ch == "a" else ad) if backend == "exact" else p @ (a if ch == "a" else ad)
                acc = p if acc is None else acc + p
            if backend == "exact":
                import sympy as sp

                acc = acc / sp.Integer(len(words))
                cache[key] = acc[:N, :N]
            else:
                cache[key] = (acc / len(words))[:N, :N]
        return cache[key]

    if backend == "float":
        hb = float(hbar)
        dim = N**l
        total = np.zeros((dim, dim), dtype=complex)
        for key, c in f.items():
            m, n, h = _split(key, l)
            coef = cfloat(c) * hb**h
            mat = np.ones((1, 1))
            for j in range(l):
                s = (2.0 * float(om[j]) * hb) ** ((m[j] + n[j]) / 2.0)
                mat = np.kron(mat, s * sym(m[j], n[j]))
            total += coef * mat
        dense = total.real.copy() if not np.any(total.imag) else total
        return OperatorMatrix(N, l, hbar, dense, None, {"route": "ladder"})
    import sympy as sp

    hb = sp.Rational(int(to_q(hbar).numerator), int(to_q(hbar).denominator))
    total = sp.zeros(N**l, N**l)
    for key, c in f.items():
        m, n, h = _split(key, l)
        coef = (sp.Rational(int(c[0].numerator), int(c[0].denominator))
                + sp.I * sp.Rational(int(c[1].numerator), int(c[1].denominator))) * hb**h
        mat = sp.ones(1, 1)
        for j in range(l):
            w = sp.Rational(int(om[j].numerator), int(om[j].denominator))
            s = sp.sqrt((2 * w * hb) ** (m[j] + n[j]))
            mat = sp.kronecker_product(mat, s * sym(m[j], n[j]))
        total += coef * mat
    entries = {(i, j): sp.nsimplify(sp.expand(total[i, j])) for i in range(N**l) for j in range(N**l) if total[i, j] != 0}
    return OperatorMatrix(N, l, hbar, None, entries, {"route": "ladder", "backend": "exact"})


def weyl_diagonal_exact(f: PolySymbol, hbar, alphas: Sequence[Sequence[int]]) -> list:
    """Exact rational ``<psi_alpha, Op^W(f) psi_alpha>`` for the given multi-indices.

    Real part only; the diagonal of a real symbol is real.  Uses the anti-Wick route
    restricted to angular-zero terms, which are the only ones reaching the diagonal.
    """
    g = heat_flow(f.with_cap(10**9), Q(-1, 4), 1)
    hb = to_q(hbar)
    l = f.l
    om = f.frame.omega
    out = []
    diag_terms = []
    for key, c in g.items():
        m, n, h = _split(key, l)
        if m == n:
            diag_terms.append((m, h, c[0]))
    for alpha in alphas:
        total = ZERO
        for m, h, c in diag_terms:
            v = c * hb**h
            for j in range(l):
                v *= (2 * om[j] * hb) ** m[j] * math.prod(range(alpha[j] + 1, alpha[j] + m[j] + 1))
            total += v
        out.append(total)
    return out


def oscillator_diagonal(omega, hbar: float, N: int) -> np.ndarray:
    """``hbar <omega, alpha + 1/2>`` over the flattened basis."""
    om = Frame.of(omega).omega
    try:
        hb = to_q(hbar)
    except (TypeError, ValueError):
        hb = None
    if hb is None:
        idx = np.array(basis_indices(len(om), N), dtype=float)
        return float(hbar) * ((idx + 0.5) @ np.array([float(w) for w in om]))
    # exact rational levels rounded once, so they agree bit-for-bit with exact predictions
    half = Q(1, 2)
    return np.array([float(hb * sum((w * (a + half) for w, a in zip(om, al)), ZERO))
                     for al in basis_indices(len(om), N)])


def assemble_hamiltonian(omega, q0: PolySymbol, epsilon: float, hbar: float, N: int) -> OperatorMatrix:
    """``P_0 + epsilon Op^W(q0)`` truncated to ``N`` levels per mode."""
    frame = Frame.of(omega)
    if q0.frame != frame:
        raise ValueError("q0 is built on a different frame")
    if not q0.is_real():
        raise ValueError("q0 must be real")
    H = np.diag(oscillator_diagonal(frame, hbar, N)).astype(complex)
    if epsilon:
        H = H + float(epsilon) * weyl_matrix_elements(q0, hbar, N).matrix
    dense = H.real.copy() if not np.any(H.imag) else H
    return OperatorMatrix(N, frame.l, hbar, dense, None, {"route": "hamiltonian", "epsilon": float(epsilon)})


def spectrum(M, rtol: float = 1e-12) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix (OperatorMatrix or array)."""
    a = M.matrix if isinstance(M, OperatorMatrix) else np.asarray(M)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonHermitian("matrix must be square")
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1e-300)
    if float(np.max(np.abs(a - a.conj().T))) > rtol * scale:
        raise NonHermitian("matrix is not Hermitian")
    return np.linalg.eigvalsh(a)


def operator_norm(M) -> float:
    a = M.matrix if isinstance(M, OperatorMatrix) else np.asarray(M)
    return float(np.linalg.norm(a, 2))


# ---------------------------------------------------------------------- spectral matching
@dataclass(frozen=True)
class MatchedLevel:
    alpha: tuple
    e_diag: float
    e_pred: float
    e_pred_remainder: float | None
    residual: float
    trunc_drift: float | None


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    matched: list
    fitted_exponents: dict = field(default_factory=dict)
    truncation_check: dict = field(default_factory=dict)
    ambiguous: list = field(default_factory=list)


def match_spectrum(
    eigs: Sequence[float],
    predictor: Callable,
    alphas: Sequence[Sequence[int]],
    eta: float,
    hbar: float,
    predictor_remainder: Callable | None = None,
    drift: Sequence[float] | None = None,
    drift_tol: float | None = None,
    resolution: float = 1e-12,
    strict: bool = True,
) -> SpectralReport:
    """Greedy nearest-value matching of predicted levels to computed eigenvalues.

    Levels are processed in increasing predicted order and restricted to
    ``|alpha| hbar < eta``; with ``drift`` given (eigenvalue change between cutoffs,
    aligned with ``eigs``), eigenvalues drifting by more than ``drift_tol`` are not
    matched.  An eigenvalue already claimed, or a second candidate within
    ``resolution`` of the nearest, is an ambiguity: raised when ``strict``,
    otherwise recorded and skipped.
    """
    eigs = np.asarray(eigs, dtype=float)
    usable = np.ones(eigs.size, dtype=bool)
    if drift is not None and drift_tol is not None:
        usable &= np.asarray(drift) <= drift_tol
    cands = [tuple(a) for a in alphas if sum(a) * hbar < eta]
    preds = sorted(((float(predictor(a)), a) for a in cands), key=lambda t: (t[0], t[1]))
    claimed: dict = {}
    matched = []
    conflicts = []
    for e_pred, a in preds:
        dist = np.abs(eigs - e_pred)
        order = np.argsort(dist, kind="stable")
        i = int(order[0])
        if not usable[i]:
            continue
        if i in claimed or (order.size > 1 and dist[order[1]] - dist[i] <= resolution and order[1] not in claimed):
            conflicts.append((a, claimed.get(i), float(eigs[i])))
            continue
        claimed[i] = a
        e_rem = float(predictor_remainder(a)) if predictor_remainder is not None else None
        matched.append(
            MatchedLevel(a, float(eigs[i]), e_pred, e_rem, float(eigs[i]) - e_pred,
                         None if drift is None else float(drift[i]))
        )
    if conflicts and strict:
        raise AmbiguousMatch(conflicts)
    return SpectralReport(eigs, matched, {}, {}, conflicts)


def truncation_drift(eigs_small: np.ndarray, eigs_large: np.ndarray) -> np.ndarray:
    """Per-eigenvalue change between cutoffs ``N`` and ``2N`` (lowest levels aligned)."""
    n = len(eigs_small)
    return np.abs(np.asarray(eigs_large)[:n] - np.asarray(eigs_small))


# ---------------------------------------------------------------------- Appendix experiments
@dataclass(frozen=True)
class ScalingRow:
    hbar: float
    alpha: tuple
    x: float  # |alpha| hbar
    element: float


@dataclass(frozen=True)
class DiagonalScalingResult:
    rows: tuple
    slope: float
    stderr: float
    per_hbar: dict  # hbar -> (slope, stderr, C)
    constant_spread: float  # max C / min C across hbar


def prop_a1_scaling(f: PolySymbol, hbar_list: Sequence, alpha_list: Sequence[Sequence[int]]) -> DiagonalScalingResult:
    """Diagonal Weyl elements of ``f`` against ``(|alpha| hbar)^2`` over a grid.

    ``f`` must vanish to order 4 at the origin.  Fits log|element| against
    log(|alpha| hbar) jointly and per hbar; ``C`` is ``max |element| / (|alpha| hbar)^2``.
    """
    from .fitting import loglog_fit

    if f.is_zero() or f.order() < 4:
        raise ValueError("symbol must vanish to order 4 at the origin")
    rows = []
    per = {}
    for hb in hbar_list:
        vals = weyl_diagonal_exact(f, hb, alpha_list)
        xs, ys = [], []
        for a, v in zip(alpha_list, vals):
            x = sum(a) * float(hb)
            rows.append(ScalingRow(float(hb), tuple(a), x, float(v)))
            if x > 0:
                xs.append(x)
                ys.append(abs(float(v)))
        s, e = loglog_fit(xs, ys)
        C = max(y / x**2 for x, y in zip(xs, ys))
        per[float(hb)] = (s, e, C)
    xs = [r.x for r in rows if r.x > 0]
    ys = [abs(r.element) for r in rows if r.x > 0]
    s, e = loglog_fit(xs, ys)
    Cs = [v[2] for v in per.values()]
    return DiagonalScalingResult(tuple(rows), s, e, per, max(Cs) / min(Cs))


def antiwick_remainder_norm(g: PolySymbol, hbar: float, N: int) -> float:
    """Operator norm of ``Op^W(g) - Op^AW(g) + (hbar/4) Op^AW(Lap g)`` on ``N`` levels per mode.

    ``Op^W`` is built by ladder symmetrization and ``Op^AW`` by Toeplitz moments, so
    the two quantizations come from independent routes.
    """
    W = ladder_weyl_matrix(g, hbar, N).matrix
    A = toeplitz_matrix_elements(g, hbar, N).matrix
    L = toeplitz_matrix_elements(laplacian(g), hbar, N).matrix
    return operator_norm(W - A + (float(hbar) / 4.0) * L)
