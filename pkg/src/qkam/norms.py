"""Weighted Fourier norms on the polynomial-times-Gaussian class.

A :class:`GaussianSymbol` is ``pi**pi_power * P(z, zbar) * exp(-c |z|^2)`` in the frame
coordinates ``z_j = u_j + i v_j`` with ``(u, v) = (omega x, xi)``.  Fourier transforms
are taken in ``(u, v)`` with the ``(2 pi)^(-2l)`` normalization; the transform
variable is encoded the same way, ``zeta_j = s_{u_j} + i s_{v_j}``.  Under this
transform ``z -> 2i d/dzetabar`` and ``zbar -> 2i d/dzeta`` acting on the transformed
Gaussian ``(4 pi c)^(-l) exp(-|zeta|^2 / (4c))``.

The torus action rotates each ``(u_j, v_j)`` plane, so an angular component of
index ``k`` has a transform of the form ``exp(i<k, theta>) h_k(r_1, .., r_l)``.  The
``(rho, sigma)`` norm therefore reduces to radial integrals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .scalars import Q, ZERO, to_q
from .symbols import (
    Frame,
    PolySymbol,
    _Acc,
    _split,
    angular_decomposition,
    poisson_bracket,
    solve_homological,
)

_MAX_EXPONENT = 700.0


class DivergentNorm(ValueError):
    """The exponential weight outgrows the Gaussian envelope of the transform (numerically)."""


@dataclass(frozen=True)
class GaussianSymbol:
    poly: PolySymbol
    envelope_rate: object
    pi_power: int = 0

    def __post_init__(self):
        c = to_q(self.envelope_rate)
        if c <= 0:
            raise ValueError("envelope_rate must be positive")
        object.__setattr__(self, "envelope_rate", c)
        if self.poly.hbar_degree() > 0:
            raise ValueError("Gaussian-class symbols carry no hbar terms")

    @property
    def l(self) -> int:
        return self.poly.l

    def scale(self, a) -> "GaussianSymbol":
        return GaussianSymbol(self.poly.scale(a), self.envelope_rate, self.pi_power)

    def angular_components(self) -> dict:
        return {k: GaussianSymbol(p, self.envelope_rate, self.pi_power) for k, p in angular_decomposition(self.poly).items()}

    def evaluate_z(self, z: Sequence[complex]) -> complex:
        r2 = sum(abs(complex(v)) ** 2 for v in z)
        return math.pi**self.pi_power * self.poly.evaluate_z(z) * math.exp(-float(self.envelope_rate) * r2)

    def __eq__(self, other):
        if not isinstance(other, GaussianSymbol):
            return NotImplemented
        return (self.poly == other.poly and self.envelope_rate == other.envelope_rate
                and self.pi_power == other.pi_power)

    __hash__ = None


def _d_zeta_mode(P: PolySymbol, a, j: int, conj: bool) -> PolySymbol:
    l = P.l
    acc = _Acc(l, 10**9)
    e = tuple(1 if i == j else 0 for i in range(l))
    for key, (re, im) in P.items():
        m, n, h = _split(key, l)
        if not conj:
            if m[j]:
                acc.add(tuple(x - y for x, y in zip(m, e)) + n + (h,), re * m[j], im * m[j])
            acc.add(m + tuple(x + y for x, y in zip(n, e)) + (h,), -a * re, -a * im)
        else:
            if n[j]:
                acc.add(m + tuple(x - y for x, y in zip(n, e)) + (h,), re * n[j], im * n[j])
            acc.add(tuple(x + y for x, y in zip(m, e)) + n + (h,), -a * re, -a * im)
    return PolySymbol._make(P.frame, 10**9, acc.terms())


def fourier_closed_form(g: GaussianSymbol) -> GaussianSymbol:
    """Exact ``(2 pi)^(-2l)``-normalized Fourier transform in the ``(u, v)`` coordinates."""
    l = g.l
    c = g.envelope_rate
    if c <= 0:
        raise ValueError("envelope_rate must be positive")
    a = 1 / (4 * c)
    frame = g.poly.frame
    total = PolySymbol.zero(frame, 10**9)
    for key, coef in g.poly.items():
        m, n, h = _split(key, l)
        P = PolySymbol._make(frame, 10**9, {(0,) * (2 * l) + (0,): (Q(1), ZERO)})
        for j in range(l):
            for _ in range(m[j]):  # z_j -> 2i d/dzetabar_j
                P = _d_zeta_mode(P, a, j, conj=True).scale((ZERO, Q(2)))
            for _ in range(n[j]):  # zbar_j -> 2i d/dzeta_j
                P = _d_zeta_mode(P, a, j, conj=False).scale((ZERO, Q(2)))
        total = total + P.scale(coef)
    # transformed Gaussian: prod_j 1 / (4 pi c)
    total = total.scale(Q(1) / (4 * c) ** l)
    out_poly = PolySymbol._make(frame, g.poly.degree_cap, dict(total.items()))
    return GaussianSymbol(out_poly, a, g.pi_power - l)


def inverse_fourier(g: GaussianSymbol) -> GaussianSymbol:
    """Inverse of :func:`fourier_closed_form`: ``(2 pi)^(2l)`` times the parity-reflected transform."""
    f = fourier_closed_form(parity(g))
    l = g.l
    return GaussianSymbol(f.poly.scale(Q(4) ** l), f.envelope_rate, f.pi_power + 2 * l)


def parity(g: GaussianSymbol) -> GaussianSymbol:
    """``g(-z)``: odd-degree terms change sign."""
    l = g.l
    t = {}
    for key, (re, im) in g.poly.items():
        d = sum(key[: 2 * l])
        t[key] = (-re, -im) if d % 2 else (re, im)
    return GaussianSymbol(PolySymbol._make(g.poly.frame, g.poly.degree_cap, t), g.envelope_rate, g.pi_power)


# ---------------------------------------------------------------------- numerical norms
@dataclass(frozen=True)
class NormReport:
    value: float
    quadrature_error: float
    k_cutoff: int
    s_grid: str

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "quadrature_error", float(self.quadrature_error))

    @property
    def rel_error(self) -> float:
        return self.quadrature_error / self.value if self.value > 0 else 0.0


def _poly_arrays(P: PolySymbol):
    l = P.l
    keys = list(P.terms)
    M = np.array([k[:l] for k in keys], dtype=int).reshape(-1, l)
    Nn = np.array([k[l : 2 * l] for k in keys], dtype=int).reshape(-1, l)
    C = np.array([complex(float(v[0]), float(v[1])) for v in P.terms.values()])
    return M, Nn, C


def _eval_poly(P: PolySymbol, zeta: np.ndarray) -> np.ndarray:
    """Evaluate at points ``zeta`` of shape ``(npts, l)``."""
    M, Nn, C = _poly_arrays(P)
    zb = np.conj(zeta)
    out = np.zeros(zeta.shape[0], dtype=complex)
    for mi, ni, c in zip(M, Nn, C):
        term = np.full(zeta.shape[0], c, dtype=complex)
        for j in range(P.l):
            if mi[j]:
                term *= zeta[:, j] ** mi[j]
            if ni[j]:
                term *= zb[:, j] ** ni[j]
        out += term
    return out


def _majorant_coeffs(P: PolySymbol) -> dict:
    """``{d: sum |c|}`` over terms of total degree ``d``: ``|P(zeta)| <= sum_d C_d |zeta|^d``."""
    l = P.l
    out: dict = {}
    for key, v in P.items():
        d = sum(key[: 2 * l])
        out[d] = out.get(d, 0.0) + abs(complex(float(v[0]), float(v[1])))
    return out


def _radial_cutoff(a: float, sigma: float, deg: int, dim: int, scale: float) -> float:
    # past R >= 2 sigma / a the weight exp(sigma r - a r^2) is below exp(-a r^2 / 2)
    R = max(2.0 * sigma / a, 1.0)
    while (deg + dim) * math.log(R + 1.0) + math.log(scale + 1e-300) - 0.5 * a * R * R > -60.0:
        R *= 1.25
    return R


def _tail_bound(maj: dict, a: float, R: float, dim: int, area: float) -> float:
    """``area * sum_d C_d int_R^inf r^(d+dim-1) exp(-a r^2 / 2) dr`` via incomplete gamma."""
    b = a / 2.0
    tot = 0.0
    for d, C in maj.items():
        p = d + dim - 1
        s = (p + 1) / 2.0
        tot += C * 0.5 * b ** (-s) * special.gamma(s) * special.gammaincc(s, b * R * R)
    return area * tot


def _check_budget(c, sigma: float):
    # transform decays like exp(-|s|^2/(4c)); the weighted peak is exp(c sigma^2)
    if float(c) * sigma * sigma > _MAX_EXPONENT:
        raise DivergentNorm(f"sigma={sigma} too large for envelope rate {float(c)}")


def _gl(n: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _panel_gl(n_panels: int, n: int, lo: float, hi: float):
    edges = np.linspace(lo, hi, n_panels + 1)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl(n, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _component_radial_integral(Pk: PolySymbol, a: float, sigma: float, R: float, res: int) -> float:
    """``int |h_k(r)| exp(sigma |r|) prod_j (2 pi r_j) dr`` over ``r in [0, R]``-ball."""
    l = Pk.l
    if l == 1:
        r, w = _panel_gl(res, 8, 0.0, R)
        vals = np.abs(_eval_poly(Pk, r[:, None].astype(complex)))
        return float(np.sum(w * vals * np.exp(sigma * r - a * r * r) * 2 * math.pi * r))
    if l == 2:
        r, wr = _panel_gl(res, 8, 0.0, R)
        e, we = _panel_gl(max(res // 2, 4), 8, 0.0, math.pi / 2)
        RR, EE = np.meshgrid(r, e, indexing="ij")
        W = np.outer(wr, we)
        r1, r2 = RR * np.cos(EE), RR * np.sin(EE)
        pts = np.stack([r1.ravel(), r2.ravel()], axis=1).astype(complex)
        vals = np.abs(_eval_poly(Pk, pts)).reshape(RR.shape)
        # dr1 dr2 = R dR deta ; angular factors (2 pi r_1)(2 pi r_2)
        jac = RR * (2 * math.pi * r1) * (2 * math.pi * r2)
        return float(np.sum(W * vals * np.exp(sigma * RR - a * RR * RR) * jac))
    raise ValueError("norm quadrature supports l <= 2")


def _component_norm(Pk: PolySymbol, a: float, pref: float, sigma: float, res: int = 24):
    l = Pk.l
    maj = _majorant_coeffs(Pk)
    deg = max(maj) if maj else 0
    scale = sum(maj.values()) * pref
    R = _radial_cutoff(a, sigma, deg, 2 * l, scale)
    v1 = _component_radial_integral(Pk, a, sigma, R, res) * pref
    v2 = _component_radial_integral(Pk, a, sigma, R, 2 * res) * pref
    area = 2 * math.pi ** l / math.gamma(l)  # surface of the unit sphere in R^(2l)
    tail = _tail_bound(maj, a, R, 2 * l, area) * pref
    return v2, abs(v2 - v1) + tail, R


def norm_rho_sigma(g: GaussianSymbol, rho: float, sigma: float, omega=None, res: int = 24) -> NormReport:
    """``sum_k exp(rho |k|) int |FT(g_k)(s)| exp(sigma |s|) ds`` over the occurring ``k``."""
    if g.l > 2:
        raise ValueError("norm quadrature supports l <= 2")
    if omega is not None and Frame.of(omega) != g.poly.frame:
        raise ValueError("omega does not match the symbol's frame")
    if rho < 0 or sigma < 0:
        raise ValueError("rho and sigma must be non-negative")
    _check_budget(g.envelope_rate, sigma)
    ft = fourier_closed_form(g)
    a = float(ft.envelope_rate)
    pref = math.pi**ft.pi_power
    total, err, kmax = 0.0, 0.0, 0
    for k, Pk in angular_decomposition(ft.poly).items():
        v, e, _ = _component_norm(Pk, a, pref, sigma, res)
        wgt = math.exp(rho * sum(abs(c) for c in k))
        total += wgt * v
        err += wgt * e
        kmax = max(kmax, sum(abs(c) for c in k))
    return NormReport(total, err, kmax, f"radial panel Gauss-Legendre, {res}->{2 * res} panels x 8 nodes, l={g.l}")


def _full_integral(P: PolySymbol, a: float, sigma: float, R: float, res: int) -> float:
    l = P.l
    if l == 1:
        r, wr = _panel_gl(res, 8, 0.0, R)
        nt = 16 * res
        th = np.arange(nt) * (2 * math.pi / nt)
        RR, TT = np.meshgrid(r, th, indexing="ij")
        pts = (RR * np.exp(1j * TT)).reshape(-1, 1)
        vals = np.abs(_eval_poly(P, pts)).reshape(RR.shape)
        return float(np.sum(wr[:, None] * (2 * math.pi / nt) * vals * np.exp(sigma * RR - a * RR * RR) * RR))
    if l == 2:
        r, wr = _panel_gl(res, 8, 0.0, R)
        e, we = _gl(2 * res, 0.0, math.pi / 2)
        nt = 4 * res
        th = np.arange(nt) * (2 * math.pi / nt)
        tot = 0.0
        for ri, wri in zip(r, wr):
            E, T1, T2 = np.meshgrid(e, th, th, indexing="ij")
            z1 = ri * np.cos(E) * np.exp(1j * T1)
            z2 = ri * np.sin(E) * np.exp(1j * T2)
            vals = np.abs(_eval_poly(P, np.stack([z1.ravel(), z2.ravel()], axis=1))).reshape(E.shape)
            jac = ri**3 * np.sin(E) * np.cos(E)
            tot += wri * math.exp(sigma * ri - a * ri * ri) * float(
                np.sum(we[:, None, None] * (2 * math.pi / nt) ** 2 * vals * jac)
            )
        return tot
    raise ValueError("norm quadrature supports l <= 2")


def norm_sigma(g: GaussianSymbol, sigma: float, res: int = 24) -> NormReport:
    """``int |FT(g)(s)| exp(sigma |s|) ds`` with a quadrature error estimate and tail bound."""
    if g.l > 2:
        raise ValueError("norm quadrature supports l <= 2")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    _check_budget(g.envelope_rate, sigma)
    ft = fourier_closed_form(g)
    a = float(ft.envelope_rate)
    pref = math.pi**ft.pi_power
    parts = angular_decomposition(ft.poly)
    if len(parts) <= 1:
        # a single angular component: |FT| is rotation invariant
        if not parts:
            return NormReport(0.0, 0.0, 0, "empty")
        (k, Pk), = parts.items()
        v, e, _ = _component_norm(Pk, a, pref, sigma, res)
        return NormReport(v, e, sum(abs(c) for c in k), "radial (single angular component)")
    maj = _majorant_coeffs(ft.poly)
    R = _radial_cutoff(a, sigma, max(maj), 2 * g.l, sum(maj.values()) * pref)
    lo = res if g.l == 1 else max(res // 3, 4)
    v1 = _full_integral(ft.poly, a, sigma, R, lo) * pref
    v2 = _full_integral(ft.poly, a, sigma, R, 2 * lo) * pref
    area = 2 * math.pi ** g.l / math.gamma(g.l)
    tail = _tail_bound(maj, a, R, 2 * g.l, area) * pref
    kmax = max(sum(abs(c) for c in k) for k in parts)
    return NormReport(v2, abs(v2 - v1) + tail, kmax, f"polar product grid, refinement {lo}->{2 * lo}")


def l1_norm_of_transform(g: GaussianSymbol, res: int = 24) -> NormReport:
    return norm_sigma(g, 0.0, res)


# ---------------------------------------------------------------------- brackets on the class
def gaussian_poisson_bracket(g: GaussianSymbol, h: GaussianSymbol) -> GaussianSymbol:
    """``{P e^{-c|z|^2}, P' e^{-c'|z|^2}}`` in closed form; the envelope rate becomes ``c + c'``."""
    if g.poly.frame != h.poly.frame:
        raise ValueError("frame mismatch")
    frame = g.poly.frame
    cap = 10**9
    P, Pp = g.poly.with_cap(cap), h.poly.with_cap(cap)
    r2 = PolySymbol(frame, {}, cap)
    for j in range(frame.l):
        e = tuple(1 if i == j else 0 for i in range(frame.l))
        r2 = r2 + PolySymbol.monomial(frame, e, e, 1, 0, cap)
    c, cp = g.envelope_rate, h.envelope_rate
    out = poisson_bracket(P, Pp) - (P * poisson_bracket(r2, Pp)).scale(c) - (Pp * poisson_bracket(P, r2)).scale(cp)
    out = PolySymbol._make(frame, max(g.poly.degree_cap, h.poly.degree_cap), dict(out.items()))
    return GaussianSymbol(out, c + cp, g.pi_power + h.pi_power)


def gaussian_homological(g: GaussianSymbol, omega_eff=None):
    """Solve the homological equation on the Gaussian class (the envelope is action-invariant)."""
    sol = solve_homological(g.poly, omega_eff)
    return (
        GaussianSymbol(sol.w, g.envelope_rate, g.pi_power),
        GaussianSymbol(sol.N, g.envelope_rate, g.pi_power),
        sol,
    )


@dataclass(frozen=True)
class LemmaRatio:
    lemma_id: str
    params: dict
    measured: float
    bound: float
    ratio: float
    quad_error: float  # relative error of the ratio

    @property
    def ok(self) -> bool:
        return self.ratio <= 1.0 + self.quad_error + 1e-12


def c_psi(tau: float, gamma: float) -> float:
    return (tau / math.e) ** tau / gamma


def verify_lemma_estimates(
    g: GaussianSymbol,
    gp: GaussianSymbol,
    rho: float,
    sigma: float,
    d: float,
    delta: float,
    delta_p: float,
    gamma: float,
    tau: float,
    omega=None,
    res: int = 24,
) -> list:
    """Measured/bound ratios for the homological, bracket and operator-norm estimates.

    * ``homological``: ``||w||_{rho-d, sigma}`` against ``c_psi ||g||_{rho,sigma} / d^tau``,
      and the variant with ``sigma - delta`` on the left;
    * ``bracket``: ``||{g, g'}||_{sigma-delta-delta'}`` against
      ``||g||_sigma ||g'||_{sigma-delta} / (e^2 delta' (delta + delta'))``, and the
      same with the ``(rho, .)`` norms;
    * ``l1``: ``||FT g||_{L^1}`` against ``||g||_{rho,sigma}``.
    """
    errs = []
    if not 0 < d < rho:
        errs.append("need 0 < d < rho")
    if not (delta > 0 and delta_p > 0 and delta + delta_p < sigma):
        errs.append("need delta, delta' > 0 and delta + delta' < sigma")
    if errs:
        raise ValueError("; ".join(errs))
    params = dict(rho=rho, sigma=sigma, d=d, delta=delta, delta_p=delta_p, gamma=gamma, tau=tau)
    rows = []

    def ratio(lemma_id, meas: NormReport, bound_val: float, bound_err: float):
        if bound_val == 0:
            r = 0.0 if meas.value == 0 else math.inf
        else:
            r = meas.value / bound_val
        qe = meas.rel_error + bound_err
        rows.append(LemmaRatio(lemma_id, dict(params), meas.value, bound_val, r, qe))

    w, _, _ = gaussian_homological(g, omega)
    ng = norm_rho_sigma(g, rho, sigma, res=res)
    b = c_psi(tau, gamma) * ng.value / d**tau
    ratio("homological", norm_rho_sigma(w, rho - d, sigma, res=res), b, ng.rel_error)
    ratio("homological_sigma_loss", norm_rho_sigma(w, rho - d, sigma - delta, res=res), b, ng.rel_error)

    br = gaussian_poisson_bracket(g, gp)
    k = 1.0 / (math.e**2 * delta_p * (delta + delta_p))
    n1 = norm_sigma(g, sigma, res)
    n2 = norm_sigma(gp, sigma - delta, res)
    ratio("bracket", norm_sigma(br, sigma - delta - delta_p, res), k * n1.value * n2.value, n1.rel_error + n2.rel_error)
    m1 = norm_rho_sigma(g, rho, sigma, res=res)
    m2 = norm_rho_sigma(gp, rho, sigma - delta, res=res)
    ratio("bracket_rho", norm_rho_sigma(br, rho, sigma - delta - delta_p, res=res), k * m1.value * m2.value,
          m1.rel_error + m2.rel_error)

    ratio("l1", l1_norm_of_transform(g, res), ng.value, ng.rel_error)
    return rows


def gaussian_examples(n: int, seed: int = 0, max_degree: int = 4, omega=(1,)) -> list:
    """``n`` seeded pairs ``(g, g')`` of real Gaussian-class symbols with small integer coefficients.

    Each polynomial has total degree between 1 and ``max_degree``; envelope rates are
    drawn from ``{1/2, 1, 2}``.
    """
    rng = np.random.default_rng(seed)
    frame = Frame.of(omega)
    l = frame.l
    rates = (Q(1, 2), Q(1), Q(2))
    monos = [
        (m, nn)
        for m in np.ndindex(*(max_degree + 1,) * l)
        for nn in np.ndindex(*(max_degree + 1,) * l)
        if 1 <= sum(m) + sum(nn) <= max_degree and (m, nn) <= (nn, m)
    ]

    def one():
        while True:
            terms: dict = {}
            for m, nn in monos:
                if rng.random() < 0.5:
                    continue
                re = Q(int(rng.integers(-3, 4)), int(rng.integers(1, 4)))
                im = Q(int(rng.integers(-3, 4)), int(rng.integers(1, 4))) if m != nn else ZERO
                if re == 0 and im == 0:
                    continue
                # real symbol: the (n, m) coefficient is the conjugate of the (m, n) one
                terms[tuple(m) + tuple(nn) + (0,)] = (re, im)
                if m != nn:
                    terms[tuple(nn) + tuple(m) + (0,)] = (re, -im)
            if terms:
                return GaussianSymbol(PolySymbol(frame, terms, 10**9), rates[int(rng.integers(0, 3))])

    return [(one(), one()) for _ in range(n)]
