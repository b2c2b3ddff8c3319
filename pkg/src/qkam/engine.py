"""Superconvergent normal-form iteration for perturbed harmonic oscillators.

The Hamiltonian ``p0 + eps q0`` is conjugated step by step.  Every object carries
its eps-dependence as a truncated power series (orders ``0..T``) with exact
coefficients: symbols as ``{order: PolySymbol}`` and scalars as ``{order: HbarPoly}``.
A run therefore serves all eps at evaluation time, and the formal order of ``q_p``
(``eps^(2^p)``) is visible as the lowest order present.

Step ``p`` (with ``h0 = <omega_{p-1}(eps), I>``, ``g = Q_{p-1}``):

1. solve ``{h0, w} + N = g``; the divisors ``<omega_{p-1}(eps), k>`` are eps-series;
2. split ``N`` into energy, frequency shift and remainder;
3. ``exp(ad_w)(h0 + g) = h0 + N + Q_p`` with
   ``Q_p = sum_{r>=1} ad_w^r g / r! + sum_{r>=2} ad_w^{r-1} (N - g) / r!``
   (using ``ad_w h0 = N - g``);
4. stored remainders are pushed through ``exp(ad_w)``; the new one is appended.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import gmpy2

from .diophantine import GammaExhausted, cutoff
from .scalars import ONE, Q, ZERO, HbarPoly, to_q
from .symbols import (
    DEFAULT_DEGREE_CAP,
    Frame,
    PolySymbol,
    SmallDivisorWarning,
    TruncationLedger,
    ZeroDivisor,
    bracket,
    decompose_normal,
    diagonal_polynomial,
)


class InvalidPerturbation(ValueError):
    """The perturbation is not real or does not vanish to second order at the origin."""


class TruncationOverflow(RuntimeError):
    """Mass dropped by the degree cap exceeds the configured fraction."""


class LocalityViolation(ValueError):
    """A level outside the window ``|alpha| hbar < eta`` was requested."""


# ---------------------------------------------------------------------- eps-series helpers
def _trim(s: dict, T: int) -> dict:
    return {e: v for e, v in s.items() if e <= T and not v.is_zero()}


def series_add(a: Mapping, b: Mapping, T: int) -> dict:
    out = dict(a)
    for e, v in b.items():
        out[e] = out[e] + v if e in out else v
    return _trim(out, T)


def series_scale(a: Mapping, c) -> dict:
    return {e: v.scale(c) for e, v in a.items() if not v.is_zero()} if c != 0 else {}


def hbar_scale(f: PolySymbol, hp: HbarPoly) -> PolySymbol:
    """Multiply a symbol by an hbar-polynomial scalar."""
    out = None
    for h, c in hp.coeffs.items():
        t = f.scale(c).mul_hbar(h)
        out = t if out is None else out + t
    return out if out is not None else PolySymbol.zero(f.frame, f.degree_cap)


def scalar_times_series(s: Mapping, a: Mapping, T: int) -> dict:
    out: dict = {}
    for e1, c in s.items():
        for e2, f in a.items():
            e = e1 + e2
            if e > T:
                continue
            t = hbar_scale(f, c)
            out[e] = out[e] + t if e in out else t
    return _trim(out, T)


def scalar_series_mul(a: Mapping, b: Mapping, T: int) -> dict:
    out: dict = {}
    for e1, x in a.items():
        for e2, y in b.items():
            e = e1 + e2
            if e <= T:
                out[e] = out[e] + x * y if e in out else x * y
    return {e: v for e, v in out.items() if not v.is_zero()}


def series_bracket(w: Mapping, a: Mapping, mode: str, T: int, sink: list | None = None) -> dict:
    """``{w, a}`` order by order; truncation ledgers of every product go to ``sink``."""
    out: dict = {}
    for e1, f in w.items():
        for e2, g in a.items():
            e = e1 + e2
            if e > T:
                continue
            t = bracket(f, g, mode)
            if sink is not None and t.truncation.flag:
                sink.append(t.truncation)
            if t.is_zero():
                continue
            out[e] = out[e] + t if e in out else t
    return _trim(out, T)


def series_lie(H: Mapping, w: Mapping, mode: str, T: int, sink: list | None = None) -> dict:
    """``exp(ad_w) H`` on eps-series; terminates because ``w`` has positive order."""
    total = dict(H)
    g = dict(H)
    r = 0
    while g:
        r += 1
        g = series_scale(series_bracket(w, g, mode, T, sink), Q(1, r))
        total = series_add(total, g, T)
    return total


def eval_scalar_series(s: Mapping, eps, hbar) -> gmpy2.mpq:
    """Exact value at rational ``(eps, hbar)``."""
    ep = to_q(eps)
    return sum((v.evaluate(hbar) * ep**e for e, v in s.items()), ZERO)


def eval_symbol_series(s: Mapping, eps, frame: Frame, cap: int) -> PolySymbol:
    """Sum the eps-series at a rational eps (hbar stays symbolic)."""
    ep = to_q(eps)
    out = PolySymbol.zero(frame, cap)
    for e, v in sorted(s.items()):
        out = out + v.scale(ep**e)
    return out


def series_ledger(s: Mapping) -> TruncationLedger:
    return TruncationLedger().merge(*(v.truncation for v in s.values()))


# ---------------------------------------------------------------------- schedules and bounds
@dataclass(frozen=True)
class ScheduleParams:
    p: int
    sigma_p: object
    s_p: object
    rho_p: object
    r_p: object
    K_p: int
    gamma_p: float
    eps_p: float


def _exact(x):
    try:
        return to_q(x)
    except TypeError:
        return x


def schedule(p: int, rho, sigma, gamma_prev: float, K: int, eps: float, norm_qprev: float,
             tau: float, lag: int = 1) -> ScheduleParams:
    """Parameters of step ``p``.

    ``sigma_p = sigma / (4p^2)``, ``s_p = s_{p-1} - sigma_p`` (``s_0 = sigma``), and
    likewise for ``rho``; ``K_p = pK``; ``eps_p = eps^(2^(p-1)) ||q_{p-1}||`` and
    ``gamma_p = gamma_{p-1} - eps_p (1 + K_{p-1}^tau)`` where ``K_0`` is read as ``K``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    rho, sigma = _exact(rho), _exact(sigma)
    sigma_p = sigma / (4 * p * p)
    rho_p = rho / (4 * p * p)
    s_p = sigma - sum((sigma / (4 * j * j) for j in range(1, p + 1)), ZERO * sigma)
    r_p = rho - sum((rho / (4 * j * j) for j in range(1, p + 1)), ZERO * rho)
    eps_p = float(eps) ** (2 ** (p - 1)) * float(norm_qprev)
    gamma_p = float(gamma_prev) - eps_p * (1.0 + cutoff(p, K, lag) ** float(tau))
    if gamma_p <= 0:
        raise GammaExhausted(p, gamma_p)
    return ScheduleParams(p, sigma_p, s_p, rho_p, r_p, p * K, gamma_p, eps_p)


def _log_bound(p: int, rho: float, sigma: float, tau: float, norm_q0: float) -> float:
    if norm_q0 == 0:
        return -math.inf
    return (2 * tau * p * math.log(4 * p * p / rho) + 2 * p * math.log(4 * p * p / sigma)
            + 2**p * math.log(norm_q0))


def theoretical_norm_bound(p: int, rho, sigma, tau, norm_q0) -> float:
    """``(4p^2/rho)^(2 tau p) (4p^2/sigma)^(2p) ||q0||^(2^p)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if norm_q0 == 0:
        return 0.0
    lb = _log_bound(p, float(rho), float(sigma), float(tau), float(norm_q0))
    return math.exp(lb) if lb < 709 else math.inf


def recursion_norm_bound(p: int, rho, sigma, tau, norm_q0) -> float:
    """Iterate ``B_p = rho_p^(-2 tau) sigma_p^(-2) B_{p-1}^2`` from ``B_0 = ||q0||``."""
    lb = math.log(norm_q0) if norm_q0 > 0 else -math.inf
    for j in range(1, p + 1):
        lb = 2 * tau * math.log(4 * j * j / rho) + 2 * math.log(4 * j * j / sigma) + 2 * lb
    return math.exp(lb) if lb < 709 else math.inf


def lemma_norm_bound(p: int, rho, sigma, tau, gamma, norm_q0) -> float:
    """Iterate ``B_p = 2 c_psi / (e^2 rho_p^tau sigma_p^2) B_{p-1}^2`` with ``c_psi = (tau/e)^tau / gamma``.

    The homological constant applied with ``d = rho_p`` and the bracket constant with
    ``delta = delta' = sigma_p / 2``.
    """
    cpsi = (tau / math.e) ** tau / gamma
    lb = math.log(norm_q0) if norm_q0 > 0 else -math.inf
    for j in range(1, p + 1):
        rp, sp_ = rho / (4 * j * j), sigma / (4 * j * j)
        lb = math.log(2 * cpsi / math.e**2) - tau * math.log(rp) - 2 * math.log(sp_) + 2 * lb
    return math.exp(lb) if lb < 709 else math.inf


def _admissible(eps: float, rho, sigma, tau, gamma, norm_q0, P_max: int, K: int) -> bool:
    le = math.log(eps)
    prev_a = le + math.log(norm_q0)  # eps ||q0||
    g = float(gamma)
    log_b_prev = math.log(norm_q0)
    for p in range(1, P_max + 1):
        a = 2**p * le + _log_bound(p, rho, sigma, tau, norm_q0)
        if not a < prev_a:
            return False
        prev_a = a
        log_eps_p = 2 ** (p - 1) * le + log_b_prev
        cost = 1.0 + cutoff(p, K) ** tau
        if log_eps_p + math.log(cost) >= math.log(g):
            return False
        g -= math.exp(log_eps_p) * cost
        if g <= 0:
            return False
        log_b_prev = _log_bound(p, rho, sigma, tau, norm_q0)
    return True


def epsilon_star(rho, sigma, tau, gamma, norm_q0, P_max: int, K: int = 1, iters: int = 200) -> float:
    """Largest eps (log-space bisection) for which the explicit step inequalities hold.

    For ``p <= P_max``: ``eps^(2^p) B_p`` decreases in ``p`` (``B_p`` the displayed
    bound, ``B_0 = ||q0||``); the cutoff condition
    ``(1 + K_{p-1}^tau) eps_p < gamma_{p-1}`` holds with ``eps_p = eps^(2^(p-1)) B_{p-1}``;
    and ``gamma_p`` stays positive.  Returns ``inf`` for ``norm_q0 = 0``.
    """
    rho, sigma, tau, norm_q0 = float(rho), float(sigma), float(tau), float(norm_q0)
    if norm_q0 == 0:
        return math.inf
    lo, hi = -700.0, 0.0
    if _admissible(math.exp(hi), rho, sigma, tau, gamma, norm_q0, P_max, K):
        return 1.0
    if not _admissible(math.exp(lo), rho, sigma, tau, gamma, norm_q0, P_max, K):
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _admissible(math.exp(mid), rho, sigma, tau, gamma, norm_q0, P_max, K):
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


# ---------------------------------------------------------------------- state
@dataclass(frozen=True)
class EngineConfig:
    """Problem and numerical settings for a normal-form run.

    ``epsilon`` and ``hbar`` are the nominal values used for numeric checks
    (diophantine margins, residual norms, gamma budget); the symbolic output is
    valid for all eps up to the series order.
    """

    omega: tuple
    q0: PolySymbol
    gamma: float = 0.1
    tau: float = 1.5
    K: int = 5
    P: int = 2
    mode: str = "classical"
    epsilon: object = "1/1000"
    hbar: object = "1/20"
    rho: object = 1
    sigma: object = 1
    degree_cap: int = DEFAULT_DEGREE_CAP
    series_order: int | None = None
    ordering: str | None = None
    overflow_fraction: float | None = None

    @property
    def frame(self) -> Frame:
        return Frame.of(self.omega)

    @property
    def T(self) -> int:
        return self.series_order if self.series_order is not None else 2**self.P

    @property
    def normal_ordering(self) -> str:
        if self.ordering is not None:
            return self.ordering
        return "number" if self.mode == "quantum" else "symbol"


@dataclass(frozen=True)
class IterationState:
    config: EngineConfig
    step: int
    omega: tuple  # per mode: {order: HbarPoly}
    energy: dict  # {order: HbarPoly}
    Q: dict  # {order: PolySymbol}
    generators: tuple = ()  # (p, {order: PolySymbol})
    remainders: tuple = ()  # ({order: PolySymbol}, ...)
    schedule: tuple = ()
    gamma: float = 0.0
    residual_norm_history: tuple = ()
    residual_max_history: tuple = ()
    min_divisor: float = math.inf
    min_divisor_k: tuple | None = None
    warnings: tuple = ()
    truncation: TruncationLedger = field(default_factory=TruncationLedger)
    terminated: bool = False

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def frame(self) -> Frame:
        return self.config.frame

    def q(self) -> dict:
        """Residual coefficients ``q_p = Q_p / eps^(2^p)`` as a series."""
        s = 2**self.step
        return {e - s: v for e, v in self.Q.items()}

    def omega_at(self, eps, hbar) -> list:
        return [eval_scalar_series(s, eps, hbar) for s in self.omega]

    def energy_at(self, eps, hbar):
        return eval_scalar_series(self.energy, eps, hbar)

    def remainder_symbol(self, eps) -> PolySymbol:
        out = PolySymbol.zero(self.frame, self.config.degree_cap)
        for r in self.remainders:
            out = out + eval_symbol_series(r, eps, self.frame, self.config.degree_cap)
        return out


def _check_q0(q0: PolySymbol, frame: Frame):
    errs = []
    if q0.frame != frame:
        errs.append("q0 is built on a different frequency frame")
    if not q0.is_real():
        errs.append("q0 must be real")
    if q0.order() < 2:
        errs.append("q0 must vanish to second order at the origin (found terms of degree < 2)")
    if errs:
        raise InvalidPerturbation("; ".join(errs))


def initial_state(config: EngineConfig) -> IterationState:
    frame = config.frame
    q0 = config.q0.with_cap(config.degree_cap)
    _check_q0(q0, frame)
    omega = tuple({0: HbarPoly.const(w)} for w in frame.omega)
    Q0 = {1: q0} if not q0.is_zero() else {}
    return IterationState(config, 0, omega, {}, Q0, gamma=float(config.gamma), truncation=q0.truncation)


def _residual_norms(state_Q: dict, p: int, eps, hbar) -> tuple:
    """(l1, max) norms of ``Q_p / eps^(2^p)`` at nominal values."""
    s = 2**p
    ep = to_q(eps)
    hb = float(to_q(hbar))
    if not state_Q:
        return 0.0, 0.0
    if ep == 0:
        lead = state_Q.get(s)
        if lead is None:
            return 0.0, 0.0
        return lead.l1_norm(hb), _max_coeff(lead, hb)
    total = None
    for e, v in state_Q.items():
        t = v.scale(ep ** (e - s))
        total = t if total is None else total + t
    return total.l1_norm(hb), _max_coeff(total, hb)


def residual_at(state: IterationState, eps, hbar) -> float:
    """l1 norm of the residual ``Q_p`` itself (not rescaled) at the given ``(eps, hbar)``."""
    ep = to_q(eps)
    if not state.Q or ep == 0:
        return 0.0
    l1, _ = _residual_norms(state.Q, state.step, ep, hbar)
    return l1 * float(ep) ** (2**state.step)


def _max_coeff(f: PolySymbol, hbar: float) -> float:
    acc: dict = {}
    for k, v in f.items():
        acc[k[:-1]] = acc.get(k[:-1], 0j) + complex(float(v[0]), float(v[1])) * hbar ** k[-1]
    return max((abs(v) for v in acc.values()), default=0.0)


def _inverse_divisor(k: tuple, omega: tuple, T: int) -> dict:
    """eps-series of ``1 / <omega(eps), k>`` expanded around the base divisor."""
    d0 = sum((omega[j][0][0] * k[j] for j in range(len(k)) if k[j]), ZERO)
    if d0 == 0:
        raise ZeroDivisor(k)
    delta: dict = {}
    for j, kj in enumerate(k):
        if not kj:
            continue
        for e, c in omega[j].items():
            if e == 0:
                continue
            delta[e] = delta[e] + c * kj if e in delta else c * kj
    delta = {e: v for e, v in delta.items() if not v.is_zero()}
    out = {0: HbarPoly.const(ONE / d0)}
    if not delta:
        return out
    neg_delta = {e: -v for e, v in delta.items()}
    power = {0: HbarPoly.const(ONE)}
    n = 0
    while True:
        n += 1
        power = scalar_series_mul(power, neg_delta, T)
        if not power:
            break
        scale = ONE / d0 ** (n + 1)
        for e, v in power.items():
            out[e] = out[e] + v * scale if e in out else v * scale
    return {e: v for e, v in out.items() if not v.is_zero()}


def solve_homological_series(g: dict, omega: tuple, T: int, nominal_eps=None, nominal_hbar=None,
                             gamma=None, tau=None):
    """Series version of the homological solver against eps-dependent frequencies.

    Returns ``(w, N, min_divisor, min_k, warnings)``; divisor checks use the
    frequencies evaluated at the nominal ``(eps, hbar)``.
    """
    l = len(omega)
    N: dict = {}
    parts: dict = {}  # k -> {order: PolySymbol}
    for e, f in g.items():
        nterms = {}
        for key, v in f.items():
            k = tuple(key[l + j] - key[j] for j in range(l))
            if any(k):
                parts.setdefault(k, {}).setdefault(e, {})[key] = v
            else:
                nterms[key] = v
        if nterms:
            N[e] = PolySymbol._make(f.frame, f.degree_cap, nterms)
    w: dict = {}
    min_div, min_k, warns = math.inf, None, []
    om_nom = None
    if nominal_eps is not None:
        om_nom = [float(eval_scalar_series(s, nominal_eps, nominal_hbar)) for s in omega]
    for k, ser in parts.items():
        inv = _inverse_divisor(k, omega, T)
        if om_nom is not None:
            dval = abs(sum(om_nom[j] * k[j] for j in range(l)))
        else:
            dval = abs(float(sum((omega[j][0][0] * k[j] for j in range(l)), ZERO)))
        if dval < min_div:
            min_div, min_k = dval, k
        if gamma is not None and tau is not None:
            thr = float(gamma) * sum(abs(c) for c in k) ** (-float(tau))
            if dval < thr:
                warns.append(SmallDivisorWarning(k, dval, thr))
        for e, terms in ser.items():
            frame = g[e].frame
            cap = g[e].degree_cap
            # w_k = i g_k / <omega, k>
            gk = PolySymbol._make(frame, cap, {key: (-v[1], v[0]) for key, v in terms.items()})
            for e2, c in inv.items():
                if e + e2 > T:
                    continue
                t = hbar_scale(gk, c)
                w[e + e2] = w[e + e2] + t if (e + e2) in w else t
    return _trim(w, T), _trim(N, T), min_div, min_k, tuple(warns)


def _check_overflow(cfg: EngineConfig, series: dict, led: TruncationLedger, where: str):
    if cfg.overflow_fraction is None:
        return
    if not led.flag:
        return
    mass = sum(v.l1_norm() for v in series.values())
    if led.max_dropped > cfg.overflow_fraction * max(mass, 1e-300):
        raise TruncationOverflow(
            f"{where}: dropped coefficient {led.max_dropped:.3e} exceeds "
            f"{cfg.overflow_fraction:g} of retained mass {mass:.3e}"
        )


def kam_step(state: IterationState) -> IterationState:
    """One conjugation step; see the module docstring for the structure."""
    cfg = state.config
    T = cfg.T
    mode = cfg.mode
    p = state.step + 1
    if state.terminated or not state.Q:
        return replace(state, terminated=True)
    norm_prev = (
        state.residual_norm_history[-1]
        if state.residual_norm_history
        else cfg.q0.l1_norm(float(to_q(cfg.hbar)))
    )
    sched = schedule(p, cfg.rho, cfg.sigma, state.gamma, cfg.K, float(to_q(cfg.epsilon)), norm_prev, cfg.tau)
    g = state.Q
    K_prev = cutoff(p, cfg.K)
    w, N, min_div, min_k, warns = solve_homological_series(
        g, state.omega, T, cfg.epsilon, cfg.hbar, state.gamma, cfg.tau
    )
    warns = tuple(x for x in warns if sum(abs(c) for c in x.k) <= K_prev)
    # normal part: energy, frequency shift, remainder per eps order
    energy = dict(state.energy)
    omega = [dict(s) for s in state.omega]
    new_rem: dict = {}
    for e, Ne in N.items():
        dec = decompose_normal(Ne, cfg.normal_ordering)
        if not dec.energy.is_zero():
            energy[e] = energy[e] + dec.energy if e in energy else dec.energy
        for j, s in enumerate(dec.frequency_shift):
            if not s.is_zero():
                omega[j][e] = omega[j][e] + s if e in omega[j] else s
        if not dec.remainder.is_zero():
            new_rem[e] = dec.remainder
    energy = {e: v for e, v in energy.items() if not v.is_zero()}
    omega = tuple({e: v for e, v in s.items() if not v.is_zero()} for s in omega)
    # Q_p = sum_{r>=1} ad_w^r g / r! + sum_{r>=1} ad_w^r (N - g) / (r+1)!
    Qp: dict = {}
    sink: list = []
    A = dict(g)
    B = series_add(N, series_scale(g, -1), T)
    r = 0
    fact = 1
    while A or B:
        r += 1
        fact *= r
        A = series_bracket(w, A, mode, T, sink)
        B = series_bracket(w, B, mode, T, sink)
        Qp = series_add(Qp, series_scale(A, Q(1, fact)), T)
        Qp = series_add(Qp, series_scale(B, Q(1, fact * (r + 1))), T)
    low = [e for e in Qp if e < 2**p]
    if low:
        raise RuntimeError(f"internal error: residual has eps-orders {low} below 2^{p}")
    _check_overflow(cfg, Qp, TruncationLedger().merge(*sink), f"step {p} residual")
    rems = tuple(series_lie(R, w, mode, T, sink) for R in state.remainders)
    if new_rem:
        rems = rems + (new_rem,)
    rems = tuple(r_ for r_ in rems if r_)
    for R in rems:
        for v in R.values():
            if v.weighted_order() < 4:
                raise RuntimeError("internal error: remainder does not vanish to order 4")
    l1, mx = _residual_norms(Qp, p, cfg.epsilon, cfg.hbar)
    # zero products are trimmed from the series, so drops are collected per bracket
    ledger = state.truncation.merge(*sink)
    return IterationState(
        cfg,
        p,
        omega,
        energy,
        Qp,
        state.generators + ((p, w),),
        rems,
        state.schedule + (sched,),
        sched.gamma_p,
        state.residual_norm_history + (l1,),
        state.residual_max_history + (mx,),
        min(state.min_divisor, min_div),
        min_k if min_div < state.min_divisor else state.min_divisor_k,
        state.warnings + warns,
        ledger,
        not Qp,
    )


@dataclass(frozen=True)
class ConvergenceCertificate:
    epsilon: float
    epsilon_star: float
    norm_q0: float
    theoretical_bounds: tuple  # displayed bound per step
    recursion_bounds: tuple
    lemma_bounds: tuple
    measured_residuals: tuple
    gamma_history: tuple
    gamma_infinity: float | None
    min_divisor: float
    min_divisor_k: tuple | None
    truncation_dropped: int
    truncation_max: float
    steps: int
    stop_reason: str

    @property
    def within_epsilon_star(self) -> bool:
        return self.epsilon <= self.epsilon_star

    @property
    def bounds_hold(self) -> bool:
        return all(m <= b for m, b in zip(self.measured_residuals, self.theoretical_bounds))

    @property
    def check_passed(self) -> bool:
        """Measured residuals within the displayed bounds whenever eps <= eps*."""
        return (not self.within_epsilon_star) or self.bounds_hold

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["min_divisor_k"] = list(self.min_divisor_k) if self.min_divisor_k else None
        for k in ("theoretical_bounds", "recursion_bounds", "lemma_bounds", "measured_residuals", "gamma_history"):
            d[k] = list(d[k])
        d["within_epsilon_star"] = self.within_epsilon_star
        d["bounds_hold"] = self.bounds_hold
        d["check_passed"] = self.check_passed
        return d


def run(config: EngineConfig, raise_on_budget: bool = True, history: list | None = None):
    """Run up to ``config.P`` steps; returns ``(state, certificate)``.

    Stops early on an exactly vanishing residual.  ``GammaExhausted`` propagates
    unless ``raise_on_budget`` is false, in which case the run stops and the
    certificate records the reason.  Every intermediate state is appended to
    ``history`` when a list is given.
    """
    state = initial_state(config)
    if history is not None:
        history.append(state)
    stop = "completed"
    for _ in range(config.P):
        if not state.Q:
            stop = "exact"
            break
        try:
            state = kam_step(state)
            if history is not None:
                history.append(state)
        except GammaExhausted:
            if raise_on_budget:
                raise
            stop = "gamma_exhausted"
            break
    else:
        if not state.Q:
            stop = "exact"
    return state, certificate(state, stop)


def certificate(state: IterationState, stop: str = "completed") -> ConvergenceCertificate:
    cfg = state.config
    hb = float(to_q(cfg.hbar))
    n0 = cfg.q0.l1_norm(hb)
    rho, sigma, tau = float(cfg.rho), float(cfg.sigma), float(cfg.tau)
    steps = state.step
    theo = tuple(theoretical_norm_bound(p, rho, sigma, tau, n0) for p in range(1, steps + 1))
    rec = tuple(recursion_norm_bound(p, rho, sigma, tau, n0) for p in range(1, steps + 1))
    lem = tuple(lemma_norm_bound(p, rho, sigma, tau, float(cfg.gamma), n0) for p in range(1, steps + 1))
    gam = (float(cfg.gamma),) + tuple(s.gamma_p for s in state.schedule)
    es = epsilon_star(rho, sigma, tau, float(cfg.gamma), n0, max(cfg.P, 1), cfg.K)
    return ConvergenceCertificate(
        float(to_q(cfg.epsilon)),
        es,
        n0,
        theo,
        rec,
        lem,
        tuple(state.residual_norm_history),
        gam,
        gam[-1] if gam[-1] > 0 else None,
        state.min_divisor,
        state.min_divisor_k,
        state.truncation.dropped,
        state.truncation.max_dropped,
        steps,
        stop,
    )


# ---------------------------------------------------------------------- evaluation
def predict_quantization(state: IterationState, alpha: Sequence[int], hbar, eps, eta: float | None = None,
                         with_remainder: bool = False) -> float:
    """``E + <omega_P, alpha> hbar + (hbar / 2) sum_j omega_P,j`` at the given ``(hbar, eps)``.

    With ``with_remainder`` the diagonal element of the Weyl-quantized accumulated
    remainder at ``alpha`` is added.  ``eta`` enforces ``|alpha| hbar < eta``.
    """
    hb = to_q(hbar)
    if eta is not None and sum(alpha) * float(hb) >= eta:
        raise LocalityViolation(f"|alpha| hbar = {sum(alpha) * float(hb):g} is outside the window {eta}")
    om = state.omega_at(eps, hb)
    val = state.energy_at(eps, hb) + sum((om[j] * (alpha[j] + Q(1, 2)) for j in range(len(om))), ZERO) * hb
    if with_remainder and state.remainders:
        R = state.remainder_symbol(eps)
        val += diagonal_polynomial(R).at_level(alpha, hb)
    return float(val)


def predict_quantization_exact(state: IterationState, alpha: Sequence[int], hbar, eps, with_remainder: bool = False):
    hb = to_q(hbar)
    om = state.omega_at(eps, hb)
    val = state.energy_at(eps, hb) + sum((om[j] * (alpha[j] + Q(1, 2)) for j in range(len(om))), ZERO) * hb
    if with_remainder and state.remainders:
        val += diagonal_polynomial(state.remainder_symbol(eps)).at_level(alpha, hb)
    return val


def remainder_eval(state: IterationState, I: Sequence[float], hbar, eps) -> float:
    """Accumulated remainder at actions ``I`` (angles zero), eps and hbar numeric."""
    if not state.remainders:
        return 0.0
    R = state.remainder_symbol(eps)
    om = state.frame.floats()
    z = [math.sqrt(2.0 * om[j] * float(I[j])) for j in range(len(om))]
    return R.evaluate_z(z, float(to_q(hbar))).real


def frequency_series(state: IterationState) -> list:
    """Per mode ``[(order, HbarPoly), ...]`` sorted by eps order."""
    return [sorted(s.items()) for s in state.omega]
