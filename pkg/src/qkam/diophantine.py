"""Diophantine conditions, resonant zones and the gamma budget of the iteration.

``|k|`` is always the l1 length ``|k_1| + ... + |k_l|`` and the small divisor is
``|<omega, k>|`` (``k`` and ``-k`` are equivalent).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scalars import Q, ZERO, to_q
from .symbols import Frame


@dataclass(frozen=True)
class FrequencyVector:
    """Frequencies in ``[0, 1]^l`` with diophantine constants ``(gamma, tau)``.

    ``verified_up_to`` is the cutoff ``K`` for which the inequality
    ``|<omega, k>| >= gamma |k|^-tau`` has been checked exhaustively
    (0 when unchecked).
    """

    omega: tuple
    gamma: float = 1.0
    tau: float = 1.0
    verified_up_to: int = 0

    def __post_init__(self):
        om = tuple(to_q(w) for w in self.omega)
        object.__setattr__(self, "omega", om)
        if any(w < 0 or w > 1 for w in om):
            raise ValueError("frequencies must lie in [0, 1]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tau > len(om) - 1:
            raise ValueError(f"tau must exceed l - 1 = {len(om) - 1} (got {self.tau})")

    @property
    def l(self) -> int:
        return len(self.omega)

    @property
    def frame(self) -> Frame:
        return Frame(self.omega)

    def floats(self) -> np.ndarray:
        return np.array([float(w) for w in self.omega])

    def verified(self, K_max: int) -> "FrequencyVector":
        """Return a copy with the condition checked up to ``K_max``; raise if it fails."""
        chk = check_diophantine(self.omega, self.gamma, self.tau, K_max)
        if not chk.passed:
            raise ValueError(
                f"diophantine condition fails at k={chk.worst_k}: margin {chk.worst_margin:.6g} < gamma {self.gamma}"
            )
        return FrequencyVector(self.omega, self.gamma, self.tau, K_max)


def golden_omega(tol: float = 1e-12) -> tuple:
    """Rational approximation ``F_n / F_{n+1}`` of ``(sqrt 5 - 1) / 2`` and its error bound.

    Consecutive convergents bracket the limit, so ``1 / (F_{n+1} F_{n+2})`` bounds the error.
    """
    a, b = 1, 2
    while True:
        c = a + b
        err = 1.0 / (b * c)
        if err < tol:
            return Q(a, b), err
        a, b = b, c


def golden_frequency(gamma: float = 0.2, tau: float = 1.5, tol: float = 1e-12) -> FrequencyVector:
    """``(1, golden)`` at l = 2."""
    g, _ = golden_omega(tol)
    return FrequencyVector((Q(1), g), gamma, tau)


def lattice_vectors(l: int, K: int, K_min: int = 1):
    """All integer vectors with ``K_min <= |k| <= K`` in deterministic order."""
    for n in range(K_min, K + 1):
        for k in itertools.product(range(-n, n + 1), repeat=l):
            if sum(abs(c) for c in k) == n:
                yield k


def shell_count(l: int, n: int) -> int:
    """Number of integer vectors in dimension ``l`` with l1 length exactly ``n``."""
    if n == 0:
        return 1
    return sum(2**j * math.comb(l, j) * math.comb(n - 1, j - 1) for j in range(1, min(l, n) + 1))


@dataclass(frozen=True)
class DiophantineCheck:
    passed: bool
    worst_k: tuple | None
    worst_margin: float
    rows: tuple = ()  # (k, divisor, margin) for the scanned vectors when requested


def check_diophantine(omega, gamma, tau, K_max: int, keep_rows: bool = False) -> DiophantineCheck:
    """Exhaustive scan of ``0 < |k| <= K_max`` for the minimal ``|<omega, k>| |k|^tau``.

    Exact zero divisors (rational dependencies) give margin 0 and fail for any gamma.
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    om = tuple(to_q(w) for w in getattr(omega, "omega", omega))
    l = len(om)
    worst_k, worst = None, math.inf
    rows = []
    seen = set()
    for k in lattice_vectors(l, K_max):
        if tuple(-c for c in k) in seen:
            continue
        seen.add(k)
        d = sum((om[j] * k[j] for j in range(l)), ZERO)
        n = sum(abs(c) for c in k)
        margin = abs(float(d)) * n ** float(tau)
        if keep_rows:
            rows.append((k, float(d), margin))
        if margin < worst:
            worst, worst_k = margin, k
    return DiophantineCheck(worst >= float(gamma), worst_k, worst, tuple(rows))


@dataclass(frozen=True)
class ZoneMeasure:
    k: tuple
    alpha: float
    bound: float
    mc_estimate: float
    stderr: float
    n_samples: int


def _mc_shards(n_samples: int, n_shards: int, seed: int):
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_shards)
    base, extra = divmod(n_samples, n_shards)
    return [(np.random.default_rng(c), base + (1 if i < extra else 0)) for i, c in enumerate(children)]


def zone_measure(k, alpha: float, n_samples: int = 100_000, seed: int = 0, n_shards: int = 4) -> ZoneMeasure:
    """Bound ``4 alpha / |k|`` and a Monte-Carlo estimate of ``|{w in [0,1]^l : |<w,k>| <= alpha}|``.

    Sampling is split into independently seeded shards merged in order, so the
    estimate depends only on ``(n_samples, seed, n_shards)``.
    """
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValueError("k must be nonzero")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    hits = 0
    for rng, n in _mc_shards(n_samples, n_shards, seed):
        pts = rng.random((n, k.size))
        hits += int(np.count_nonzero(np.abs(pts @ k) <= alpha))
    p = hits / n_samples
    stderr = math.sqrt(max(p * (1 - p), 0.0) / n_samples)
    bound = 4 * alpha / float(np.abs(k).sum())
    return ZoneMeasure(tuple(int(c) for c in k), float(alpha), bound, p, stderr, n_samples)


@dataclass(frozen=True)
class ExcisionBound:
    """Lattice sum of zone bounds over ``|k| >= K`` with a certified tail."""

    K: int
    K_big: int
    partial_sum: float
    tail_bound: float
    fitted_d: float
    fitted_c: float

    @property
    def total(self) -> float:
        return self.partial_sum + self.tail_bound


def _shell_terms(K: int, K_big: int, gamma_1: float, tau: float, l: int) -> float:
    # sum over shells: c_l(n) zones of bound 4 * (gamma_1 / n^tau) / n
    return math.fsum(shell_count(l, n) * 4.0 * gamma_1 * n ** (-tau - 1.0) for n in range(K, K_big + 1))


def _tail(K_big: int, gamma_1: float, tau: float, l: int) -> float:
    # integral bound for the decreasing summand beyond K_big
    if l == 1:
        return 8.0 * gamma_1 * K_big ** (-tau) / tau
    if l == 2:
        return 16.0 * gamma_1 * K_big ** (1.0 - tau) / (tau - 1.0)
    # c_l(n) <= (3^l - 1) n^(l-1)
    return 4.0 * gamma_1 * (3**l - 1) * K_big ** (l - 1.0 - tau) / (tau - l + 1.0)


def excised_measure_bound(K: int, gamma_1: float, tau: float, l: int, K_big: int | None = None) -> ExcisionBound:
    """Upper bound on ``|union_{|k| >= K} T_k(gamma_1 / |k|^tau)|``.

    The finite part runs over ``K <= |k| <= K_big``; the rest is covered by an
    integral tail bound.  The reported ``(fitted_c, fitted_d)`` fit
    ``total(K') ~ fitted_c * gamma_1 / K'^fitted_d`` over ``K' in {K, 2K, 4K, 8K}``.
    """
    if not tau > l - 1:
        raise ValueError(f"tau must exceed l - 1 = {l - 1}")
    if K < 1:
        raise ValueError("K must be >= 1")
    K_big = max(K_big or 50 * K, K)
    partial = _shell_terms(K, K_big, gamma_1, tau, l)
    tail = _tail(K_big, gamma_1, tau, l)
    if gamma_1 == 0:
        return ExcisionBound(K, K_big, 0.0, 0.0, float("nan"), float("nan"))
    Ks = [K * 2**i for i in range(4)]
    tots = []
    for Kp in Ks:
        Kb = max(K_big, 50 * Kp)
        tots.append(_shell_terms(Kp, Kb, gamma_1, tau, l) + _tail(Kb, gamma_1, tau, l))
    slope, icpt = np.polyfit(np.log(Ks), np.log(np.asarray(tots) / gamma_1), 1)
    return ExcisionBound(K, K_big, partial, tail, float(-slope), float(math.exp(icpt)))


@dataclass(frozen=True)
class ExcisionReport:
    K: int
    zones: tuple  # (k, alpha_k, bound)
    total_excised_bound: float
    mc_estimate: float
    stderr: float


def excision_report(
    K: int,
    gamma_1: float,
    tau: float,
    l: int,
    K_big: int = 40,
    n_samples: int = 100_000,
    seed: int = 0,
    n_shards: int = 4,
    chunk: int = 4096,
) -> ExcisionReport:
    """Zones ``T_k(gamma_1 / |k|^tau)`` for ``K <= |k| <= K_big`` and an MC estimate of their union.

    The bound includes the tail beyond ``K_big`` so it dominates the whole union.
    """
    ks = [k for k in lattice_vectors(l, K_big, K) if k > tuple(-c for c in k)]
    zones = []
    for k in ks:
        n = sum(abs(c) for c in k)
        a = gamma_1 / n**tau
        # k and -k cut the same set; count both as in the lattice sum
        zones.append((k, a, 4 * a / n))
    eb = excised_measure_bound(K, gamma_1, tau, l, K_big)
    karr = np.array(ks, dtype=float).reshape(-1, l)
    alph = np.array([z[1] for z in zones])
    hits = 0
    for rng, n in _mc_shards(n_samples, n_shards, seed):
        done = 0
        while done < n:
            m = min(chunk, n - done)
            pts = rng.random((m, l))
            inside = np.abs(pts @ karr.T) <= alph
            hits += int(np.count_nonzero(inside.any(axis=1)))
            done += m
    p = hits / n_samples
    stderr = math.sqrt(max(p * (1 - p), 0.0) / n_samples)
    return ExcisionReport(K, tuple(zones), eb.total, p, stderr)


@dataclass(frozen=True)
class GammaSequence:
    gammas: tuple  # gamma_0 .. gamma_P
    gamma_infinity: float | None
    failed_at: int | None

    @property
    def admissible(self) -> bool:
        return self.failed_at is None


class GammaExhausted(RuntimeError):
    """The diophantine budget ``gamma_p`` reached zero."""

    def __init__(self, p: int, gamma_p: float):
        super().__init__(f"diophantine budget exhausted at step {p}: gamma_p = {gamma_p:.6g}")
        self.p = p
        self.gamma_p = gamma_p


def cutoff(p: int, K: int, lag: int = 1) -> int:
    """Cutoff used in the budget update of step ``p``: ``K_{p-lag}`` with ``K_j = jK`` and ``K_0 = K``."""
    return max(p - lag, 1) * K


def gamma_update(gamma_prev: float, eps_p: float, tau: float, K: int, p: int, lag: int = 1) -> float:
    return gamma_prev - eps_p * (1.0 + cutoff(p, K, lag) ** tau)


def gamma_sequence(gamma: float, tau: float, K: int, eps_ladder: Sequence[float], lag: int = 1) -> GammaSequence:
    """``gamma_p = gamma_{p-1} - eps_p (1 + K_{p-1}^tau)`` for ``p = 1 .. len(eps_ladder)``.

    ``eps_ladder[p-1]`` is ``eps_p``.  ``lag=0`` uses ``K_p`` in place of ``K_{p-1}``.
    Stops at the first ``p`` with ``gamma_p <= 0``.
    """
    gs = [float(gamma)]
    for p, e in enumerate(eps_ladder, start=1):
        g = gamma_update(gs[-1], float(e), tau, K, p, lag)
        gs.append(g)
        if g <= 0:
            return GammaSequence(tuple(gs), None, p)
    return GammaSequence(tuple(gs), gs[-1], None)
