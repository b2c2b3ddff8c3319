"""Normal-form iteration: schedule, bounds, exact examples and perturbation-theory oracles."""
import math

import numpy as np
import pytest
import sympy as sp
from conftest import GOLDEN2, UNIT
from scipy import integrate, optimize

from qkam.diophantine import GammaExhausted
from qkam.engine import (
    EngineConfig,
    InvalidPerturbation,
    TruncationOverflow,
    epsilon_star,
    frequency_series,
    initial_state,
    kam_step,
    lemma_norm_bound,
    predict_quantization_exact,
    recursion_norm_bound,
    remainder_eval,
    residual_at,
    run,
    schedule,
    theoretical_norm_bound,
)
from qkam.scalars import Q
from qkam.symbols import PolySymbol, angular_decomposition


def sym(expr, frame=UNIT, cap=12):
    return PolySymbol.from_expression(expr, frame, cap)


def cfg(expr, P=2, frame=UNIT, **kw):
    kw.setdefault("gamma", 1.0)
    kw.setdefault("epsilon", Q(1, 1000))
    return EngineConfig(frame.omega, sym(expr, frame, kw.get("degree_cap", 12)), P=P, **kw)


# Taylor coefficients of sqrt(1 + 2 eps)
SQRT_1_2EPS = [1, 1, Q(-1, 2), Q(1, 2), Q(-5, 8), Q(7, 8), Q(-21, 16), Q(33, 16)]


# ---------------------------------------------------------------------- schedule and bounds
class TestSchedule:
    def test_first_two_steps(self):
        s1 = schedule(1, 1, 1, 0.1, 5, 0.0, 1.0, 1.5)
        s2 = schedule(2, 1, 1, 0.1, 5, 0.0, 1.0, 1.5)
        assert (s1.sigma_p, s1.s_p, s1.rho_p, s1.r_p, s1.K_p) == (Q(1, 4), Q(3, 4), Q(1, 4), Q(3, 4), 5)
        assert (s2.sigma_p, s2.s_p, s2.K_p) == (Q(1, 16), Q(11, 16), 10)

    def test_zero_epsilon_keeps_gamma(self):
        assert schedule(3, 1, 1, 0.1, 5, 0.0, 1.0, 1.5).gamma_p == 0.1

    def test_gamma_update(self):
        s = schedule(2, 1, 1, 0.1, 5, 1e-2, 0.5, 1.5)
        # eps_2 = eps^2 ||q_1||, charged at the previous cutoff K_1 = 5
        assert s.eps_p == pytest.approx(0.5e-4)
        assert s.gamma_p == pytest.approx(0.1 - 0.5e-4 * (1 + 5**1.5))

    def test_exhaustion(self):
        with pytest.raises(GammaExhausted):
            schedule(1, 1, 1, 0.01, 5, 0.1, 1.0, 1.5)

    def test_sigma_budget_never_spent(self):
        s = schedule(50, 1, 1, 0.1, 5, 0.0, 1.0, 1.5)
        # sum 1/(4j^2) < pi^2/24, so the strip never closes
        assert float(s.s_p) > 1 - math.pi**2 / 24 > 0


class TestBounds:
    def test_displayed_bound_value(self):
        # (4/1)^3 (4/1)^2 0.1^2
        assert theoretical_norm_bound(1, 1, 1, 1.5, 0.1) == pytest.approx(10.24)
        assert theoretical_norm_bound(3, 1, 1, 1.5, 0.0) == 0.0

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_recursion_structure(self, p):
        # the displayed bound drops the product of earlier step factors; the recursion keeps them
        for rho, sigma in ((1, 1), (0.5, 2)):
            rec = recursion_norm_bound(p, rho, sigma, 1.5, 0.3)
            if p == 1:
                assert rec == pytest.approx(theoretical_norm_bound(1, rho, sigma, 1.5, 0.3))
            prev = recursion_norm_bound(p - 1, rho, sigma, 1.5, 0.3) if p > 1 else 0.3
            factor = (4 * p * p / rho) ** 3 * (4 * p * p / sigma) ** 2
            assert rec == pytest.approx(factor * prev**2, rel=1e-12)

    def test_lemma_bound_first_step(self):
        cpsi = (1.5 / math.e) ** 1.5 / 0.1
        expected = 2 * cpsi / math.e**2 / (0.25**1.5 * 0.25**2) * 0.3**2
        assert lemma_norm_bound(1, 1, 1, 1.5, 0.1, 0.3) == pytest.approx(expected, rel=1e-12)

    def test_epsilon_star(self):
        es = epsilon_star(1, 1, 1.5, 0.1, 1.0, 3, 5)
        assert 0 < es < 1
        assert epsilon_star(1, 1, 1.5, 0.1, 0.0, 3) == math.inf
        assert epsilon_star(1, 1, 1.5, 0.2, 1.0, 3, 5) >= es
        assert epsilon_star(1, 1, 1.5, 0.1, 2.0, 3, 5) <= es


# ---------------------------------------------------------------------- exact examples
class TestExactExamples:
    def test_action_squared_terminates(self):
        q0 = PolySymbol.action(UNIT, 0, 12) ** 2
        st, cert = run(EngineConfig((1,), q0, P=3, gamma=1.0))
        assert cert.steps == 1 and cert.stop_reason == "exact"
        assert not st.Q and st.remainders[0] == {1: q0}

    def test_first_step_frequency_shift(self):
        st, _ = run(cfg("x**2", P=1))
        assert frequency_series(st) == [[(0, 1), (1, 1)]]

    def test_rescaled_oscillator_frequency(self):
        st, cert = run(cfg("x**2", P=3))
        ser = dict(frequency_series(st)[0])
        # Q_3 = O(eps^8), so the frequency is exact through order 7
        assert [ser[e].evaluate(0) for e in range(8)] == SQRT_1_2EPS
        assert st.remainders == () and not st.energy
        assert set(st.Q) == {8}
        assert remainder_eval(st, [0.7], 0.05, 0.01) == 0.0

    def test_quartic_first_normal_form(self):
        st, _ = run(cfg("x**4", P=1))
        I = PolySymbol.action(UNIT, 0, 12)
        # average of x^4 over the flow: (3/2) I^2, kept as remainder in symbol ordering
        assert st.remainders == ({1: (I * I).scale(Q(3, 2))},)
        assert frequency_series(st) == [[(0, 1)]]

    def test_zero_epsilon(self):
        st, cert = run(cfg("x**4", P=2, epsilon=0))
        assert cert.gamma_history == (1.0, 1.0, 1.0)
        assert residual_at(st, 0, Q(1, 20)) == 0.0
        assert st.omega_at(0, Q(1, 20)) == [1]
        assert set(st.Q) == {4}

    def test_residual_orders_double(self):
        hist = []
        run(cfg("x**4 + x**3", P=3, epsilon=Q(1, 10**4)), history=hist)
        assert [min(s.Q) for s in hist] == [1, 2, 4, 8]
        res = [residual_at(s, Q(1, 10**4), 0) for s in hist]
        assert all(a > b for a, b in zip(res, res[1:]))

    def test_remainder_vanishes_to_second_order_in_actions(self):
        st, _ = run(cfg("x**4 + x**3", P=2))
        Is = np.array([1e-3, 2e-3, 4e-3])
        vals = np.array([abs(remainder_eval(st, [I], 0.0, 0.01)) for I in Is])
        assert remainder_eval(st, [0.0], 0.0, 0.01) == 0.0
        slope = np.polyfit(np.log(Is), np.log(vals), 1)[0]
        assert slope >= 1.9


# ---------------------------------------------------------------------- oracles
def rayleigh_schrodinger(n: int, hbar, width: int = 8):
    """Energy coefficients through third order for p0 + eps x^4 with x = sqrt(hbar/2)(a + a^+)."""
    M = n + 3 * width // 2 + 4
    a = sp.zeros(M, M)
    for k in range(1, M):
        a[k - 1, k] = sp.sqrt(k)
    V = ((sp.sqrt(hbar / 2) * (a + a.T)) ** 4).applyfunc(sp.nsimplify)
    E = [hbar * (k + sp.Rational(1, 2)) for k in range(M)]
    ms = [m for m in range(M) if m != n and abs(m - n) <= width]
    e1 = V[n, n]
    e2 = sum(V[m, n] ** 2 / (E[n] - E[m]) for m in ms)
    e3 = sum(V[n, m] * V[m, k] * V[k, n] / ((E[n] - E[m]) * (E[n] - E[k])) for m in ms for k in ms)
    e3 -= e1 * sum(V[n, m] ** 2 / (E[n] - E[m]) ** 2 for m in ms)
    return [sp.nsimplify(sp.simplify(c)) for c in (E[n], e1, e2, e3)]


def eps_coefficients(f, degree: int):
    """Exact coefficients of a rational polynomial in eps from samples at rational points."""
    e = sp.Symbol("e")
    pts = [Q(1, 1000 * j) for j in range(1, degree + 3)]
    data = [(sp.Rational(int(p.numerator), int(p.denominator)), sp.Rational(int(v.numerator), int(v.denominator)))
            for p, v in ((p, f(p)) for p in pts)]
    return sp.Poly(sp.interpolate(data, e), e).all_coeffs()[::-1]


@pytest.mark.parametrize("n", [0, 2])
def test_quantum_levels_match_rayleigh_schrodinger(n):
    hb = Q(1, 20)
    st, _ = run(cfg("x**4", P=2, mode="quantum", hbar=hb))
    coeffs = eps_coefficients(lambda e: predict_quantization_exact(st, (n,), hb, e, with_remainder=True), 4)
    assert coeffs[:4] == rayleigh_schrodinger(n, sp.Rational(1, 20))


def classical_action(E: float, eps: float) -> float:
    """Action of the level set p^2/2 + x^2/2 + eps x^4 = E by quadrature."""
    xm = optimize.brentq(lambda x: x * x / 2 + eps * x**4 - E, 0, 10)
    return 2 / math.pi * integrate.quad(lambda x: math.sqrt(max(2 * (E - x * x / 2 - eps * x**4), 0.0)), 0, xm,
                                        epsabs=1e-14, epsrel=1e-14)[0]


def test_classical_normal_form_matches_action_integral():
    st, _ = run(cfg("x**4", P=2), raise_on_budget=False)

    def h_nf(I, eps):
        N = angular_decomposition(st.remainder_symbol(Q(eps))).get((0,))
        om = float(st.omega_at(Q(eps), 0)[0])
        return om * I + N.evaluate_z([math.sqrt(2 * I)]).real

    errs = []
    for eps in (0.02, 0.01, 0.005):
        errs.append(abs(h_nf(classical_action(0.5, eps), eps) - 0.5))
    # the normal form is exact through eps^3, so halving eps divides the error by about 16
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(r > 3.7 for r in rates), rates


# ---------------------------------------------------------------------- modes
def _classical_series(series):
    out = {}
    for e, v in series.items():
        c = v.classical()
        if (c != 0) if not hasattr(c, "is_zero") else not c.is_zero():
            out[e] = c
    return out


@pytest.mark.parametrize("frame,expr,gamma", [
    (UNIT, "x**2 + x**4 + x**3", 1.0),
    (GOLDEN2, "x1*x2/10 + x1**2*x2**2/10 + x1**4/10", 0.2),
])
def test_quantum_hbar_free_part_is_classical(frame, expr, gamma):
    kw = dict(P=2, frame=frame, gamma=gamma, epsilon=Q(1, 10**5), degree_cap=8)
    a, _ = run(cfg(expr, mode="classical", **kw))
    b, _ = run(cfg(expr, mode="quantum", **kw))
    assert _classical_series(a.Q) == _classical_series(b.Q)
    for (_, wa), (_, wb) in zip(a.generators, b.generators):
        assert _classical_series(wa) == _classical_series(wb)
    assert [_classical_series(s) for s in a.omega] == [_classical_series(s) for s in b.omega]
    assert _classical_series(a.energy) == _classical_series(b.energy)


# ---------------------------------------------------------------------- errors and bookkeeping
class TestErrors:
    def test_linear_term_rejected(self):
        with pytest.raises(InvalidPerturbation, match="second order"):
            initial_state(cfg("x**2 + x"))

    def test_frame_mismatch(self):
        with pytest.raises(InvalidPerturbation, match="frame"):
            initial_state(EngineConfig((1, Q(1, 2)), sym("x**2")))

    def test_truncation_is_recorded(self):
        st, cert = run(cfg("x**4 + x**3", P=2, degree_cap=6))
        assert cert.truncation_dropped > 0 and cert.truncation_max > 0
        assert st.truncation.flag

    def test_overflow(self):
        with pytest.raises(TruncationOverflow, match="step 1"):
            run(cfg("x**4 + x**3", P=2, degree_cap=6, overflow_fraction=1e-12))

    def test_budget(self):
        with pytest.raises(GammaExhausted):
            run(cfg("x**4", gamma=0.1, epsilon=Q(1, 10)))
        _, cert = run(cfg("x**4", gamma=0.1, epsilon=Q(1, 10)), raise_on_budget=False)
        assert cert.stop_reason == "gamma_exhausted"

    def test_step_after_termination_is_idempotent(self):
        st, _ = run(EngineConfig((1,), PolySymbol.action(UNIT, 0, 12) ** 2, P=1, gamma=1.0))
        assert kam_step(st).terminated


def test_certificate_serializes():
    _, cert = run(cfg("x**4", P=2, epsilon=Q(1, 10**5)))
    d = cert.to_dict()
    assert d["steps"] == 2 and d["within_epsilon_star"] and d["check_passed"]
    assert len(d["measured_residuals"]) == 2
