"""Diophantine scans, resonant-zone measures, excision bounds and the gamma budget."""
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Polygon, box

from qkam.diophantine import (
    FrequencyVector,
    check_diophantine,
    excised_measure_bound,
    excision_report,
    gamma_sequence,
    golden_frequency,
    golden_omega,
    lattice_vectors,
    shell_count,
    zone_measure,
)
from qkam.scalars import Q

FIB = {0, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89}


def zone_area(k, alpha) -> float:
    """Exact area of {w in [0,1]^2 : |<k, w>| <= alpha} by polygon clipping."""
    k1, k2 = (float(c) for c in k)
    big = 10.0
    if abs(k2) >= abs(k1):
        # band between the lines w2 = (+-alpha - k1 w1) / k2
        def line(c, x):
            return (c - k1 * x) / k2

        band = Polygon([(-big, line(-alpha, -big)), (big, line(-alpha, big)),
                        (big, line(alpha, big)), (-big, line(alpha, -big))])
    else:
        def line(c, y):
            return (c - k2 * y) / k1

        band = Polygon([(line(-alpha, -big), -big), (line(-alpha, big), big),
                        (line(alpha, big), big), (line(alpha, -big), -big)])
    return band.buffer(0).intersection(box(0, 0, 1, 1)).area


# ---------------------------------------------------------------------- scans
class TestCheck:
    def test_one_mode(self):
        chk = check_diophantine((1,), 1.0, 1.5, 10)
        assert chk.worst_margin == pytest.approx(1.0)
        assert chk.worst_k in ((1,), (-1,))
        assert chk.passed
        assert not check_diophantine((1,), 1.01, 1.5, 10).passed

    def test_golden_worst_is_fibonacci_pair(self):
        g, err = golden_omega(1e-12)
        assert err < 1e-12
        assert abs(float(g) - (math.sqrt(5) - 1) / 2) <= err
        chk = check_diophantine((1, g), 0.1, 1.5, 50)
        a, b = sorted(abs(c) for c in chk.worst_k)
        assert a in FIB and b in FIB and a < b
        # the margin grows along the convergent pairs, so the first one, k = (0, 1), is worst
        assert chk.worst_margin == pytest.approx(float(g))
        assert check_diophantine((1, g), chk.worst_margin, 1.5, 50).passed
        assert not check_diophantine((1, g), chk.worst_margin * 1.001, 1.5, 50).passed

    def test_rational_dependency(self):
        chk = check_diophantine((Q(1, 2), Q(1, 4)), 1e-9, 1.5, 5)
        assert not chk.passed
        assert chk.worst_margin == 0.0
        assert chk.worst_k in ((1, -2), (-1, 2))

    def test_rows(self):
        chk = check_diophantine((1, Q(1, 3)), 0.01, 1.5, 3, keep_rows=True)
        # one representative per +-k pair
        assert len(chk.rows) == sum(shell_count(2, n) for n in range(1, 4)) // 2

    def test_frequency_vector_validation(self):
        with pytest.raises(ValueError, match="l - 1"):
            FrequencyVector((Q(1, 2), Q(1, 3)), 0.1, 0.5)
        with pytest.raises(ValueError):
            FrequencyVector((Q(3, 2),), 0.1, 1.0)
        fv = golden_frequency(0.2, 1.5).verified(30)
        assert fv.verified_up_to == 30
        with pytest.raises(ValueError, match="fails"):
            golden_frequency(0.7, 1.5).verified(30)


@given(st.integers(1, 6), st.integers(1, 30), st.floats(0.01, 0.5))
def test_check_is_monotone_in_cutoff(n, K, gamma):
    om = (1, Q(n, 7))
    big = check_diophantine(om, gamma, 1.5, K)
    if big.passed:
        for Kp in range(1, K):
            assert check_diophantine(om, gamma, 1.5, Kp).passed


@given(st.integers(1, 4), st.integers(1, 12))
def test_shell_count_matches_enumeration(l, n):
    if l > 3 and n > 8:
        return
    assert shell_count(l, n) == sum(1 for _ in lattice_vectors(l, n, n))


# ---------------------------------------------------------------------- zones
class TestZones:
    def test_axis_slab(self):
        z = zone_measure((1, 0), 0.1)
        assert abs(z.mc_estimate - 0.1) <= 3 * z.stderr
        assert z.bound == pytest.approx(0.4)

    def test_diagonal_against_exact_area(self):
        z = zone_measure((1, 1), 0.05)
        area = zone_area((1, 1), 0.05)
        assert area == pytest.approx(0.05**2 / 2)
        assert abs(z.mc_estimate - area) <= 4 * max(z.stderr, 1e-4)
        assert z.mc_estimate <= 0.1

    def test_shrinks_with_alpha(self):
        vals = [zone_measure((2, -3), a, 50_000).mc_estimate for a in (0.2, 0.1, 0.05, 0.01, 0.001)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-3

    def test_seeded_determinism(self):
        assert zone_measure((3, 1), 0.05, seed=7) == zone_measure((3, 1), 0.05, seed=7)


@given(st.integers(-20, 20), st.integers(-20, 20), st.sampled_from([0.1, 0.01, 0.003]))
def test_zone_estimate_matches_exact_area(k1, k2, alpha):
    if k1 == 0 and k2 == 0:
        return
    z = zone_measure((k1, k2), alpha, 20_000, seed=abs(k1) * 41 + abs(k2))
    area = zone_area((k1, k2), alpha)
    assert area <= 4 * alpha / (abs(k1) + abs(k2)) + 1e-12
    # binomial stderr floor for tiny areas
    assert abs(z.mc_estimate - area) <= 5 * math.sqrt(max(area * (1 - area), 1e-5) / 20_000)


# ---------------------------------------------------------------------- excision
def lattice_sum_oracle(K: int, K_big: int, gamma_1: float, tau: float) -> float:
    """Direct two-dimensional lattice sum of the zone bounds 4 gamma_1 / |k|^(tau+1)."""
    s = 0.0
    for k1 in range(-K_big, K_big + 1):
        for k2 in range(-K_big, K_big + 1):
            n = abs(k1) + abs(k2)
            if K <= n <= K_big:
                s += 4 * gamma_1 / n ** (tau + 1)
    return s


class TestExcision:
    def test_zero_budget(self):
        assert excised_measure_bound(5, 0.0, 1.5, 2).total == 0.0

    def test_lattice_oracle_and_tail_certificate(self):
        eb = excised_measure_bound(10, 0.1, 1.5, 2, K_big=200)
        assert eb.partial_sum == pytest.approx(lattice_sum_oracle(10, 200, 0.1, 1.5), rel=1e-12)
        # shells beyond the cutoff, summed far out, stay under the certified tail
        far = math.fsum(4 * n * 4 * 0.1 * n ** (-2.5) for n in range(201, 400_001))
        assert far <= eb.tail_bound
        # frozen value of the certified bound
        assert eb.total == pytest.approx(eb.partial_sum + 16 * 0.1 * 200 ** -0.5 / 0.5)

    def test_fitted_exponent(self):
        eb = excised_measure_bound(10, 0.1, 1.5, 2)
        assert eb.fitted_d == pytest.approx(0.5, abs=0.05)

    def test_union_below_bound(self):
        rep = excision_report(5, 0.05, 1.5, 2, K_big=20, n_samples=20_000)
        assert rep.mc_estimate <= rep.total_excised_bound


@given(st.integers(1, 40), st.floats(0.01, 1.0), st.sampled_from([1.5, 2.0, 3.0]), st.sampled_from([1, 2, 3]))
def test_excision_monotone(K, g, tau, l):
    if not tau > l - 1:
        return
    a = excised_measure_bound(K, g, tau, l, K_big=60)
    b = excised_measure_bound(2 * K, g, tau, l, K_big=60)
    c = excised_measure_bound(K, 2 * g, tau, l, K_big=60)
    assert b.total < a.total
    assert c.total > a.total


# ---------------------------------------------------------------------- gamma budget
class TestGammaSequence:
    def test_zero_ladder(self):
        gs = gamma_sequence(0.2, 1.5, 5, [0.0] * 4)
        assert gs.gammas == (0.2,) * 5 and gs.gamma_infinity == 0.2

    def test_squared_ladder_sum(self):
        eps = [1e-3 ** (2 ** (p - 1)) for p in range(1, 5)]
        gs = gamma_sequence(0.2, 1.5, 5, eps, lag=0)
        expected = 0.2 - sum(e * (1 + (p * 5) ** 1.5) for p, e in enumerate(eps, start=1))
        assert gs.gamma_infinity == pytest.approx(expected, rel=1e-14)

    def test_default_lag_uses_previous_cutoff(self):
        eps = [1e-3, 1e-6]
        gs = gamma_sequence(0.2, 1.5, 5, eps)
        assert gs.gammas[1] == pytest.approx(0.2 - 1e-3 * (1 + 5**1.5))
        assert gs.gammas[2] == pytest.approx(gs.gammas[1] - 1e-6 * (1 + 5**1.5))

    def test_exhausted_at_first_step(self):
        gs = gamma_sequence(0.2, 1.5, 5, [1.0, 1e-3])
        assert gs.failed_at == 1 and gs.gamma_infinity is None and not gs.admissible
