import os

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from qkam.diophantine import golden_omega
from qkam.scalars import Q
from qkam.symbols import Frame, PolySymbol

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN = golden_omega(1e-12)[0]
UNIT = Frame((1,))
GOLDEN2 = Frame((1, GOLDEN))


rationals = st.builds(lambda a, b: Q(a, b), st.integers(-5, 5), st.integers(1, 4))


@st.composite
def real_symbols(draw, frame=None, max_degree=4, min_degree=0, max_terms=4, cap=40, hbar=False):
    """Random real symbols: each drawn monomial is paired with its conjugate."""
    if frame is None:
        frame = draw(st.sampled_from([UNIT, GOLDEN2]))
    l = frame.l
    n_terms = draw(st.integers(0, max_terms))
    out = PolySymbol.zero(frame, cap)
    for _ in range(n_terms):
        m = tuple(draw(st.integers(0, max_degree)) for _ in range(l))
        n = tuple(draw(st.integers(0, max_degree)) for _ in range(l))
        deg = sum(m) + sum(n)
        if deg > max_degree or deg < min_degree:
            continue
        h = draw(st.integers(0, 1)) if hbar else 0
        re, im = draw(rationals), draw(rationals)
        if m == n:
            im = Q(0)
        t = PolySymbol.monomial(frame, m, n, (re, im), h, cap)
        if m != n:
            t = t + PolySymbol.monomial(frame, n, m, (re, -im), h, cap)
        out = out + t
    return out



# ---------------------------------------------------------------------- acceptance report
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
