import numpy as np
import pytest

from cscklab.curves import TorusCurve, origami_curve
from cscklab.fibre import product_surface
from cscklab.ladder import build_ladder

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def twisted4():
    """Twisted product of two genus-3 origami surfaces (hyperbolic fibre and base)."""
    return product_surface(origami_curve(4), origami_curve(4), s0_base=-1, twist=0.05)


@pytest.fixture(scope="session")
def twisted3():
    return product_surface(origami_curve(3), origami_curve(3), s0_base=-1, twist=0.05)


@pytest.fixture(scope="session")
def product3():
    return product_surface(origami_curve(3), origami_curve(3), s0_base=-1)


@pytest.fixture(scope="session")
def ladders4(twisted4):
    return {n: build_ladder(twisted4, n) for n in range(4)}


@pytest.fixture(scope="session")
def flat_torus():
    T = TorusCurve((8, 8), 0.2 + 1.1j)
    return product_surface(T, T, s0_fibre=0, s0_base=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
