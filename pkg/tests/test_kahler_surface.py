import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cscklab.curves import TorusCurve, origami_curve
from cscklab.fibre import product_surface
from cscklab.grid import Form11, ProductGrid, i_del_delbar
from cscklab.kahler import (PositivityError, intersection_numbers, l2_norm, mean, model_form,
                            norm_Ck, norm_L2k, ricci_form, scal)


def test_flat_metric_has_zero_scalar_curvature():
    g = ProductGrid(TorusCurve((8, 8), 0.1 + 1.3j), TorusCurve((8, 8)))
    one = np.ones(g.shape)
    om = Form11(one, np.full(g.shape, 0.3 - 0.2j), 2 * one)
    assert np.abs(scal(om, g)).max() < 1e-12


def test_hyperbolic_product_scalar_curvature(product3):
    # Scal(ω_σ ⊕ r ω_Σ) = s0 + Scal(ω_Σ)/r exactly on a product
    for r in (4.0, 32.0):
        S = np.real(scal(product3.omega(r), product3.grid))
        assert np.allclose(S, -1 - 1 / r, atol=1e-10)


def test_positivity_threshold_is_enforced(twisted3):
    thr = twisted3.positivity_threshold
    assert thr > 0
    with pytest.raises(PositivityError, match="not positive"):
        twisted3.omega(0.5 * thr)
    assert twisted3.omega(2 * thr + 1).positive()


def test_ricci_form_refuses_non_positive_forms():
    g = ProductGrid(TorusCurve((8, 8)), TorusCurve((8, 8)))
    one = np.ones(g.shape)
    with pytest.raises(PositivityError):
        ricci_form(Form11(-one, 0j * one, one), g)


@settings(max_examples=6, deadline=None)
@given(st.sampled_from([8.0, 32.0, 128.0, 1000.0]))
def test_mean_scalar_curvature_is_cohomological(twisted3, r):
    num = intersection_numbers(twisted3, r=16.0)
    om = twisted3.omega(r)
    m = mean(np.real(scal(om, twisted3.grid)), om, twisted3.grid)
    assert m == pytest.approx(num.mean_scal(r), rel=1e-10)


def test_intersection_numbers_of_a_product(product3):
    num = intersection_numbers(product3, r=8.0)
    area = 4 * np.pi
    # A = area(F)·area(Σ), B = 0, C = Scal_Σ-term, D = s0 term
    assert num.A == pytest.approx(area * area, rel=1e-10)
    assert num.B == pytest.approx(0.0, abs=1e-10)
    assert num.C / num.A == pytest.approx(-1.0, rel=1e-10)
    assert num.D / num.A == pytest.approx(-1.0, rel=1e-10)


def test_model_form_matches_a_product_exactly(product3):
    h = model_form(product3, 64.0)
    om = product3.omega(64.0)
    assert np.abs(h.vv - om.vv).max() < 1e-12 and np.abs(h.hh - om.hh).max() < 1e-9


def test_norms_on_a_flat_torus():
    T = TorusCurve((16, 16))
    g = ProductGrid(T, T)
    one = np.ones(g.shape)
    om = Form11(one, 0j * one, one)
    f = np.cos(2 * np.pi * g.pullback_fibre(T.uv[0]))
    # ‖cos‖_{L²} = sqrt(1/2) on the unit square product; sup |cos| = 1
    assert l2_norm(f, om, g) == pytest.approx(np.sqrt(0.5), rel=1e-10)
    assert norm_Ck(f, om, g, 0) == pytest.approx(1.0)
    assert norm_L2k(f, om, g, 0) == pytest.approx(np.sqrt(0.5), rel=1e-10)
    # |∇cos(2πx)|² = 4π² sin²(2πx) for the metric dx² + dy² (ω = (i/2)dz∧dz̄)
    assert norm_L2k(f, om, g, 1) == pytest.approx(np.sqrt(0.5 + 2 * np.pi**2), rel=1e-8)
    with pytest.raises(ValueError):
        norm_Ck(f, om, g, 5)


def test_scal_of_potential_deformation_changes_only_by_exact_terms(rng):
    g = ProductGrid(TorusCurve((12, 12)), TorusCurve((12, 12)))
    one = np.ones(g.shape)
    om = Form11(one, 0j * one, one)
    x = g.pullback_fibre(g.fibre.uv[0])
    y = g.pullback_base(g.base.uv[1])
    phi = 0.002 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    om2 = om + i_del_delbar(phi, g)
    S = np.real(scal(om2, g))
    # total scalar curvature is topological (zero on a torus product)
    assert abs(mean(S, om2, g)) < 1e-12
    assert np.abs(S).max() > 1e-4


def test_origami_product_genus():
    s = product_surface(origami_curve(3), origami_curve(3), s0_base=-1)
    assert s.grid.fibre.genus == 2 and s.grid.base.genus == 2
