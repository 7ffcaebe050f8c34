import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cscklab.curves import MeshCurve, TorusCurve, origami_curve, voxel_surface
from cscklab.fibre import (GeometryInputError, alpha_integral, compute_xi_eta, product_surface,
                           solve_base_equation, theta_mean_identity, twist_form, uniformize_fibre)
from cscklab.grid import ProductGrid, exterior_derivative_norm
from cscklab.kahler import curve_scal


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_uniformized_origami_is_hyperbolic_with_gauss_bonnet_area(seed):
    C = origami_curve(3)
    rng = np.random.default_rng(seed)
    w = np.exp(0.3 * rng.uniform(-1, 1, C.n))
    res = uniformize_fibre(C, w, s0=-1.0)
    g = res.metric(w)
    assert np.abs(curve_scal(C, g) + 1).max() < 1e-9
    # Gauss-Bonnet: area = 2πχ/s0 = 4π in genus 2
    assert float(C.mass @ g) == pytest.approx(4 * np.pi, rel=1e-10)


def test_uniformization_depends_only_on_the_conformal_class(rng):
    C = origami_curve(4)
    a = uniformize_fibre(C, np.ones(C.n)).metric(np.ones(C.n))
    w = np.exp(0.2 * rng.standard_normal(C.n))
    b = uniformize_fibre(C, w).metric(w)
    assert np.allclose(a, b, rtol=1e-8)


def test_flat_torus_uniformization_keeps_the_area(rng):
    T = TorusCurve((12, 12), 0.3 + 1.1j)
    x, y = T.uv
    w = np.exp(0.2 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)).ravel()
    res = uniformize_fibre(T, w, s0=0.0)
    g = res.metric(w)
    assert float(T.mass @ g) == pytest.approx(float(T.mass @ w), rel=1e-9)
    # the flat representative is constant
    assert np.ptp(g) < 1e-8 * g.mean()


@pytest.mark.parametrize("curve,s0", [(lambda: origami_curve(3), 1.0),
                                      (lambda: origami_curve(3), 0.0),
                                      (lambda: TorusCurve((8, 8)), -1.0)])
def test_wrong_sign_target_curvature_is_rejected(curve, s0):
    with pytest.raises(GeometryInputError):
        uniformize_fibre(curve(), s0=s0)


def test_twist_needs_global_frames():
    C = MeshCurve.from_embedding(*voxel_surface(2))
    assert not C.global_frame
    with pytest.raises(GeometryInputError):
        twist_form(ProductGrid(C, origami_curve(3)), 0.05)
    with pytest.raises(GeometryInputError):
        product_surface(C, origami_curve(3), s0_base=-1, twist=0.05)


def test_omega0_is_closed_and_fibrewise_hyperbolic(twisted3):
    g = twisted3.grid
    assert exterior_derivative_norm(twisted3.omega0, g) < 1e-9
    for i in (0, g.base.n // 2):
        assert np.abs(curve_scal(g.fibre, twisted3.fibre_metric[i]) + 1).max() < 1e-9


def test_theta_fibre_mean_identity(twisted3, product3):
    for s in (twisted3, product3):
        lhs, rhs = theta_mean_identity(s)
        assert np.allclose(lhs, rhs, atol=1e-10)


def test_tautological_integral_is_nonnegative(twisted3, product3):
    for s in (twisted3, product3):
        assert alpha_integral(s.omega0, s.grid) >= -1e-9
        assert s.meta["uniformization"]["alpha"] == pytest.approx(alpha_integral(s.omega0, s.grid))


def test_twisted_eta_is_theta(twisted3):
    xi, eta = compute_xi_eta(twisted3.omega0, twisted3.mu, twisted3.grid)
    assert np.allclose(xi, twisted3.theta)
    assert np.allclose(eta, xi, atol=1e-8)
    with pytest.raises(GeometryInputError, match="canonical"):
        compute_xi_eta(twisted3.omega0, twisted3.mu, twisted3.grid, canonical=True)


def test_base_equation_on_a_product_is_trivial(product3):
    res = product3.meta["base"]
    assert res.constant == pytest.approx(-1.0, abs=1e-10)
    assert np.abs(res.f).max() < 1e-9


def test_base_equation_residual_and_injectivity(twisted3):
    res = solve_base_equation(twisted3)
    assert res.residual < 1e-10
    assert res.sigma_min > 0
    # the solved base metric carries constant Scal + mean eta
    eta_mean = np.sum(twisted3.theta * twisted3.fibre_metric * twisted3.grid.fibre.mass, -1) / \
        np.sum(twisted3.fibre_metric * twisted3.grid.fibre.mass, -1)
    total = curve_scal(twisted3.grid.base, res.mu) + eta_mean * twisted3.mu / res.mu
    assert np.ptp(total) < 1e-9
