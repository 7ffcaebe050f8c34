import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cscklab.curves import TorusCurve
from cscklab.grid import Form11, ProductGrid, i_del_delbar
from cscklab.kahler import scal
from cscklab.linear import (DstarD, expansion_operator_check, delta_r_identity, fit_inverse_powers,
                            inverse_norm, linearize_scal, mean_zero_projection, scal_expansion_check,
                            solve_mean_zero, SolverError)
from cscklab.validate import richardson_derivative, smooth_field, tilted_torus_background


def _flat(n=8, tau=1j):
    T = TorusCurve((n, n), tau)
    g = ProductGrid(T, T)
    one = np.ones(g.shape)
    return g, Form11(one, 0j * one, one)


def test_flat_linearization_is_the_squared_laplacian():
    g, om = _flat()
    L = linearize_scal(om, g)
    x = g.pullback_fibre(g.fibre.uv[0])
    y = g.pullback_base(g.base.uv[1])
    for kx, ky in [(1, 0), (1, 1), (2, 1)]:
        f = np.cos(2 * np.pi * (kx * x + ky * y))
        # Δ = tr_ω i∂̄∂ has eigenvalue 2π²|k|² on the unit square
        lam = 2 * np.pi**2 * (kx**2 + ky**2)
        assert np.allclose(L(f), lam**2 * f, atol=1e-8 * lam**2)


def test_flat_inverse_norm():
    g, om = _flat()
    L = linearize_scal(om, g)
    exact = 1 / (2 * np.pi**2) ** 2
    assert inverse_norm(L, om, method="power", iterations=6) == pytest.approx(exact, rel=1e-6)


def test_inverse_norm_dense_and_power_agree(twisted3):
    om = twisted3.omega(16.0)
    L = linearize_scal(om, twisted3.grid)
    dense = inverse_norm(L, om, method="dense")
    assert inverse_norm(L, om, method="power", iterations=40) == pytest.approx(dense, rel=1e-4)


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_richardson_difference_matches_the_linearization(seed):
    g, om = tilted_torus_background(16, 0.002, seed % 1000)
    phi = smooth_field(g, np.random.default_rng(seed), 2)
    phi /= np.abs(i_del_delbar(phi, g).matrix()).max()
    fd = richardson_derivative(lambda t: np.real(scal(om + i_del_delbar(t * phi, g), g)), 1e-3)
    Lphi = linearize_scal(om, g)(phi)
    assert np.abs(fd - Lphi).max() < 1e-8 * np.abs(Lphi).max()


def test_expanded_and_exact_forms_agree(rng):
    g, om = tilted_torus_background(12, 0.003, 3)
    phi = smooth_field(g, rng, 2)
    a = linearize_scal(om, g)(phi)
    b = linearize_scal(om, g, form="exact")(phi)
    assert np.abs(a - b).max() < 1e-10 * np.abs(a).max()
    with pytest.raises(ValueError):
        linearize_scal(om, g, form="bogus")


def test_adjoint_pairing(rng):
    g, om = tilted_torus_background(12, 0.003, 5)
    L = linearize_scal(om, g)
    assert not L.symmetric
    phi, chi = smooth_field(g, rng, 2), smooth_field(g, rng, 2)
    lhs = L.inner(L(phi), chi)
    assert lhs == pytest.approx(L.inner(phi, L.adjoint(chi)), rel=1e-10)


def test_linearization_is_DstarD_for_constant_scalar_curvature(rng):
    T = TorusCurve((12, 12), 0.3 + 1.1j)
    g = ProductGrid(T, TorusCurve((12, 12)))
    one = np.ones(g.shape)
    om = Form11(one, np.full(g.shape, 0.4 - 0.2j), 1.7 * one)
    L = linearize_scal(om, g)
    assert L.symmetric
    phi = smooth_field(g, rng, 4)
    Lp = L(phi)
    assert np.abs(DstarD(om, g)(phi) - Lp).max() < 1e-10 * np.abs(Lp).max()


def test_mean_zero_solves_dense_and_gmres(twisted3, rng):
    g, om = twisted3.grid, twisted3.omega(16.0)
    L = linearize_scal(om, g)
    p = mean_zero_projection(om, g)
    rhs = p(rng.standard_normal(g.shape))
    a, ia = solve_mean_zero(L, om, rhs, method="dense")
    b, ib = solve_mean_zero(L, om, rhs, method="gmres", tol=1e-11)
    assert ia["method"] == "dense" and ib["method"] == "gmres"
    assert np.abs(a - b).max() < 1e-8 * np.abs(a).max()
    assert np.abs(p(L(a)) - rhs).max() < 1e-9 * np.abs(rhs).max()


def test_gmres_failure_is_reported():
    g, om = tilted_torus_background(8, 0.003, 2)
    L = linearize_scal(om, g)
    rhs = mean_zero_projection(om, g)(smooth_field(g, np.random.default_rng(0), 3))
    with pytest.raises(SolverError):
        solve_mean_zero(L, om, rhs, method="gmres", tol=1e-12, maxiter=2)


def test_fit_inverse_powers_recovers_a_polynomial():
    r = np.array([32.0, 64.0, 128.0, 256.0])
    vals = 1.5 - 2.0 / r + 7.0 / r**2 + 0.25 / r**3
    coef, _ = fit_inverse_powers(r, vals)
    assert np.allclose(coef, [1.5, -2.0, 7.0, 0.25], rtol=1e-8)
    with pytest.raises(SolverError):
        fit_inverse_powers([100.0, 100.0 + 1e-9, 100.0 + 2e-9], [1.0, 1.0, 1.0])


def test_laplacian_splits_into_vertical_and_horizontal(twisted3, rng):
    phi = rng.standard_normal(twisted3.grid.shape)
    for r in (8.0, 64.0):
        assert delta_r_identity(twisted3, phi, r) < 1e-12 * np.abs(phi).max()


def test_expansion_of_the_linearization_on_base_functions(twisted3, rng):
    f = rng.standard_normal(twisted3.grid.base.n)
    rep = expansion_operator_check(twisted3, f, r_list=(64, 128, 256, 512, 1024))
    assert rep.order0_error < 1e-8
    assert rep.order1_mean_norm < 0.05
    assert rep.order2_rel_error < 0.05


def test_expansion_of_the_scalar_curvature(twisted3):
    rep = scal_expansion_check(twisted3)
    assert rep.order0_error < 1e-8
    assert rep.rel_error1 < 1e-6
