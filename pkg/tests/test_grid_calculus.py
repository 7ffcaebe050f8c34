import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cscklab.curves import (GridError, MeshCurve, TorusCurve, check_genus, load_mesh, origami_curve,
                            read_off, voxel_surface, write_off)
from cscklab.grid import (Form11, ProductGrid, fibrewise_mean, i_del_delbar, i_del_delbar_T,
                          integrate, wedge)


def test_torus_laplacian_of_a_cosine():
    # lap(cos 2πx) = 2π² cos 2πx on the unit square torus
    T = TorusCurve((16, 16))
    x = T.uv[0]
    f = np.cos(2 * np.pi * x)
    assert np.allclose(T.lap(f), 2 * np.pi**2 * f, atol=1e-10)


def test_torus_dz_of_a_character():
    # e(z) = exp(2πi x) with z = x + τ y: ∂_z e = π i e·(stuff) checked through dz + dzbar = d/dx
    T = TorusCurve((16, 16), 0.3 + 1.2j)
    e = np.exp(2j * np.pi * T.uv[0])
    dx = T.dz(e) + T.dzbar(e)
    assert np.allclose(dx, 2j * np.pi * e, atol=1e-10)


def test_torus_rejects_odd_or_small_grids():
    with pytest.raises(GridError):
        TorusCurve((7, 8))
    with pytest.raises(GridError):
        TorusCurve((6, 6))
    with pytest.raises(GridError):
        TorusCurve((8, 8), tau=-1j)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_laplacian_is_symmetric_and_kills_constants(seed):
    rng = np.random.default_rng(seed)
    for C in (TorusCurve((8, 10), 0.2 + 0.9j), origami_curve(3)):
        a, b = rng.standard_normal((2, C.n))
        assert abs(np.sum(C.mass * C.lap(a) * b) - np.sum(C.mass * a * C.lap(b))) < 1e-9
        assert np.abs(C.lap(np.ones(C.n))).max() < 1e-10
        assert np.sum(C.mass * C.lap(a) * a) > -1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_i_ddbar_transpose(seed):
    rng = np.random.default_rng(seed)
    g = ProductGrid(origami_curve(3), TorusCurve((8, 8)))
    phi = rng.standard_normal(g.shape)
    W = Form11(*(rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape) for _ in range(3)),
               hv=rng.standard_normal(g.shape) + 0j)
    dd = i_del_delbar(phi, g)
    lhs = np.real(np.sum(W.vv * dd.vv + W.vh * dd.vh + W.hv * dd.hv + W.hh * dd.hh))
    assert lhs == pytest.approx(np.sum(phi * i_del_delbar_T(W, g)), rel=1e-10, abs=1e-10)


def test_i_ddbar_is_hermitian_for_real_potentials(rng):
    g = ProductGrid(TorusCurve((8, 8)), TorusCurve((8, 8)))
    dd = i_del_delbar(rng.standard_normal(g.shape), g)
    assert np.allclose(dd.hv, np.conj(dd.vh))
    assert dd.is_real


@pytest.mark.parametrize("cells", [3, 4, 5])
def test_origami_gauss_bonnet(cells):
    C = origami_curve(cells)
    assert C.euler_characteristic == -2
    assert np.sum(C.K_ref * C.mass) == pytest.approx(-4 * np.pi, abs=1e-10)
    assert len(C.cone_vertices) == 1


@pytest.mark.parametrize("genus", [0, 1, 2, 3])
def test_voxel_surfaces_have_the_requested_genus(genus):
    P, F = voxel_surface(genus)
    C = MeshCurve.from_embedding(P, F)
    assert C.genus == genus
    assert C.area == pytest.approx(float(C.mass.sum()))


def test_off_round_trip(tmp_path):
    P, F = voxel_surface(2)
    factor = 1.0 + 0.1 * np.arange(len(P)) / len(P)
    path = tmp_path / "g2.off"
    write_off(path, P, F, factor)
    P2, F2, f2 = read_off(path)
    assert np.array_equal(F, F2)
    assert np.allclose(P, P2) and np.allclose(factor, f2)
    C = load_mesh(path, genus=2)
    assert C.genus == 2
    with pytest.raises(GridError):
        load_mesh(path, genus=3)


def test_unreadable_off_is_reported(tmp_path):
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(GridError):
        read_off(bad)


def test_coarse_origami_is_rejected():
    with pytest.raises(GridError):
        origami_curve(2)


def test_genus_minimum_check():
    P, F = voxel_surface(1)
    with pytest.raises(GridError):
        check_genus(MeshCurve.from_embedding(P, F), minimum=2)


def test_wedge_and_integrate_on_a_flat_product():
    T = TorusCurve((8, 8), 0.5 + 2j)
    g = ProductGrid(T, T)
    one = np.ones(g.shape)
    a = Form11(one, 0 * one + 0j, 0 * one)
    b = Form11(0 * one, 0 * one + 0j, one)
    # ∫ ω_f ∧ ω_b = area(F)·area(B)
    assert wedge(a, b, g) == pytest.approx(T.area**2)
    assert integrate(one, g) == pytest.approx(T.area**2)


def test_fibrewise_mean_of_pullback_is_identity(rng):
    g = ProductGrid(origami_curve(3), TorusCurve((8, 8)))
    f = rng.standard_normal(g.base.n)
    assert np.allclose(fibrewise_mean(g.pullback_base(f), g), f)
