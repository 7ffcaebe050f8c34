"""Invariant suite run by ``cscklab validate``.

Each check returns a row ``{module, check, value, tolerance, passed}``.  The
torus checks use spectral differentiation and run on every backend; the mesh
checks run when the configured backend is a mesh.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .curves import TorusCurve, origami_curve
from .fibre import product_surface, uniformize_fibre
from .grid import Form11, ProductGrid, i_del_delbar, i_del_delbar_T, integrate
from .kahler import IntersectionNumbers, intersection_numbers, laplacian, scal, volume_density
from .ladder import build_ladder, c_closed_form, mean_scal_series
from .linear import DstarD, grad_dot, linearize_scal


def smooth_field(grid, rng, kmax=3, amp=1.0, terms=6):
    """Random trigonometric polynomial of degree ``kmax`` on a torus product."""
    F, B = grid.fibre, grid.base
    out = np.zeros(grid.shape)
    for _ in range(terms):
        a = rng.integers(-kmax, kmax + 1, 4)
        arg = (a[0] * grid.pullback_fibre(F.uv[0]) + a[1] * grid.pullback_fibre(F.uv[1])
               + a[2] * grid.pullback_base(B.uv[0]) + a[3] * grid.pullback_base(B.uv[1]))
        out += rng.standard_normal() * np.cos(2 * np.pi * arg + rng.uniform(0, 6))
    return amp * out


def tilted_torus_background(n=24, amp=0.002, seed=0):
    """Constant non-diagonal metric plus a small smooth potential: Scal is not constant."""
    g = ProductGrid(TorusCurve((n, n)), TorusCurve((n, n)))
    flat = Form11(np.ones(g.shape), np.full(g.shape, 0.3 + 0.1j), np.full(g.shape, 2.0))
    rng = np.random.default_rng(seed)
    return g, flat + i_del_delbar(smooth_field(g, rng, 1, amp), g)


def richardson_derivative(F, h):
    """Fourth-order derivative at 0 from central differences at ``h`` and ``h/2``."""
    d1 = (F(h) - F(-h)) / (2 * h)
    d2 = (F(h / 2) - F(-h / 2)) / h
    return (4 * d2 - d1) / 3


def _row(module, check, value, tol):
    value = float(value)
    return {"module": module, "check": check, "value": value, "tolerance": tol,
            "passed": bool(np.isfinite(value) and value <= tol)}


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def torus_checks(seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    g = ProductGrid(TorusCurve((12, 12)), TorusCurve((12, 12), 0.3 + 1.1j))
    a, b = smooth_field(g, rng), smooth_field(g, rng)
    # pairing against the unweighted sum
    W = Form11(*(rng.standard_normal(g.shape) + 0j for _ in range(3)), hv=rng.standard_normal(g.shape) + 0j)
    dd = i_del_delbar(a, g)
    lhs = np.sum(W.vv * dd.vv + W.vh * dd.vh + W.hv * dd.hv + W.hh * dd.hh).real
    rows.append(_row("grid_calculus", "i_ddbar transpose", abs(lhs - np.sum(a * i_del_delbar_T(W, g)))
                     / abs(lhs), 1e-12))
    T = g.fibre
    lap = T.lap(a[0])
    rows.append(_row("grid_calculus", "laplacian symmetric",
                     abs(np.sum(T.mass * lap * b[0]) - np.sum(T.mass * a[0] * T.lap(b[0]))), 1e-10))
    rows.append(_row("grid_calculus", "laplacian kills constants", np.abs(T.lap(np.ones(T.n))).max(), 1e-12))

    flat = Form11(np.ones(g.shape), np.full(g.shape, 0.2 - 0.1j), np.full(g.shape, 1.5))
    rows.append(_row("kahler_surface", "flat Scal", np.abs(scal(flat, g)).max(), 1e-12))

    g, om = tilted_torus_background(16, 0.002, seed)
    phi = smooth_field(g, rng, 2)
    phi /= np.abs(i_del_delbar(phi, g).matrix()).max()
    L = linearize_scal(om, g)
    Lphi = L(phi)
    rows.append(_row("linearization", "expanded vs exact form",
                     _rel(linearize_scal(om, g, form="exact")(phi), Lphi), 1e-10))
    fd = richardson_derivative(lambda t: np.real(scal(om + i_del_delbar(t * phi, g), g)), 1e-3)
    rows.append(_row("linearization", "Richardson difference", _rel(fd, Lphi), 1e-8))
    chi = smooth_field(g, rng, 2)
    rows.append(_row("linearization", "adjoint pairing",
                     abs(L.inner(Lphi, chi) - L.inner(phi, L.adjoint(chi))) / abs(L.inner(Lphi, chi)), 1e-10))
    S = np.real(scal(om, g))
    v = volume_density(om)
    lhs = integrate(grad_dot(S, phi, om, g), g, v)
    rhs = -integrate(phi * np.real(laplacian(om, S, g)), g, v)
    rows.append(_row("linearization", "gradient term integrates by parts", abs(lhs - rhs) / abs(rhs), 1e-10))

    g, om = tilted_torus_background(24, 0.001, seed)
    phi = smooth_field(g, np.random.default_rng(seed + 1), 2)
    S = np.real(scal(om, g))
    L = linearize_scal(om, g)
    rows.append(_row("linearization", "L = D*D + grad S . grad phi",
                     _rel(DstarD(om, g)(phi) + grad_dot(S, phi, om, g), L(phi)), 1e-8))
    return rows


def series_checks():
    num = IntersectionNumbers(A=3.0, B=-0.5, C=-2.0, D=1.25)
    ser = mean_scal_series(num, 5)
    A, B, C, D = (Fraction(x) for x in (num.A, num.B, num.C, num.D))
    worst = 0.0
    for i in range(1, 6):
        exact = (-1) ** i * (B / A) ** i * (C / A - D / B)
        worst = max(worst, abs(float(ser[i] - exact)), abs(c_closed_form(num, i) - float(exact)))
    return [_row("adiabatic_ladder", "mean Scal series vs closed form", worst, 1e-14)]


def mesh_checks():
    rows = []
    C = origami_curve(3)
    gb = float(np.sum(C.K_ref * C.mass)) - 2 * np.pi * C.euler_characteristic
    rows.append(_row("grid_calculus", "Gauss-Bonnet on origami", abs(gb), 1e-10))
    res = uniformize_fibre(C, None, -1.0)
    rows.append(_row("fibre_geometry", "uniformization residual", res.residual, 1e-9))
    surf = product_surface(C, C, s0_base=-1, twist=0.05)
    rows.append(_row("fibre_geometry", "base equation residual",
                     abs(surf.meta["base"].residual), 1e-9))
    lad = build_ladder(surf, 2)
    num = intersection_numbers(surf, r=64.0)
    worst = max(abs(lad.c[i - 1] - c_closed_form(num, i)) / abs(c_closed_form(num, i)) for i in (1, 2))
    rows.append(_row("adiabatic_ladder", "c_1, c_2 vs intersection numbers", worst, 1e-6))
    return rows


def run_suite(mesh=True, seed=0):
    rows = torus_checks(seed) + series_checks()
    if mesh:
        rows += mesh_checks()
    return rows
