"""Fibrewise uniformization, ω₀, θ, ξ, η and the base equation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import (Form11, ProductGrid, exterior_derivative_norm, fibrewise_mean,
                   i_del_delbar, wedge)
from .kahler import KahlerSurface, curve_scal

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class GeometryInputError(ValueError):
    """Input geometry violates a hypothesis of the construction."""


@dataclass
class UniformizationResult:
    u: np.ndarray
    s0: float
    residual: float
    iterations: int
    trace: list = field(default_factory=list)

    def metric(self, w_ref):
        return np.asarray(w_ref) * np.exp(2 * self.u)


def _gauss_bonnet_area(curve, s0):
    chi = curve.euler_characteristic
    if s0 == 0:
        if chi != 0:
            raise GeometryInputError(f"target s0 = 0 needs Euler characteristic 0, got {chi}")
        return None
    if np.sign(s0) != np.sign(chi):
        raise GeometryInputError(f"target s0 = {s0} has the wrong sign for Euler characteristic {chi}")
    return 2 * np.pi * chi / s0


def uniformize_fibre(curve, w_ref=None, s0=-1.0, tol=1e-10, max_iter=50):
    """Conformal factor ``u`` with ``Scal(e^{2u} w_ref) = s0``.

    Damped Newton on ``K + lap(log w + 2u) - s0 w e^{2u} = 0``.  For ``s0 = 0``
    the additive constant is fixed by keeping the area unchanged.
    """
    w = np.ones(curve.n) if w_ref is None else np.asarray(w_ref, float)
    if np.any(w <= 0):
        raise GeometryInputError("reference metric factor must be positive")
    area = _gauss_bonnet_area(curve, s0)
    m = curve.mass
    L = curve.dense("lap").real
    if area is None:
        u = np.zeros(curve.n)
        area0 = float(m @ w)
    else:
        u = np.full(curve.n, 0.5 * np.log(area / float(m @ w)))

    def residual(u):
        e = w * np.exp(2 * u)
        F = curve.K_ref + L @ (np.log(w) + 2 * u) - s0 * e
        return F, e

    def size(F, e):
        r = float(np.max(np.abs(F / e)))
        if area is None:
            r = max(r, abs(float(m @ e) / area0 - 1.0))
        return r

    F, e = residual(u)
    res = size(F, e)
    trace = [res]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(f"uniformization stalled at residual {res:.3e} after {it} steps")
        J = 2 * L - np.diag(2 * s0 * e)
        if area is None:
            # bordered system fixing the area
            Jb = np.zeros((curve.n + 1, curve.n + 1))
            Jb[:-1, :-1] = J
            Jb[:-1, -1] = m
            Jb[-1, :-1] = 2 * m * e
            rhs = np.concatenate([-F, [area0 - float(m @ e)]])
            du = np.linalg.solve(Jb, rhs)[:-1]
        else:
            du = np.linalg.solve(J, -F)
        step = 1.0
        while True:
            Fn, en = residual(u + step * du)
            rn = size(Fn, en)
            if rn < res or step < 1e-4:
                break
            step *= 0.5
        u, F, e, res = u + step * du, Fn, en, rn
        it += 1
        trace.append(res)
    return UniformizationResult(u=u, s0=float(s0), residual=res, iterations=it, trace=trace)


def uniformize_family(grid, w_family, s0=-1.0, tol=1e-10, max_iter=50):
    """Uniformize every fibre of a family ``w_family[i_base, i_fibre]``.

    Identical fibres are solved once.
    """
    w_family = np.asarray(w_family, float)
    cache = {}
    u = np.empty_like(w_family)
    res = np.empty(grid.base.n)
    its = np.empty(grid.base.n, int)
    for i in range(grid.base.n):
        key = w_family[i].tobytes()
        if key not in cache:
            cache[key] = uniformize_fibre(grid.fibre, w_family[i], s0, tol, max_iter)
        r = cache[key]
        u[i], res[i], its[i] = r.u, r.residual, r.iterations
    return u, res, its


def _fibre_poisson(grid, rhs):
    """Fibre-mean-zero solution of ``lap_f chi = rhs`` on every fibre."""
    vals, vecs = grid.fibre.eig_laplacian()
    inv = np.zeros_like(vals)
    inv[vals > 0] = 1.0 / vals[vals > 0]
    coef = (rhs * grid.fibre.mass) @ vecs
    return (coef * inv) @ vecs.T


def twist_form(grid, eps):
    """Closed form ``(i/2)(eps dz ^ dwbar + conj(eps) dw ^ dzbar)``.

    Needs global holomorphic frames on both factors (tori or translation
    surfaces).
    """
    if not (grid.fibre.global_frame and grid.base.global_frame):
        raise GeometryInputError("a constant twist needs global coordinates on both factors")
    z = np.zeros(grid.shape)
    return Form11(z, np.full(grid.shape, complex(eps)), z.copy())


def assemble_omega0(grid, w_family=None, psi=None, twist=0.0, hh=None, s0=-1.0,
                    tol=1e-10, closed_tol=1e-8):
    """Closed form ω₀ whose fibrewise restriction is the uniformized family.

    The raw form is ``Ω = diag(w, hh) + twist + i∂̄∂ψ``.  Each fibre of Ω is
    uniformized to scalar curvature ``s0``; the change of fibre metric is
    written as ``i∂̄∂χ`` with ``χ`` fibre-mean-zero, so ``ω₀ = Ω + i∂̄∂χ`` stays
    closed.  Returns ``(omega0, info)``.
    """
    w = np.ones(grid.shape) if w_family is None else np.broadcast_to(np.asarray(w_family, float), grid.shape)
    hh = np.zeros(grid.shape) if hh is None else np.broadcast_to(np.asarray(hh, float), grid.shape)
    raw = Form11(w.copy(), np.zeros(grid.shape, complex), hh.copy())
    if twist:
        raw = raw + twist_form(grid, twist)
    if psi is not None:
        raw = raw + i_del_delbar(np.asarray(psi, float), grid)
    vv = np.real(raw.vv)
    if np.any(vv <= 0):
        raise GeometryInputError("fibrewise restriction of the raw form is not positive")
    u, res, its = uniformize_family(grid, vv, s0, tol)
    target = vv * np.exp(2 * u)
    chi = _fibre_poisson(grid, target - vv)
    omega0 = raw + i_del_delbar(chi, grid)
    # the fibre part is the uniformized family up to solver round-off
    omega0 = Form11(target, omega0.vh, omega0.hh)
    dnorm = exterior_derivative_norm(omega0, grid)
    info = {"u": u, "chi": chi, "residual": float(res.max()), "iterations": int(its.max()),
            "closedness": dnorm}
    if dnorm > closed_tol * max(1.0, float(np.abs(omega0.vv).max())):
        log.warning("omega0 closedness residual %.3e above tolerance", dnorm)
        info["closed"] = False
    else:
        info["closed"] = True
    return omega0, info


def vertical_curvature(omega0, grid):
    """``iF_V`` for the Hermitian metric on the vertical bundle given by ω₀'s fibre part."""
    vv = np.real(omega0.vv)
    K = Form11(np.broadcast_to(grid.fibre.K_ref, grid.shape).copy(), np.zeros(grid.shape, complex),
               np.zeros(grid.shape))
    return K + i_del_delbar(np.log(vv), grid)


def compute_xi_eta(Omega0, mu, grid, canonical=False, atol=1e-8):
    """``ξ`` and ``η``: horizontal parts of Ω₀ and of ``iF_V`` divided by Ω_Σ.

    Both are taken in the splitting Ω₀ declares.  With ``canonical=True`` the
    relation ``ξ = -η`` expected for ``Ω₀ = -iF_V`` is asserted.
    """
    from .grid import declare_splitting

    mu = np.asarray(mu, float)
    if np.any(np.real(Omega0.vv) <= 0):
        raise GeometryInputError("fibre metric of Omega0 is degenerate")
    split = declare_splitting(Omega0, grid)
    xi = np.real(split.express(Omega0).hh) / mu[:, None]
    eta = np.real(split.express(vertical_curvature(Omega0, grid)).hh) / mu[:, None]
    if canonical:
        err = float(np.max(np.abs(xi + eta)))
        if err > atol * max(1.0, float(np.max(np.abs(xi)))):
            raise GeometryInputError(f"inputs are not canonical: |xi + eta| = {err:.3e}")
    return xi, eta


def alpha_integral(omega0, grid):
    """``∫ α`` with ``α = -π_*(F_V²)``, i.e. ``∫ iF_V ∧ iF_V``."""
    iF = vertical_curvature(omega0, grid)
    return wedge(iF, iF, grid)


def theta_mean_identity(surface):
    """Both sides of ``π_Σ θ = Λ_Σ π_*(ω₀²) / (2 A_fibre)``.

    Returns ``(lhs, rhs)`` as base arrays; ``A_fibre`` is the fibre area of ω₀.
    """
    g = surface.grid
    vv = surface.fibre_metric
    lhs = fibrewise_mean(surface.theta, g, vv)
    area_f = np.sum(vv * g.fibre.mass, -1)
    push = np.sum(2 * np.real(surface.omega0.det()) * g.fibre.mass, -1)
    rhs = push / (2 * area_f * surface.mu)
    return lhs, rhs


@dataclass
class BaseEquationResult:
    f: np.ndarray
    mu: np.ndarray
    constant: float
    residual: float
    iterations: int
    trace: list = field(default_factory=list)
    sigma_min: float = float("nan")


def base_operator(curve, mu, c):
    """Dense ``D_Σ = Δ_Σ² − c Δ_Σ`` with ``Δ_Σ = lap/μ``."""
    Lap = curve.dense("lap").real / np.asarray(mu)[:, None]
    return Lap @ Lap - c * Lap


def solve_base_equation(surface, eta=None, tol=1e-10, max_iter=50):
    """Find ``ω_Σ + i∂̄∂f`` with ``Scal + π_Σ η`` constant.

    ``η`` defaults to the one determined by the surface's ω₀.  The fibrewise
    mean of ``η ω_Σ`` does not depend on ``ω_Σ``, so it is carried as the
    density ``E = (π_Σ η) μ``.
    """
    g = surface.grid
    B = g.base
    mu0 = surface.mu
    if eta is None:
        _, eta = compute_xi_eta(surface.omega0, mu0, g)
    E = fibrewise_mean(eta, g, surface.fibre_metric) * mu0
    m = B.mass
    Lap = B.dense("lap").real
    n = B.n

    def F(f):
        w = mu0 + Lap @ f
        if np.any(w <= 0):
            raise GeometryInputError("base metric lost positivity during the base solve")
        return curve_scal(B, w) + E / w, w

    f = np.zeros(n)
    Ff, w = F(f)
    c = float(m @ (Ff * w) / (m @ w))
    res = float(np.max(np.abs(Ff - c)))
    trace = [res]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(f"base equation stalled at residual {res:.3e}")
        # linearisation at the current iterate: Δ² − (Scal + E/w) Δ
        Lw = Lap / w[:, None]
        D = Lw @ Lw - (Ff[:, None]) * Lw
        Jb = np.zeros((n + 1, n + 1))
        Jb[:n, :n] = D
        Jb[:n, n] = -1.0
        Jb[n, :n] = m * mu0
        rhs = np.concatenate([-(Ff - c), [0.0]])
        sol = np.linalg.solve(Jb, rhs)
        df = sol[:n]
        step = 1.0
        while True:
            try:
                Fn, wn = F(f + step * df)
                cn = float(m @ (Fn * wn) / (m @ wn))
                rn = float(np.max(np.abs(Fn - cn)))
            except GeometryInputError:
                rn = np.inf
            if rn < res or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(rn):
            raise ConvergenceError("base equation step left the positive cone")
        f, Ff, w, c, res = f + step * df, Fn, wn, cn, rn
        it += 1
        trace.append(res)
    f = f - float(m @ (f * mu0)) / float(m @ mu0)
    # injectivity of D_Σ on mean-zero functions at the solution
    Dsol = base_operator(B, w, c)
    W = np.sqrt(m * w)
    sym = (W[:, None] * Dsol) / W[None, :]
    P = np.eye(n) - np.outer(W, W) / float(W @ W)
    sv = np.linalg.svd(P @ sym @ P, compute_uv=False)
    smin = float(sv[-2]) if n > 1 else float("nan")
    if smin < 1e-10 * max(1.0, sv[0]):
        raise GeometryInputError(f"D_Sigma is singular on mean-zero functions (sigma_min = {smin:.3e})")
    return BaseEquationResult(f=f, mu=w, constant=c, residual=res, iterations=it, trace=trace,
                              sigma_min=smin)


def product_surface(fibre, base, s0_fibre=-1.0, s0_base=None, fibre_factor=None,
                    base_factor=None, twist=0.0, psi=None, solve_base=True, label="product"):
    """Fibred surface ``fibre × base`` with uniformized fibres and, optionally, the base equation solved.

    ``s0_base`` uniformizes the base first (``None`` keeps the given base factor).
    """
    grid = ProductGrid(fibre, base)
    mu = np.ones(base.n) if base_factor is None else np.asarray(base_factor, float)
    if s0_base is not None:
        mu = uniformize_fibre(base, mu, s0_base).metric(mu)
    w = None if fibre_factor is None else grid.pullback_fibre(fibre_factor)
    omega0, info = assemble_omega0(grid, w, psi=psi, twist=twist, s0=s0_fibre)
    # the first tautological class is nef for a holomorphic family of curves
    alpha = alpha_integral(omega0, grid)
    info["alpha"] = alpha
    if alpha < -1e-9 * max(1.0, wedge(omega0, omega0, grid)):
        raise GeometryInputError(f"integral of the tautological class is negative ({alpha:.3e})")
    surf = KahlerSurface(grid, omega0, mu, s0=s0_fibre, label=label,
                         meta={"twist": complex(twist), "uniformization": info})
    if solve_base:
        res = solve_base_equation(surf)
        surf = surf.with_base(res.mu)
        surf.meta["base"] = res
        surf.meta["c_sigma"] = res.constant
    return surf
