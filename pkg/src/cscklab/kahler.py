"""Kähler data on a product grid: ω_r, Ricci form, scalar curvature, norms."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np

from .curves import GridError
from .grid import (Form11, ProductGrid, declare_splitting, i_del_delbar,
                   integrate, wedge)


class PositivityError(ValueError):
    """A form that should be a Kähler metric is not positive."""


def curve_scal(curve, w, log_scale=1.0):
    """Scalar curvature of ``w (i/2) dz ^ dzbar`` on a single curve."""
    w = np.asarray(w)
    if np.isrealobj(w) and np.any(w <= 0):
        raise PositivityError("curve metric factor is not positive")
    return (curve.K_ref + curve.lap(np.log(w / log_scale))) / w


def ricci_form(omega, grid, log_scale=1.0):
    """Ricci form ``-i d dbar log det g`` including the reference curvature.

    ``log_scale`` divides the determinant before the logarithm; it does not
    change the result for real metrics and keeps the logarithm on its
    principal branch when a metric is continued to complex scale factors.
    """
    det = omega.det()
    if np.isrealobj(det) or not np.any(np.imag(det)):
        if np.any(np.real(det) <= 0) or np.any(np.real(omega.vv) <= 0):
            raise PositivityError("Ricci form requested for a non-positive form")
    rho = i_del_delbar(np.log(det / log_scale), grid)
    K = Form11(np.broadcast_to(grid.fibre.K_ref, grid.shape), np.zeros(grid.shape),
               np.broadcast_to(grid.base.K_ref[:, None], grid.shape))
    return rho + K


def scal(omega, grid, log_scale=1.0):
    """Scalar curvature ``2 ρ ∧ ω / ω²``."""
    rho = ricci_form(omega, grid, log_scale)
    return omega.trace_against(rho)


def laplacian(omega, phi, grid):
    """``Δ_ω φ``: trace of ``i∂̄∂φ`` against ω (a positive operator)."""
    return omega.trace_against(i_del_delbar(phi, grid))


def volume_density(omega):
    """``ω²/2`` relative to the reference product measure."""
    return np.real(omega.det())


def mean(phi, omega, grid):
    vol = volume_density(omega)
    return float(np.real(integrate(phi, grid, vol)) / integrate(1.0, grid, vol))


@dataclass(frozen=True)
class IntersectionNumbers:
    A: float
    B: float
    C: float
    D: float

    def mean_scal(self, r):
        return (r * self.C + self.D) / (r * self.A + self.B)

    def volume(self, r):
        return r * self.A + self.B


@dataclass(frozen=True, eq=False)
class KahlerSurface:
    """``ω_r = ω₀ + r π*ω_Σ`` with ω₀ in product coordinates and ω_Σ = μ (i/2)dw∧dwbar."""

    grid: ProductGrid
    omega0: Form11
    mu: np.ndarray
    s0: float = -1.0
    r: float | None = None
    label: str = "surface"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        if mu.shape != (self.grid.base.n,) or np.any(mu <= 0):
            raise GridError("base form must be positive with one value per base point")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "splitting", declare_splitting(self.omega0, self.grid))
        w0 = self.splitting.express(self.omega0)
        object.__setattr__(self, "theta", np.real(w0.hh) / mu[:, None])

    @property
    def fibre_metric(self):
        """Fibrewise restriction of ω₀, i.e. the family ω_σ."""
        return np.real(self.omega0.vv)

    @property
    def omega_sigma(self):
        return Form11.from_base(self.grid, self.mu)

    @property
    def positivity_threshold(self):
        return float(-self.theta.min())

    def with_r(self, r):
        return replace(self, r=float(r), meta=dict(self.meta))

    def with_base(self, mu):
        return replace(self, mu=np.asarray(mu, float), meta=dict(self.meta))

    def omega(self, r=None):
        return assemble_omega_r(self, self.r if r is None else r)


def assemble_omega_r(surface, r):
    """ω_r = ω₀ + r·π*ω_Σ, with a pointwise positivity check."""
    if r is None:
        raise ValueError("no value of r given")
    thr = surface.positivity_threshold
    if not r > thr:
        raise PositivityError(f"omega_r is not positive for r = {r}; need r > -inf theta = {thr:.6g}")
    return surface.omega0 + r * surface.omega_sigma


def vertical_laplacian(surface, phi):
    """Δ_V φ = (i∂̄∂φ)_VV / ω_σ."""
    return surface.grid.fibre.lap(phi, -1) / surface.fibre_metric


def horizontal_laplacian(surface, phi):
    """Δ_H φ = (i∂̄∂φ)_HH / ω_Σ in the splitting declared by ω₀."""
    dd = surface.splitting.express(i_del_delbar(phi, surface.grid))
    return dd.hh / surface.mu[:, None]


def intersection_numbers(surface, r=None, omega=None):
    """A = ∫ω₀∧ω_Σ, B = ∫ω₀²/2, C = ∫ρ∧ω_Σ, D = ∫ρ∧ω₀.

    ``ρ`` is the Ricci form of ``omega`` (default ``ω_r`` at ``r``, or at
    ``surface.r``, or just above the positivity threshold), so that the mean
    scalar curvature of ω_r is ``(rC + D)/(rA + B)``.
    """
    g = surface.grid
    if omega is None:
        if r is None:
            r = surface.r if surface.r is not None else max(1.0, 2 * surface.positivity_threshold + 1.0)
        omega = assemble_omega_r(surface, r)
    rho = ricci_form(omega, g)
    ws = surface.omega_sigma
    w0 = surface.omega0
    return IntersectionNumbers(
        A=wedge(w0, ws, g),
        B=0.5 * wedge(w0, w0, g),
        C=wedge(rho, ws, g),
        D=wedge(rho, w0, g),
    )


def model_form(surface, r):
    """Block form ω_σ ⊕ r ω_Σ in the splitting of ω₀ (product coordinates)."""
    vv = surface.fibre_metric
    hh = r * surface.mu[:, None] * np.ones_like(vv)
    adapted = Form11(vv, np.zeros(vv.shape, complex), hh, frame=surface.splitting)
    return surface.splitting.to_product(adapted)


# -- norms -------------------------------------------------------------------

_FRAME = np.array([[1, 0], [1j, 0], [0, 1], [0, 1j]])


def real_metric(omega):
    """Riemannian metric ``g_ij`` in real coordinates ``(x_f, y_f, x_b, y_b)``.

    Returns an array of shape ``(4, 4) + grid shape``.
    """
    H = np.moveaxis(np.real_if_close(omega.matrix()), (-2, -1), (0, 1))
    g = np.einsum("ia,abxy,jb->ijxy", _FRAME, H, _FRAME.conj())
    return np.real(g)


def _real_grad(F, grid):
    """Real-coordinate partials: new leading axis of length 4."""
    fx, fy = grid.fibre.d_real(F, -1)
    bx, by = grid.base.d_real(F, -2)
    return np.stack([np.real(fx), np.real(fy), np.real(bx), np.real(by)])


def _christoffel(g, ginv, grid):
    """Γ^k_ij = ½ g^kl (d_i g_jl + d_j g_il − d_l g_ij)."""
    dg = _real_grad(g, grid)                  # dg[i, j, l] = d_i g_jl
    a = dg
    b = dg.transpose(1, 0, 2, 3, 4)           # d_j g_il
    c = dg.transpose(1, 2, 0, 3, 4)           # d_l g_ij
    return 0.5 * np.einsum("klxy,ijlxy->kijxy", ginv, a + b - c)


def covariant_derivatives(field, omega, grid, k, rank=0):
    """``[T, ∇T, ∇²T, ...]`` up to order ``k`` for a covariant real tensor ``T``.

    ``field`` has ``rank`` leading axes of length 4 followed by the grid axes.
    """
    g = real_metric(omega)
    ginv = np.moveaxis(np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    gamma = _christoffel(g, ginv, grid)
    out = [np.asarray(field, float)]
    T = out[0]
    for _ in range(k):
        m = T.ndim - 2
        D = _real_grad(T, grid)
        for slot in range(m):
            # subtract Γ^q_{i a_slot} T_{... q ...}
            Tq = np.moveaxis(T, slot, 0)
            corr = np.einsum("qiaxy,q...xy->ia...xy", gamma, Tq)
            corr = np.moveaxis(corr, 1, slot + 1)
            D = D - corr
        T = D
        out.append(T)
    return out, ginv


def _pointwise_norm2(T, ginv):
    """``|T|²_g`` for a covariant tensor with leading index axes."""
    m = T.ndim - 2
    up = T
    for slot in range(m):
        up = np.moveaxis(np.einsum("ijxy,j...xy->i...xy", ginv, np.moveaxis(up, slot, 0)), 0, slot)
    return np.sum(up * T, axis=tuple(range(m))) if m else T * T


def norm_Ck(field, omega, grid, k=0, rank=0):
    """``sum_{j<=k} sup |∇^j T|_g``."""
    if k > 4 or k < 0:
        raise ValueError("C^k norms are supported for 0 <= k <= 4")
    ders, ginv = covariant_derivatives(field, omega, grid, k, rank)
    return float(sum(np.sqrt(np.max(np.abs(_pointwise_norm2(D, ginv)))) for D in ders))


def norm_L2k(field, omega, grid, k=0, rank=0):
    """``(sum_{j<=k} ∫ |∇^j T|²_g dvol_g)^{1/2}``."""
    if k > 4 or k < 0:
        raise ValueError("L2_k norms are supported for 0 <= k <= 4")
    ders, ginv = covariant_derivatives(field, omega, grid, k, rank)
    vol = volume_density(omega)
    return float(np.sqrt(sum(np.real(integrate(_pointwise_norm2(D, ginv), grid, vol)) for D in ders)))


def l2_norm(phi, omega, grid):
    return float(np.sqrt(np.real(integrate(np.abs(phi) ** 2, grid, volume_density(omega)))))
