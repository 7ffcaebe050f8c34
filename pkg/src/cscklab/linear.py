"""Linearised scalar curvature, the operator 𝒟 and their numerical handles.

Inner products on scalar fields are ``<a, b> = sum(mass * det(ω) * a * b)``,
the L² pairing of the Kähler volume ``ω²/2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .grid import Form11, fibrewise_mean, i_del_delbar, i_del_delbar_T
from .kahler import curve_scal, horizontal_laplacian, ricci_form, scal, vertical_laplacian


class SolverError(RuntimeError):
    """A linear solve or eigensolve failed."""


def _hinv(omega):
    det = omega.det()
    return Form11(omega.hh / det, -omega.vh / det, omega.vv / det, hv=-omega.hv / det), det


def _contract_weights(omega):
    """Weights ``W`` with ``contract(W, Φ) = tr(H⁻¹ Φ)``."""
    det = omega.det()
    return Form11(omega.hh / det, -omega.hv / det, omega.vv / det, hv=-omega.vh / det)


def _contract(W, form):
    return W.vv * form.vv + W.vh * form.vh + W.hv * form.hv + W.hh * form.hh


def _matmul(a, b):
    """Pointwise product of two 2x2 fields given as Form11 (as plain matrices)."""
    return Form11(a.vv * b.vv + a.vh * b.hv, a.vv * b.vh + a.vh * b.hh,
                  a.hv * b.vh + a.hh * b.hh, hv=a.hv * b.vv + a.hh * b.hv)


@dataclass(eq=False)
class LinearOperatorHandle:
    """Matrix-free linear map on scalar fields of one product grid."""

    apply: Callable
    grid: object
    weight: np.ndarray
    adjoint_apply: Callable | None = None
    symmetric: bool = False
    name: str = "operator"
    meta: dict = field(default_factory=dict)

    def __call__(self, phi):
        return self.apply(phi)

    @property
    def shape(self):
        return self.grid.shape

    def inner(self, a, b):
        return float(np.sum(self.weight * a * b))

    def norm(self, a):
        return float(np.sqrt(self.inner(a, a)))

    def adjoint(self, chi):
        if self.adjoint_apply is None:
            raise NotImplementedError(f"{self.name} has no adjoint")
        return self.adjoint_apply(chi)

    def dense(self, basis=None, batch=512):
        """Matrix acting on flattened fields (columns of ``basis`` if given)."""
        n = self.grid.size
        if basis is None:
            basis = np.eye(n)
        cols = []
        for s in range(0, basis.shape[1], batch):
            blk = basis[:, s:s + batch].T.reshape((-1,) + self.shape)
            cols.append(np.real(self.apply(blk)).reshape(blk.shape[0], n).T)
        return np.hstack(cols)

    def compose(self, other, name=None):
        adj = None
        if self.adjoint_apply is not None and other.adjoint_apply is not None:
            adj = lambda x: other.adjoint_apply(self.adjoint_apply(x))
        return LinearOperatorHandle(lambda x: self.apply(other.apply(x)), self.grid, self.weight,
                                    adj, False, name or f"{self.name}*{other.name}")

    def __sub__(self, other):
        adj = None
        if self.adjoint_apply is not None and other.adjoint_apply is not None:
            adj = lambda x: self.adjoint_apply(x) - other.adjoint_apply(x)
        return LinearOperatorHandle(lambda x: self.apply(x) - other.apply(x), self.grid, self.weight,
                                    adj, self.symmetric and other.symmetric, f"{self.name}-{other.name}")


def _weight(omega, grid):
    return grid.mass * np.real(omega.det())


def _contract_op(W, grid, weight):
    """``φ ↦ contract(W, i∂̄∂φ)`` and its adjoint for the weighted pairing."""
    fwd = lambda phi: np.real(_contract(W, i_del_delbar(phi, grid)))
    adj_plain = lambda chi: i_del_delbar_T(Form11(W.vv * chi, W.vh * chi, W.hh * chi, hv=W.hv * chi), grid)
    return fwd, adj_plain


def linearize_scal(omega, grid, rho=None, form="expanded"):
    """Derivative of ``φ ↦ Scal(ω + i∂̄∂φ)`` at 0.

    ``form="expanded"`` uses ``Δ²φ − SΔφ + 2 i∂̄∂φ∧ρ/ω²``; ``form="exact"``
    uses ``Δ²φ − tr(H⁻¹ Φ H⁻¹ ρ)``.  The two agree identically (a 2x2 matrix
    identity) and the test-suite checks that.
    """
    if rho is None:
        rho = ricci_form(omega, grid)
    S = omega.trace_against(rho)
    Hi, det = _hinv(omega)
    W1 = _contract_weights(omega)
    M = _matmul(_matmul(Hi, rho), Hi)
    # coefficient of Φ[b,c] in tr(H⁻¹ Φ H⁻¹ ρ) is M[c,b]
    W2 = Form11(M.vv, M.hv, M.hh, hv=M.vh)
    w = _weight(omega, grid)
    lapf, lapT = _contract_op(W1, grid, w)
    curvf, curvT = _contract_op(W2, grid, w)
    S_real = np.real(S)

    if form == "expanded":
        def apply(phi):
            dd = i_del_delbar(phi, grid)
            d1 = np.real(omega.trace_against(dd))
            mixed = (dd.vv * rho.hh + dd.hh * rho.vv - dd.vh * rho.hv - dd.hv * rho.vh) / det
            return np.real(lapf(d1)) - S_real * d1 + np.real(mixed)
    elif form == "exact":
        def apply(phi):
            return lapf(lapf(phi)) - curvf(phi)
    else:
        raise ValueError(f"unknown form {form!r}")

    def adjoint(chi):
        c = w * chi
        return (lapT(lapT(c)) - curvT(c)) / w

    spread = float(np.ptp(S_real))
    return LinearOperatorHandle(apply, grid, w, adjoint,
                                symmetric=spread < 1e-10 * max(1.0, float(np.abs(S_real).max())),
                                name="L", meta={"scal": S_real})


def mean_zero_projection(omega, grid):
    w = _weight(omega, grid)
    tot = float(w.sum())

    def apply(phi):
        m = np.sum(w * phi, axis=(-2, -1), keepdims=True) / tot
        return phi - m

    return LinearOperatorHandle(apply, grid, w, apply, True, "p")


# -- the operator 𝒟 ---------------------------------------------------------

def _require_frames(grid):
    if not (grid.fibre.global_frame and grid.base.global_frame):
        raise NotImplementedError("the operator D needs global holomorphic frames on both factors")


def _dbar_scalar(phi, grid):
    return grid.fibre.dzbar(phi, -1), grid.base.dzbar(phi, -2)


def _dbar_scalar_H(a, b, grid):
    """Conjugate transpose of ``φ ↦ (∂_z̄ φ, ∂_w̄ φ)`` (unweighted)."""
    return grid.fibre.dz_T(a, -1) + grid.base.dz_T(b, -2)


def dbar_vector(v, h, grid):
    """``T[a, b] = ∂_b̄ ξ^a`` for ``ξ = v ∂_z + h ∂_w`` as a 2x2 field."""
    F, B = grid.fibre, grid.base
    return Form11(F.dzbar(v, -1), B.dzbar(v, -2), B.dzbar(h, -2), hv=F.dzbar(h, -1))


def dbar_vector_H(T, grid):
    F, B = grid.fibre, grid.base
    v = F.dz_T(T.vv, -1) + B.dz_T(T.vh, -2)
    h = F.dz_T(T.hv, -1) + B.dz_T(T.hh, -2)
    return v, h


def gradient_10(phi, omega, grid):
    """``∇^{1,0}φ = g^{a b̄} ∂_b̄ φ ∂_a`` with ``g_{a b̄} = H_ab / 2``."""
    a, b = _dbar_scalar(phi, grid)
    det = omega.det()
    v = 2 * (omega.hh * a - omega.hv * b) / det
    h = 2 * (-omega.vh * a + omega.vv * b) / det
    return v, h


def _gradient_10_H(v, h, omega):
    det = np.conj(omega.det())
    a = 2 * (np.conj(omega.hh) * v - np.conj(omega.vh) * h) / det
    b = 2 * (-np.conj(omega.hv) * v + np.conj(omega.vv) * h) / det
    return a, b


def tensor_metric(T, omega):
    """``Hᵀ T H⁻¹`` so that ``|T|² = Re tr(T† Hᵀ T H⁻¹)``."""
    Ht = Form11(omega.vv, omega.hv, omega.hh, hv=omega.vh)
    Hi, _ = _hinv(omega)
    return _matmul(_matmul(Ht, T), Hi)


def tensor_inner_density(S, T, omega):
    P = tensor_metric(T, omega)
    return np.real(np.conj(S.vv) * P.vv + np.conj(S.vh) * P.vh + np.conj(S.hv) * P.hv + np.conj(S.hh) * P.hh)


def D_operator(omega, grid):
    """``𝒟φ = ∂̄∇^{1,0}φ``; returns a callable producing the 2x2 tensor field."""
    _require_frames(grid)

    def apply(phi):
        v, h = gradient_10(phi, omega, grid)
        return dbar_vector(v, h, grid)

    return apply


def DstarD(omega, grid):
    """``𝒟*𝒟`` with the adjoint taken in the Kähler L² pairings."""
    _require_frames(grid)
    w = _weight(omega, grid)
    D = D_operator(omega, grid)

    def apply(phi):
        T = D(phi)
        P = tensor_metric(T, omega)
        P = Form11(w * P.vv, w * P.vh, w * P.hh, hv=w * P.hv)
        v, h = dbar_vector_H(P, grid)
        a, b = _gradient_10_H(v, h, omega)
        return np.real(_dbar_scalar_H(a, b, grid)) / w

    return LinearOperatorHandle(apply, grid, w, apply, True, "D*D")


def D_norm2(phi, omega, grid):
    T = D_operator(omega, grid)(phi)
    return float(np.sum(_weight(omega, grid) * tensor_inner_density(T, T, omega)))


def grad_dot(S, phi, omega, grid):
    """``∇S·∇φ``: the first-order term in ``L = 𝒟*𝒟 + ∇S·∇φ``.

    Computed as ``−2 Re Σ g^{j k̄} ∂_j S ∂_k̄ φ`` with ``g_{j k̄} = H_jk / 2``.
    The sign and scale are those for which ``∫ ∇S·∇φ dvol = −∫ φ ΔS dvol``
    with the positive Laplacian ``Δ = tr_ω i∂̄∂`` used throughout.
    """
    F, B = grid.fibre, grid.base
    Sz, Sw = F.dz(S, -1), B.dz(S, -2)
    pz, pw = F.dzbar(phi, -1), B.dzbar(phi, -2)
    det = omega.det()
    # (Hᵀ)⁻¹ = [[hh, −hv], [−vh, vv]] / det
    val = (omega.hh * Sz * pz - omega.hv * Sz * pw - omega.vh * Sw * pz + omega.vv * Sw * pw) / det
    return -2.0 * np.real(val)


# -- solves ------------------------------------------------------------------

class ProductPreconditioner:
    """Inverse of ``(Δ_a + Δ_b)² − s (Δ_a + Δ_b)`` in a product eigenbasis.

    ``Δ_a = lap_f / a(s)`` and ``Δ_b = lap_b / b(σ)`` with ``a`` and ``b``
    fibre and base averages of the metric coefficients.
    """

    def __init__(self, omega, grid, s=None):
        vv = np.real(omega.vv)
        hh_adapted = np.real(omega.det()) / vv
        a = vv.mean(axis=0)
        b = hh_adapted.mean(axis=1)
        self.lf, self.Vf = grid.fibre.eig_laplacian(a)
        self.lb, self.Vb = grid.base.eig_laplacian(b)
        self.wf = grid.fibre.mass * a
        self.wb = grid.base.mass * b
        if s is None:
            s = float(np.mean(np.real(scal(omega, grid))))
        lam = self.lb[:, None] + self.lf[None, :]
        model = lam**2 - s * lam
        floor = 1e-12 * max(1.0, float(np.abs(model).max()))
        inv = np.zeros_like(model)
        ok = np.abs(model) > floor
        inv[ok] = 1.0 / model[ok]
        inv[0, 0] = 0.0
        self.inv = inv

    def __call__(self, phi):
        c = self.Vb.T @ ((self.wb[:, None] * phi * self.wf[None, :]) @ self.Vf) if phi.ndim == 2 else None
        if c is None:
            return np.stack([self(p) for p in phi])
        return self.Vb @ (c * self.inv) @ self.Vf.T


def solve_mean_zero(L, omega, rhs, tol=1e-10, method="auto", maxiter=400, precond=None):
    """Solve ``p L φ = p rhs`` for ω-mean-zero ``φ``."""
    grid = L.grid
    p = mean_zero_projection(omega, grid)
    n = grid.size
    b = p(rhs)
    bn = L.norm(b)
    if bn == 0:
        return np.zeros(grid.shape), {"iterations": 0, "residual": 0.0, "method": "trivial"}
    if method == "auto":
        method = "dense" if n <= 2500 else "gmres"
    if method == "dense":
        A = _dense_mean_zero(L, omega)
        w = L.weight.ravel()
        Ab = np.vstack([np.hstack([A, w[:, None]]), np.hstack([w, [0.0]])])
        x = np.linalg.solve(Ab, np.concatenate([b.ravel(), [0.0]]))[:n]
        phi = x.reshape(grid.shape)
        info = {"iterations": 1, "method": "dense"}
    else:
        M = precond or ProductPreconditioner(omega, grid)
        op = spla.LinearOperator((n, n), matvec=lambda x: p(L(p(x.reshape(grid.shape)))).ravel())
        pc = spla.LinearOperator((n, n), matvec=lambda x: p(M(p(x.reshape(grid.shape)))).ravel())
        count = [0]

        def cb(_):
            count[0] += 1

        # maxiter counts inner iterations; scipy counts restart cycles
        restart = min(80, maxiter)
        x, status = spla.gmres(op, b.ravel(), rtol=tol, atol=0.0, restart=restart,
                               maxiter=max(1, maxiter // restart), M=pc, callback=cb,
                               callback_type="pr_norm")
        phi = p(x.reshape(grid.shape))
        info = {"iterations": count[0], "method": "gmres", "status": int(status)}
    res = L.norm(p(L(phi)) - b) / bn
    info["residual"] = res
    # GMRES may stall just above tol at the round-off floor of a badly
    # conditioned operator; the true residual decides
    if res > max(100 * tol, 1e-8):
        raise SolverError(f"linear solve residual {res:.3e} above tolerance "
                          f"({info['method']}, {info.get('iterations')} iterations)")
    return p(phi), info


def _dense_mean_zero(L, omega):
    key = "_dense_pL"
    if key not in L.meta:
        full = L.dense()
        w = L.weight.ravel()
        full = full - np.outer(np.ones(len(w)), w @ full) / w.sum()
        L.meta[key] = full
    return L.meta[key]


def inverse_norm(L, omega, method="auto", iterations=20, seed=0, tol=1e-9):
    """``‖P‖`` for the inverse ``P`` of ``pL`` on ω-mean-zero fields, in L²(ω).

    ``method="dense"`` uses the smallest singular value of the weighted
    matrix; ``method="power"`` runs power iteration on ``P*P`` with iterative
    solves (fixed seed).
    """
    grid = L.grid
    n = grid.size
    if method == "auto":
        method = "dense" if n <= 2500 else "power"
    w = L.weight.ravel()
    if method == "dense":
        A = _dense_mean_zero(L, omega)
        s = np.sqrt(w)
        Q = _mean_zero_basis(s)
        Aw = Q.T @ ((s[:, None] * A) / s[None, :]) @ Q
        sv = np.linalg.svd(Aw, compute_uv=False)
        return float(1.0 / sv[-1])
    rng = np.random.default_rng(seed)
    p = mean_zero_projection(omega, grid)
    x = p(rng.standard_normal(grid.shape))
    x /= L.norm(x)
    est = 0.0
    adj = L.adjoint_apply

    Lt = LinearOperatorHandle(lambda y: p(adj(p(y))), grid, L.weight, None, False, "L*")
    for _ in range(iterations):
        y, _ = solve_mean_zero(L, omega, x, tol=tol)
        z, _ = solve_mean_zero(Lt, omega, y, tol=tol)
        est = np.sqrt(L.norm(z))
        x = z / L.norm(z)
    return float(est)


def _mean_zero_basis(s):
    """Orthonormal basis of the Euclidean complement of ``s`` (columns)."""
    n = len(s)
    e = s / np.linalg.norm(s)
    q, _ = np.linalg.qr(np.column_stack([e, np.eye(n)[:, :n - 1]]))
    return q[:, 1:]


def product_resolved_basis(grid):
    return np.kron(grid.base.resolved_basis(), grid.fibre.resolved_basis())


def reduced_eigenvalues(op, basis=None, k=None):
    """Generalised eigenvalues of ``Bᵀ W A B`` against ``Bᵀ W B`` (ascending).

    ``op`` is a :class:`LinearOperatorHandle` self-adjoint for its weight.
    """
    n = op.grid.size
    B = np.eye(n) if basis is None else basis
    w = op.weight.ravel()
    AB = op.dense(B)
    A = B.T @ (w[:, None] * AB)
    A = 0.5 * (A + A.T)
    M = B.T @ (w[:, None] * B)
    vals = sla.eigh(A, M, eigvals_only=True, subset_by_index=None if k is None else [0, k - 1])
    return vals


def laplacian_operator(omega, grid):
    """``Δ_ω`` as a handle (self-adjoint for the Kähler volume on product metrics)."""
    W1 = _contract_weights(omega)
    w = _weight(omega, grid)
    fwd, adjT = _contract_op(W1, grid, w)
    return LinearOperatorHandle(fwd, grid, w, lambda chi: adjT(w * chi) / w, True, "Delta")


# -- expansion checks ---------------------------------------------------------

def fit_inverse_powers(r_list, values, degree=None):
    """Least-squares coefficients ``c_k`` of ``Σ_k c_k r^{-k}`` (fields allowed).

    Returns ``(coefficients, condition_number)``.
    """
    r = np.asarray(r_list, float)
    degree = len(r) - 1 if degree is None else degree
    V = np.vander(1.0 / r, degree + 1, increasing=True)
    cond = float(np.linalg.cond(V))
    if cond > 1e12:
        raise SolverError(f"r-range too narrow for the fit (condition number {cond:.2e})")
    vals = np.asarray(values)
    flat = vals.reshape(len(r), -1)
    coef, *_ = np.linalg.lstsq(V, flat, rcond=None)
    return coef.reshape((degree + 1,) + vals.shape[1:]), cond


@dataclass
class ExpansionReport:
    r_list: list
    coefficients: np.ndarray
    order0_error: float
    order1_norm: float
    order1_mean_norm: float
    order2_base: np.ndarray
    D_sigma_f: np.ndarray
    order2_rel_error: float
    scale: float
    condition: float


def expansion_operator_check(surface, f, r_list=(32, 64, 128, 256), background=None, degree=None):
    """Fit ``L_r(f)`` in inverse powers of ``r`` and compare with the model operators.

    ``background(r)`` returns the Kähler form at ``r`` (default ``ω_r``).  For
    a base function ``f`` the O(1) coefficient should vanish, the ``r^{-1}``
    coefficient should too, and the fibrewise mean of the ``r^{-2}``
    coefficient should be ``D_Σ f``.
    """
    g = surface.grid
    r_list = sorted(float(r) for r in r_list)
    if len(r_list) < 4:
        raise ValueError("need at least four values of r")
    f = np.asarray(f, float)
    phi = g.pullback_base(f) if f.ndim == 1 else f
    vals = []
    for r in r_list:
        om = surface.omega(r) if background is None else background(r)
        vals.append(linearize_scal(om, g)(phi))
    coef, cond = fit_inverse_powers(r_list, np.array(vals), degree)
    vv = surface.fibre_metric
    # O(1): fibrewise operator (Δ_V² − s0 Δ_V) φ
    dv = vertical_laplacian(surface, phi)
    expected0 = vertical_laplacian(surface, dv) - surface.s0 * dv
    scale = float(np.max(np.abs(vals[0]))) * r_list[0] ** 2 if f.ndim == 1 else float(np.max(np.abs(expected0)))
    scale = max(scale, 1e-300)
    err0 = float(np.max(np.abs(coef[0] - expected0))) / scale
    c1 = coef[1]
    n1 = float(np.max(np.abs(c1))) / scale
    m1 = float(np.max(np.abs(fibrewise_mean(c1, g, vv)))) / scale
    base2 = fibrewise_mean(coef[2], g, vv)
    Dsf = np.zeros_like(base2)
    rel2 = float("nan")
    if f.ndim == 1:
        Dsf = base_sigma_operator(surface) @ f
        rel2 = float(np.max(np.abs(base2 - Dsf)) / max(np.max(np.abs(Dsf)), 1e-300))
    return ExpansionReport(list(r_list), coef, err0, n1, m1, base2, Dsf, rel2, scale, cond)


def base_sigma_operator(surface):
    """Dense ``D_Σ = Δ_Σ² − (Scal(Ω_Σ) + π_Σ η) Δ_Σ`` on the base."""
    from .fibre import compute_xi_eta

    g = surface.grid
    _, eta = compute_xi_eta(surface.omega0, surface.mu, g)
    coef = curve_scal(g.base, surface.mu) + fibrewise_mean(eta, g, surface.fibre_metric)
    Lap = g.base.dense("lap").real / surface.mu[:, None]
    return Lap @ Lap - coef[:, None] * Lap


def delta_r_identity(surface, phi, r):
    """Sup-difference between ``Δ_{ω_r} φ`` and ``Δ_V φ + Δ_H φ/(r+θ)``."""
    g = surface.grid
    om = surface.omega(r)
    lhs = np.real(om.trace_against(i_del_delbar(phi, g)))
    rhs = vertical_laplacian(surface, phi) + np.real(horizontal_laplacian(surface, phi)) / (r + surface.theta)
    return float(np.max(np.abs(lhs - rhs)))


@dataclass
class ScalExpansion:
    r_list: list
    coefficients: np.ndarray
    order0_error: float
    expected1: np.ndarray
    rel_error1: float
    rel_error1_canonical: float


def scal_expansion_check(surface, r_list=(32, 64, 128, 256), degree=None):
    """Fit ``Scal(ω_r)`` in inverse powers of ``r`` and compare the ``r^{-1}`` field.

    The expected coefficient is ``Scal(ω_Σ) + η + Δ_V θ`` with ``η`` the
    horizontal part of ``iF_V``; when ``ω₀ = −iF_V`` this is
    ``Scal(ω_Σ) − θ + Δ_V θ``, which is also reported (``rel_error1_canonical``).
    """
    from .fibre import compute_xi_eta

    g = surface.grid
    r_list = sorted(float(r) for r in r_list)
    vals = np.array([np.real(scal(surface.omega(r), g)) for r in r_list])
    coef, _ = fit_inverse_powers(r_list, vals, degree)
    _, eta = compute_xi_eta(surface.omega0, surface.mu, g)
    th = surface.theta
    base = g.pullback_base(curve_scal(g.base, surface.mu))
    lap_th = vertical_laplacian(surface, th)
    expected = base + eta + lap_th
    canonical = base - th + lap_th
    scale = float(np.abs(expected).max())
    return ScalExpansion(
        r_list, coef, float(np.abs(coef[0] - surface.s0).max()), expected,
        float(np.abs(coef[1] - expected).max()) / scale,
        float(np.abs(coef[1] - canonical).max()) / float(np.abs(canonical).max()),
    )
