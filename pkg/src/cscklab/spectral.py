"""First eigenvalues of Δ, of ∂̄ on vector fields and of 𝒟*𝒟, and the size of P_r."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fibre import GeometryInputError
from .grid import Form11
from .kahler import model_form, real_metric
from .linear import (DstarD, LinearOperatorHandle, SolverError, _weight, dbar_vector,
                     inverse_norm, laplacian_operator, linearize_scal, mean_zero_projection,
                     product_resolved_basis, reduced_eigenvalues, tensor_metric)

KERNEL_TOL = 1e-10


# -- the submersion model ----------------------------------------------------------

@dataclass
class ModelMetric:
    h: Form11
    comparison: float
    dvol_ratio: float


def _c0_tensor_norm(diff, h):
    """sup of ``|a|_h`` for the real symmetric tensors of two (1,1)-forms."""
    G = np.moveaxis(real_metric(h), (0, 1), (-2, -1))
    A = np.moveaxis(real_metric(diff), (0, 1), (-2, -1))
    Gi = np.linalg.inv(G)
    M = Gi @ A
    return float(np.sqrt(np.max(np.abs(np.trace(M @ M, axis1=-2, axis2=-1)))))


def model_metric_h(surface, r):
    """Submersion metric ``h_r``: ω₀ on vertical vectors, ``r ω_Σ`` on horizontal ones.

    Returns ``h_r`` in product coordinates, ``‖ω_r − h_r‖_{C⁰(h_r)}`` and the
    ratio ``dvol(h_r)/dvol(h_1)``, which is ``r``.
    """
    h = model_form(surface, r)
    diff = surface.omega(r) - h
    h1 = model_form(surface, 1.0)
    ratio = np.real(h.det()) / np.real(h1.det())
    return ModelMetric(h, _c0_tensor_norm(diff, h), float(np.mean(ratio)))


# -- eigenvalues -------------------------------------------------------------------

def _ascending(op, omega, basis, k=None):
    vals = reduced_eigenvalues(op, basis, k)
    return np.sort(vals)


def _kernel_split(vals, what, expected=1, scale=None):
    """First eigenvalue above the ``expected``-dimensional kernel.

    Zero is judged relative to ``scale`` (default: the largest eigenvalue
    given).
    """
    scale = max(1.0, float(np.abs(vals).max()) if scale is None else float(scale))
    small = np.abs(vals[:expected]).max() if expected else 0.0
    if small > KERNEL_TOL * scale:
        raise SolverError(f"{what}: smallest eigenvalue {small:.3e} is not zero")
    nxt = vals[expected]
    if nxt <= KERNEL_TOL * scale:
        raise GeometryInputError(f"{what}: kernel is larger than expected "
                                 f"(eigenvalue {nxt:.3e})")
    return float(nxt)


def scalar_spectrum(omega, grid, k=None, basis="resolved"):
    """Lowest eigenvalues of ``Δ_ω`` (ascending) on the resolved space."""
    B = product_resolved_basis(grid) if basis == "resolved" else None
    return _ascending(laplacian_operator(omega, grid), omega, B, k)


def _top_scale(op, grid):
    """Largest Rayleigh quotient over point masses: the size of the top eigenvalue."""
    e = np.zeros(grid.shape)
    e[0, 0] = 1.0
    return float(np.abs(op(e)[0, 0]))


def lambda1_scalar(omega, grid):
    """First nonzero eigenvalue of Δ_ω; the kernel must be the constants."""
    scale = _top_scale(laplacian_operator(omega, grid), grid)
    return _kernel_split(scalar_spectrum(omega, grid, k=3), "Laplacian", scale=scale)


def lichnerowicz_spectrum(omega, grid, k=None):
    B = product_resolved_basis(grid)
    return _ascending(DstarD(omega, grid), omega, B, k)


def lambda1_DstarD(omega, grid):
    """First nonzero eigenvalue of 𝒟*𝒟 on the resolved space; kernel must be the constants."""
    scale = _top_scale(DstarD(omega, grid), grid)
    return _kernel_split(lichnerowicz_spectrum(omega, grid, k=3), "D*D", scale=scale)


def _masked_basis(curve, mask_cones):
    Bc = curve.resolved_basis()
    cones = getattr(curve, "cone_vertices", np.array([], int))
    if not mask_cones or len(cones) == 0:
        return Bc
    # resolved functions vanishing at the cone vertices
    C = Bc[cones]
    _, s, vh = np.linalg.svd(C)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max()))) if len(s) else 0
    return Bc @ vh[rank:].T


def dbar_vf_spectrum(omega, grid, fibre_only=False, mask_cones=True, k=None, block=256):
    """Eigenvalues of ``∂̄*∂̄`` on type-(1,0) vector fields.

    ``|ξ|² = ½ ξᵀ H ξ̄`` and ``|∂̄ξ|² = Re tr(T† Hᵀ T H⁻¹)``.  On translation
    surfaces the frame field ``∂_z`` is only meromorphic for the uniformized
    metric, so each component is required to vanish at the cone vertices of
    its own factor.  The
    stiffness matrix is assembled in blocks of ``block`` basis fields.
    """
    F, B = grid.fibre, grid.base
    if not (F.global_frame and B.global_frame):
        raise NotImplementedError("vector-field spectra need global holomorphic frames")
    w = _weight(omega, grid).ravel()
    # ∂_z is singular only at fibre cones and ∂_w only at base cones
    Bf, Bb = _masked_basis(F, mask_cones), _masked_basis(B, mask_cones)
    if fibre_only:
        ones = np.ones((B.n, 1)) / np.sqrt(B.n)
        comps = [(np.kron(ones, Bf), "v")]
    else:
        comps = [(np.kron(B.resolved_basis(), Bf), "v"), (np.kron(Bb, F.resolved_basis()), "h")]
    sizes = [c[0].shape[1] for c in comps]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    m = int(offs[-1])

    def tensors(lo, hi):
        """``∂̄ξ`` for basis fields ``lo..hi-1``, shape ``(count, 4·n)``."""
        out = []
        for (basis, which), o0, o1 in zip(comps, offs[:-1], offs[1:]):
            a, b = max(lo, o0), min(hi, o1)
            if a >= b:
                continue
            f = basis[:, a - o0:b - o0].T.reshape((b - a,) + grid.shape).astype(complex)
            z = np.zeros_like(f)
            T = dbar_vector(f, z, grid) if which == "v" else dbar_vector(z, f, grid)
            out.append(np.stack([T.vv, T.vh, T.hv, T.hh], 1).reshape(b - a, -1))
        return np.vstack(out)

    w4 = np.tile(w, 4)
    Q = np.empty((m, m), complex)
    for j in range(0, m, block):
        blk = tensors(j, min(m, j + block)).reshape((-1, 4) + grid.shape)
        P = tensor_metric(Form11(blk[:, 0], blk[:, 1], blk[:, 3], hv=blk[:, 2]), omega)
        WP = (w4 * np.stack([P.vv, P.vh, P.hv, P.hh], 1).reshape(len(blk), -1)).T
        del blk, P
        for i in range(0, m, block):
            Q[i:i + block, j:j + block] = np.conj(tensors(i, min(m, i + block))) @ WP
    Q += Q.conj().T
    Q *= 0.5
    # Gram matrix M_ij = ½ Σ_ab H_ab ξ_j^a conj(ξ_i^b) of real basis fields
    coef = {("v", "v"): omega.vv, ("h", "v"): omega.vh, ("v", "h"): omega.hv, ("h", "h"): omega.hh}
    M = np.zeros((m, m), complex)
    for (Bi, wi), i0, i1 in zip(comps, offs[:-1], offs[1:]):
        for (Bj, wj), j0, j1 in zip(comps, offs[:-1], offs[1:]):
            c = np.ravel(np.broadcast_to(coef[(wi, wj)], grid.shape))
            M[i0:i1, j0:j1] = 0.5 * (Bi.T @ ((w * c)[:, None] * Bj))
    M += M.conj().T
    M *= 0.5
    vals = sla.eigh(Q, M, eigvals_only=True, overwrite_a=True, overwrite_b=True)
    return vals if k is None else vals[:k]


def lambda1_dbar_vf(omega, grid, fibre_only=False, mask_cones=True):
    vals = dbar_vf_spectrum(omega, grid, fibre_only, mask_cones)
    scale = max(1.0, float(np.abs(vals).max()))
    if vals[0] <= KERNEL_TOL * scale:
        raise GeometryInputError(f"holomorphic vector fields detected (eigenvalue {vals[0]:.3e})")
    return float(vals[0])


# -- P_r and perturbations ---------------------------------------------------------

def inverse_norm_r(omega, grid, method="auto", iterations=20, seed=0):
    """``‖P_r‖``: inverse of ``pL`` on ω-mean-zero fields in L²(ω)."""
    return inverse_norm(linearize_scal(omega, grid), omega, method=method,
                        iterations=iterations, seed=seed)


@dataclass
class PerturbationBound:
    difference: float
    threshold: float
    q_norm: float
    holds: bool
    bound: float

    @property
    def margin(self):
        return self.threshold - self.difference


def operator_norm(A, omega, iterations=20, seed=0):
    """Power iteration for ``‖pA p‖`` in L²(ω) (needs ``A.adjoint``)."""
    grid = A.grid
    p = mean_zero_projection(omega, grid)
    rng = np.random.default_rng(seed)
    x = p(rng.standard_normal(grid.shape))
    x /= A.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = p(A(p(x)))
        z = p(A.adjoint(p(y)))
        nz = A.norm(z)
        if nz == 0:
            return 0.0
        est = np.sqrt(nz)
        x = z / nz
    return float(est)


def perturbation_invertibility(L, D, q_norm, omega, iterations=20, seed=0, require=False):
    """If ``‖pL − D‖ ≤ 1/(2‖Q‖)`` then ``‖P‖ ≤ 2‖Q‖`` (geometric series)."""
    if q_norm <= 0:
        raise ValueError("inverse bound of D must be positive")
    pl = LinearOperatorHandle(lambda x: mean_zero_projection(omega, L.grid)(L(x)), L.grid, L.weight,
                              lambda x: L.adjoint(mean_zero_projection(omega, L.grid)(x)), False, "pL")
    diff = operator_norm(pl - D, omega, iterations, seed)
    thr = 1.0 / (2.0 * q_norm)
    res = PerturbationBound(diff, thr, q_norm, diff <= thr, 2.0 * q_norm)
    if require and not res.holds:
        raise SolverError(f"perturbation hypothesis fails: |pL - D| = {diff:.3e} > {thr:.3e} "
                          f"(margin {res.margin:.3e})")
    return res


# -- sweeps and reports ------------------------------------------------------------

@dataclass
class ExponentFit:
    exponent: float
    stderr: float
    r2: float
    conclusive: bool

    def to_dict(self):
        return dict(self.__dict__)


def fit_exponent(r_list, values, min_r2=0.99):
    x = np.log(np.asarray(r_list, float))
    y = np.log(np.asarray(values, float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(len(x) - 2, 1)
    se = float(np.sqrt(ss_res / dof / max(np.sum((x - x.mean()) ** 2), 1e-300)))
    return ExponentFit(float(coef[0]), se, r2, bool(r2 >= min_r2))


COLUMNS = ("r", "lambda1_scalar", "lambda1_dbar", "lambda1_lich", "inv_norm")


@dataclass
class SpectralReport:
    r_list: list
    lambda1_scalar: list
    lambda1_dbar: list
    lambda1_lich: list
    inv_norm: list
    fits: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def rows(self):
        return [dict(zip(COLUMNS, vals)) for vals in zip(self.r_list, self.lambda1_scalar,
                                                          self.lambda1_dbar, self.lambda1_lich,
                                                          self.inv_norm)]

    def to_csv(self, extra=None):
        buf = io.StringIO()
        cols = list(COLUMNS) + ([] if extra is None else list(extra))
        wr = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for row in self.rows():
            row = {k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in row.items()}
            if extra:
                row.update(extra)
            wr.writerow(row)
        return buf.getvalue()

    def to_dict(self):
        return {
            "rows": self.rows(),
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "flags": list(self.flags),
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def spectral_sweep(background, grid, r_list=(32, 64, 128, 256), quantities=COLUMNS[1:],
                   mask_cones=True, inv_method="auto"):
    """Measure the spectral quantities at every ``r`` and fit power laws.

    ``background(r)`` returns the Kähler form (``ω_r`` or a ladder metric).
    """
    r_list = [float(r) for r in r_list]
    out = {q: [] for q in COLUMNS[1:]}
    for r in r_list:
        om = background(r)
        for q in COLUMNS[1:]:
            if q not in quantities:
                out[q].append(float("nan"))
            elif q == "lambda1_scalar":
                out[q].append(lambda1_scalar(om, grid))
            elif q == "lambda1_dbar":
                out[q].append(lambda1_dbar_vf(om, grid, mask_cones=mask_cones))
            elif q == "lambda1_lich":
                out[q].append(lambda1_DstarD(om, grid))
            else:
                out[q].append(inverse_norm_r(om, grid, method=inv_method))
    rep = SpectralReport(r_list, out["lambda1_scalar"], out["lambda1_dbar"], out["lambda1_lich"],
                         out["inv_norm"])
    for q in quantities:
        vals = np.array(out[q])
        if np.all(np.isfinite(vals)) and np.all(vals > 0) and len(r_list) >= 2:
            rep.fits[q] = fit_exponent(r_list, vals)
            if not rep.fits[q].conclusive:
                rep.flags.append(f"{q}: exponent fit inconclusive (R^2 = {rep.fits[q].r2:.4f})")
        if q.startswith("lambda1") and np.any(np.diff(vals) > 1e-9 * np.abs(vals[:-1])):
            rep.flags.append(f"{q}: not monotone decreasing in r")
    return rep
