"""Fields, (1,1)-forms and their calculus on a product of two curves.

A scalar field is a plain ``numpy`` array of shape ``(n_base, n_fibre)``:
the fibre index varies fastest, so every fibre is a contiguous row.  Leading
batch axes are allowed everywhere.

A real (1,1)-form is stored as the Hermitian matrix of its coefficients
against the reference forms ``(i/2) dz ^ dzbar`` (fibre coordinate ``z``) and
``(i/2) dw ^ dwbar`` (base coordinate ``w``)::

    [[vv, vh],
     [hv, hh]]        hv = conj(vh) for real forms

``hv`` is kept separately only when a form is continued to complex values of
a parameter; ``Form11.hv`` falls back to ``conj(vh)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import Curve, GridError


@dataclass(frozen=True, eq=False)
class ProductGrid:
    """Sampling of ``S x Sigma``: fibre curve times base curve."""

    fibre: Curve
    base: Curve

    @property
    def shape(self):
        return (self.base.n, self.fibre.n)

    @property
    def size(self):
        return self.base.n * self.fibre.n

    @property
    def mass(self):
        return np.outer(self.base.mass, self.fibre.mass)

    def index(self, i_fibre, i_base):
        return np.asarray(i_base) * self.fibre.n + np.asarray(i_fibre)

    def unravel(self, idx):
        i_base, i_fibre = np.divmod(np.asarray(idx), self.fibre.n)
        return i_fibre, i_base

    def check(self, phi, name="field"):
        phi = np.asarray(phi)
        if phi.shape[-2:] != self.shape:
            raise GridError(f"{name} has shape {phi.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(phi)):
            raise GridError(f"{name} has non-finite entries")
        return phi

    def pullback_base(self, f):
        """Constant-along-fibres field from a base array ``(..., n_base)``."""
        f = np.asarray(f)
        return np.broadcast_to(f[..., :, None], f.shape[:-1] + self.shape).copy()

    def pullback_fibre(self, u):
        u = np.asarray(u)
        return np.broadcast_to(u[..., None, :], u.shape[:-1] + self.shape).copy()

    def filter(self, phi):
        return self.base.filter(self.fibre.filter(phi, -1), -2)

    def describe(self):
        def one(c):
            if c.kind == "torus":
                return {"kind": "torus", "shape": list(c.shape), "tau": [c.tau.real, c.tau.imag]}
            return {"kind": "mesh", "name": c.name, "vertices": c.n, "faces": int(len(c.faces))}

        return {"fibre": one(self.fibre), "base": one(self.base), "order": "fibre-major"}


def make_product_grid(fibre, base):
    if not isinstance(fibre, Curve) or not isinstance(base, Curve):
        raise GridError("fibre and base must be curves")
    return ProductGrid(fibre, base)


@dataclass(frozen=True, eq=False)
class HorizontalDistribution:
    """Horizontal lift ``d/dw + lift * d/dz`` at every sample point."""

    lift: np.ndarray

    @classmethod
    def identity(cls, grid):
        return cls(np.zeros(grid.shape, complex))

    def express(self, form):
        """Components of a product-coordinate form in the adapted frame."""
        if form.frame is self:
            return form
        if form.frame is not None:
            raise GridError("form is already expressed in another splitting")
        k = self.lift
        vv, vh, hv, hh = form.vv, form.vh, form.hv, form.hh
        return Form11(
            vv,
            vh + np.conj(k) * vv,
            hh + k * vh + np.conj(k) * hv + np.abs(k) ** 2 * vv,
            hv=None if form._hv is None else hv + k * vv,
            frame=self,
        )

    def to_product(self, form):
        if form.frame is None:
            return form
        if form.frame is not self:
            raise GridError("form is expressed in another splitting")
        k = self.lift
        vv = form.vv
        vh = form.vh - np.conj(k) * vv
        hv = form.hv - k * vv
        hh = form.hh - k * vh - np.conj(k) * hv - np.abs(k) ** 2 * vv
        return Form11(vv, vh, hh, hv=None if form._hv is None else hv)


@dataclass(frozen=True, eq=False)
class Form11:
    """Real (1,1)-form as a field of 2x2 Hermitian matrices."""

    vv: np.ndarray
    vh: np.ndarray
    hh: np.ndarray
    hv: np.ndarray | None = None
    frame: HorizontalDistribution | None = None

    def __post_init__(self):
        object.__setattr__(self, "_hv", self.hv)
        if self.hv is None:
            object.__setattr__(self, "hv", np.conj(self.vh))

    @property
    def is_real(self):
        return self._hv is None

    def _check_frame(self, other):
        if self.frame is not other.frame:
            raise GridError("cannot combine forms expressed in different splittings")

    def _hv_or_none(self, value, *others):
        if self._hv is None and all(o._hv is None for o in others):
            return None
        return value

    def __add__(self, other):
        self._check_frame(other)
        return Form11(self.vv + other.vv, self.vh + other.vh, self.hh + other.hh,
                      hv=self._hv_or_none(self.hv + other.hv, other), frame=self.frame)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c):
        if np.iscomplexobj(c) and np.any(np.imag(c) != 0):
            return Form11(c * self.vv, c * self.vh, c * self.hh, hv=c * self.hv, frame=self.frame)
        return Form11(c * self.vv, c * self.vh, c * self.hh,
                      hv=None if self._hv is None else c * self.hv, frame=self.frame)

    def __neg__(self):
        return (-1.0) * self

    def det(self):
        return self.vv * self.hh - self.vh * self.hv

    def trace_against(self, other):
        """``tr(H^{-1} B)`` with ``H`` this form and ``B`` ``other``."""
        self._check_frame(other)
        return (self.hh * other.vv + self.vv * other.hh
                - self.vh * other.hv - self.hv * other.vh) / self.det()

    def matrix(self):
        """Stacked Hermitian matrices, shape ``(..., 2, 2)``."""
        return np.stack([np.stack([self.vv, self.vh], -1), np.stack([self.hv, self.hh], -1)], -2)

    def positive(self):
        d = self.det()
        return bool(np.all(np.real(self.vv) > 0) and np.all(np.real(d) > 0))

    def restrict(self, i_base):
        return Form11(self.vv[..., i_base, :], self.vh[..., i_base, :], self.hh[..., i_base, :],
                      hv=None if self._hv is None else self.hv[..., i_base, :])

    @classmethod
    def zeros(cls, grid):
        z = np.zeros(grid.shape)
        return cls(z, np.zeros(grid.shape, complex), z.copy())

    @classmethod
    def from_base(cls, grid, mu):
        """Pullback of the base form ``mu (i/2) dw ^ dwbar``."""
        z = np.zeros(grid.shape)
        return cls(z, np.zeros(grid.shape, complex), grid.pullback_base(mu))

    @classmethod
    def from_fibre(cls, grid, lam):
        z = np.zeros(grid.shape)
        return cls(np.broadcast_to(lam, grid.shape).astype(float).copy(), np.zeros(grid.shape, complex), z)


@dataclass(frozen=True, eq=False)
class VectorFieldData:
    """Type-(1,0) vector field ``v d/dz + h d/dw`` sampled on the grid."""

    v: np.ndarray
    h: np.ndarray

    def __add__(self, other):
        return VectorFieldData(self.v + other.v, self.h + other.h)

    def __rmul__(self, c):
        return VectorFieldData(c * self.v, c * self.h)


def i_del_delbar(phi, grid, splitting=None):
    """Hermitian coefficient matrix of ``i d dbar phi`` (positive convention).

    The diagonal entries are the factor Laplacians, so ``vv`` of
    ``cos(2 pi x)`` on the unit torus is ``2 pi^2 cos(2 pi x)``.
    """
    F, B = grid.fibre, grid.base
    vv = F.lap(phi, -1)
    hh = B.lap(phi, -2)
    vh = -2.0 * F.dz(B.dzbar(phi, -2), -1)
    hv = None
    if np.iscomplexobj(phi):
        hv = -2.0 * F.dzbar(B.dz(phi, -2), -1)
    form = Form11(vv, vh, hh, hv=hv)
    return form if splitting is None else splitting.express(form)


def i_del_delbar_T(W, grid):
    """Transpose of ``phi -> sum(contract(W, i_del_delbar(phi)))`` for real ``phi``.

    ``W`` is a :class:`Form11` of coefficient fields (not necessarily
    Hermitian); the contraction is ``W.vv*vv + W.vh*vh + W.hv*hv + W.hh*hh``
    summed over points without weights.
    """
    F, B = grid.fibre, grid.base
    out = F.lap_T(W.vv, -1) + B.lap_T(W.hh, -2)
    out = out - 2.0 * B.dzbar_T(F.dz_T(W.vh, -1), -2) - 2.0 * B.dz_T(F.dzbar_T(W.hv, -1), -2)
    return np.real(out)


def contract(W, form):
    return W.vv * form.vv + W.vh * form.vh + W.hv * form.hv + W.hh * form.hh


def integrate(phi, grid, density=None):
    """Quadrature of ``phi * density`` against the reference product measure."""
    phi = np.asarray(phi)
    if density is not None:
        density = np.asarray(density)
        if np.any(np.real(density) < 0):
            raise GridError("integration density has negative entries")
        phi = phi * density
    return np.sum(phi * grid.mass, axis=(-2, -1))


def fibrewise_mean(phi, grid, fibre_density=None):
    """Mean of ``phi`` over every fibre; returns a base array ``(..., n_base)``."""
    w = grid.fibre.mass if fibre_density is None else grid.fibre.mass * np.asarray(fibre_density)
    w = np.broadcast_to(w, grid.shape)
    if np.any(np.sum(w, -1) <= 0):
        raise GridError("fibre volumes must be positive")
    return np.sum(phi * w, -1) / np.sum(w, -1)


def fibre_mean_zero_part(phi, grid, fibre_density=None):
    return phi - fibrewise_mean(phi, grid, fibre_density)[..., None]


def declare_splitting(omega0, grid=None):
    """Horizontal distribution ``omega0``-orthogonal to the fibres."""
    if omega0.frame is not None:
        raise GridError("splitting must be declared from a product-coordinate form")
    if np.any(np.real(omega0.vv) <= 0):
        raise GridError("fibrewise restriction of omega0 is not positive")
    return HorizontalDistribution(-np.conj(omega0.vh) / omega0.vv if omega0.is_real
                                  else -omega0.hv / omega0.vv)


def wedge(a, b, grid):
    """``integral a ^ b`` for two (1,1)-forms in product coordinates."""
    dens = a.vv * b.hh + a.hh * b.vv - a.vh * b.hv - a.hv * b.vh
    return np.real(integrate(dens, grid))


def exterior_derivative_norm(form, grid):
    """L2 size of the discrete ``d`` of a (1,1)-form.

    Closedness of ``(i/2)(A dz dzb + B dz dwb + conj(B) dw dzb + C dw dwb)`` is
    ``d_w A = d_z conj(B)`` and ``d_z C = d_w B``.
    """
    F, Bc = grid.fibre, grid.base
    e1 = Bc.dz(form.vv, -2) - F.dz(form.hv, -1)
    e2 = F.dz(form.hh, -1) - Bc.dz(form.vh, -2)
    return float(np.sqrt(np.real(integrate(np.abs(e1) ** 2 + np.abs(e2) ** 2, grid))))
