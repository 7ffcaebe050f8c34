"""Estimator-style facade over the ladder, spectral probe and Newton solve.

Constructor arguments are plain hyperparameters, ``fit`` takes a fibred
surface and returns ``self``, and fitted quantities end in an underscore.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator

from .ladder import build_ladder
from .newton import ScalMap, certificate, newton_solve, verify_cscK
from .spectral import COLUMNS, spectral_sweep


class CscKSolver(BaseEstimator):
    """Ladder of order ``order`` at ``r``, IFT certificate, then Newton.

    >>> solver = CscKSolver(order=2, r=128).fit(surface)      # doctest: +SKIP
    >>> solver.certificate_.margin, solver.report_.deviation  # doctest: +SKIP
    """

    def __init__(self, order=2, r=128.0, tol=1e-8, max_iter=8, update="chord", method="circle", seed=0):
        self.order = order
        self.r = r
        self.tol = tol
        self.max_iter = max_iter
        self.update = update
        self.method = method
        self.seed = seed

    def fit(self, surface, y=None):
        self.surface_ = surface
        self.ladder_ = build_ladder(surface, self.order, method=self.method)
        self.scal_map_ = ScalMap(self.ladder_.omega(self.r), surface.grid)
        cert = certificate(self.scal_map_, seed=self.seed)
        self.certificate_ = newton_solve(self.scal_map_, tol=self.tol, max_iter=self.max_iter,
                                         cert=cert, update=self.update)
        self.phi_ = self.certificate_.phi
        self.omega_ = self.scal_map_.metric(self.phi_)
        self.report_ = verify_cscK(self.omega_, surface.grid, surface, self.r)
        return self

    def score(self, surface=None, y=None):
        """Negative sup-deviation of the scalar curvature from its mean."""
        return -self.report_.deviation


class SpectralProbe(BaseEstimator):
    """Spectral quantities of the ladder metrics over an r-list, with fitted exponents."""

    def __init__(self, r_list=(32, 64, 128, 256), order=2, quantities=COLUMNS[1:], mask_cones=True):
        self.r_list = r_list
        self.order = order
        self.quantities = quantities
        self.mask_cones = mask_cones

    def fit(self, surface, y=None):
        self.ladder_ = build_ladder(surface, self.order)
        self.report_ = spectral_sweep(self.ladder_.omega, surface.grid, self.r_list,
                                      quantities=self.quantities, mask_cones=self.mask_cones)
        self.exponents_ = {k: v.exponent for k, v in self.report_.fits.items()}
        return self
