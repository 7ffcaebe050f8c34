"""Quantitative inverse function theorem and the final Newton solve.

For a Banach-space map ``F`` with ``DF(0)`` invertible (inverse ``P``) and a
nonlinear part ``N = F − DF(0)`` that is Lipschitz with constant ``K·M`` on
the ball of radius ``M``, the radius where that constant reaches
``1/(2‖P‖)`` is ``δ′ = 1/(2‖P‖K)``, and every ``y`` with ``‖y − F(0)‖ < δ``,
``δ = δ′/(2‖P‖)``, is hit.  Here ``F = S_r``, ``S_r(φ) = p Scal(ω + i∂̄∂φ)``,
and all norms are L² of the background ω.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fibre import ConvergenceError
from .grid import i_del_delbar
from .kahler import PositivityError, intersection_numbers, mean, scal, volume_density
from .linear import (inverse_norm, linearize_scal, mean_zero_projection,
                     solve_mean_zero)


# -- S_r ----------------------------------------------------------------------------

@dataclass(eq=False)
class ScalMap:
    """``S(φ) = p Scal(ω + i∂̄∂φ)`` with ``p`` the ω-mean-zero projection."""

    omega: object
    grid: object

    def __post_init__(self):
        self.p = mean_zero_projection(self.omega, self.grid)
        self.L = linearize_scal(self.omega, self.grid)

    def metric(self, phi):
        om = self.omega + i_del_delbar(phi, self.grid)
        if not om.positive():
            raise PositivityError("omega + i ddbar phi is not positive")
        return om

    def __call__(self, phi):
        return self.p(np.real(scal(self.metric(phi), self.grid)))

    def linear(self, phi):
        return self.p(self.L(phi))

    def nonlinear(self, phi):
        """``N(φ) = S(φ) − S(0) − DS(0)φ``."""
        return self(phi) - self(np.zeros(self.grid.shape)) - self.linear(phi)

    def norm(self, phi):
        return self.L.norm(phi)


# -- Lipschitz constant of N --------------------------------------------------------

@dataclass
class LipschitzLaw:
    K: float
    radii: list
    ratios: list
    samples: int

    def constant(self, M):
        return self.K * M

    def to_dict(self):
        return dict(self.__dict__)


def estimate_lipschitz(N, sample, norm, M, levels=3, samples=12, seed=0):
    """Sampled Lipschitz constants of ``N`` on balls of radius ``M, M/2, ...``.

    ``sample(rng, radius)`` returns a point of norm exactly ``radius``.  Each
    pair consists of a point on the sphere and a nearby or random partner in
    the ball, which is where the constant of a quadratic map is attained.
    Returns the law ``ratio ≈ K·M`` fitted through the origin.
    """
    rng = np.random.default_rng(seed)
    radii, ratios = [], []
    for j in range(levels):
        rad = M / 2**j
        best = 0.0
        for s in range(samples):
            x = sample(rng, rad)
            if s % 2 == 0:
                y = x * (1 - 0.05)
            else:
                y = sample(rng, rad * rng.uniform(0.1, 1.0))
            d = norm(x - y)
            if d == 0:
                continue
            best = max(best, norm(N(x) - N(y)) / d)
        radii.append(rad)
        ratios.append(best)
    r, q = np.array(radii), np.array(ratios)
    K = float(r @ q / (r @ r))
    return LipschitzLaw(K, radii, ratios, samples)


def ift_radii(inv_norm, law):
    """``(δ′, δ)`` from ``‖P‖`` and a linear law ``Lip(M) = K·M``."""
    K = law.K if isinstance(law, LipschitzLaw) else float(law)
    if inv_norm <= 0:
        raise ValueError("inverse norm must be positive")
    if not K > 0:
        raise ValueError("Lipschitz law must be increasing in the radius")
    dprime = 1.0 / (2.0 * inv_norm * K)
    return dprime, dprime / (2.0 * inv_norm)


def low_mode_sampler(smap, modes=12):
    """Random combinations of smooth product modes, scaled to a prescribed L² norm."""
    g = smap.grid
    lf, Vf = g.fibre.eig_laplacian()
    lb, Vb = g.base.eig_laplacian()
    pairs = sorted(((lf[i] + lb[j], i, j) for i in range(min(6, g.fibre.n))
                    for j in range(min(6, g.base.n))))[1:modes + 1]
    fields = [np.outer(Vb[:, j], Vf[:, i]) for _, i, j in pairs]

    def sample(rng, radius):
        c = rng.standard_normal(len(fields))
        phi = smap.p(sum(ci * f for ci, f in zip(c, fields)))
        return phi * (radius / smap.norm(phi))

    return sample


def max_admissible_radius(smap, sample, M, seed=0, tries=8):
    """Largest radius (halving from ``M``) at which sampled potentials keep ω positive."""
    rng = np.random.default_rng(seed)
    rad = M
    while rad > 1e-12 * M:
        try:
            for _ in range(tries):
                smap.metric(sample(rng, rad))
            return rad
        except PositivityError:
            rad /= 2
    return 0.0


def scal_lipschitz(smap, M, modes=12, levels=3, samples=12, seed=0):
    sample = low_mode_sampler(smap, modes)
    ok = max_admissible_radius(smap, sample, M, seed)
    if ok < M:
        raise PositivityError(f"positivity is lost inside the ball of radius {M:.3e}; "
                              f"largest admissible radius about {ok:.3e}")
    return estimate_lipschitz(smap.nonlinear, sample, smap.norm, M, levels, samples, seed)


# -- certificate and Newton --------------------------------------------------------

@dataclass
class NewtonCertificate:
    inv_norm: float
    lipschitz: float
    delta_prime: float
    delta: float
    s0_norm: float
    margin: float
    residuals: list = field(default_factory=list)
    converged: bool = False
    certified: bool = False
    damped: bool = False
    iterations: int = 0
    scal_deviation: float = float("nan")
    scal_mean: float = float("nan")
    phi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self, with_phi=True):
        d = {k: v for k, v in self.__dict__.items() if k != "phi"}
        if with_phi and self.phi is not None:
            d["phi"] = np.asarray(self.phi).ravel().tolist()
        return d

    def to_json(self, with_phi=True):
        return json.dumps(self.to_dict(with_phi), indent=1, sort_keys=True, default=float)


def certificate(smap, inv_norm=None, law=None, M=None, seed=0):
    """Hypothesis check of the inverse function theorem at the background."""
    zero = np.zeros(smap.grid.shape)
    s0 = smap.norm(smap(zero))
    if inv_norm is None:
        inv_norm = inverse_norm(smap.L, smap.omega)
    if law is None:
        if M is None:
            # potentials of pointwise size about 1e-3: well inside the positive
            # cone and far above round-off
            M = 1e-3 * smap.norm(np.ones(smap.grid.shape))
        law = scal_lipschitz(smap, M, seed=seed)
    dprime, delta = ift_radii(inv_norm, law)
    return NewtonCertificate(inv_norm=float(inv_norm), lipschitz=float(law.K), delta_prime=dprime,
                             delta=delta, s0_norm=float(s0), margin=float(s0 / delta),
                             certified=bool(s0 < delta),
                             meta={"lipschitz_law": law.to_dict()})


def newton_solve(smap, tol=1e-8, max_iter=8, cert=None, update="chord", damping=True):
    """Iterate ``φ ← φ − P S(φ)`` (``update="chord"``) or full Newton (``update="newton"``).

    Stops when ``‖S(φ)‖ ≤ tol`` (L² of the background).  Residual growth in
    two consecutive steps is divergence; with ``damping`` a growing step is
    first halved, which marks the run as not certified.
    """
    g = smap.grid
    if cert is None:
        cert = certificate(smap)
    phi = np.zeros(g.shape)
    res_f = smap(phi)
    res = smap.norm(res_f)
    cert.residuals = [res]
    grew = 0
    it = 0
    while res > tol:
        if it >= max_iter:
            break
        if update == "chord" or it == 0:
            L, om = smap.L, smap.omega
        else:
            om = smap.metric(phi)
            L = linearize_scal(om, g)
        step, _ = solve_mean_zero(L, om, res_f)
        t = 1.0
        while True:
            try:
                cand = smap.p(phi - t * step)
                cand_f = smap(cand)
                cand_r = smap.norm(cand_f)
            except PositivityError:
                cand_r = np.inf
            if cand_r < res or not damping or t < 1 / 32:
                break
            t /= 2
            cert.damped = True
        if not np.isfinite(cand_r):
            raise PositivityError("Newton step left the positive cone")
        grew = grew + 1 if cand_r > res else 0
        if grew >= 2:
            raise ConvergenceError(f"Newton diverged: residuals {cert.residuals + [cand_r]}")
        phi, res_f, res = cand, cand_f, cand_r
        cert.residuals.append(res)
        it += 1
    cert.iterations = it
    cert.converged = bool(res <= tol)
    monotone = all(b < a for a, b in zip(cert.residuals, cert.residuals[1:]))
    if not monotone or cert.damped:
        cert.certified = False
    cert.phi = phi
    S = np.real(scal(smap.metric(phi), g))
    cert.scal_mean = mean(S, smap.metric(phi), g)
    cert.scal_deviation = float(np.abs(S - cert.scal_mean).max())
    cert.meta["update"] = update
    cert.meta["phi_mean"] = float(np.sum(smap.L.weight * phi) / smap.L.weight.sum())
    return cert


@dataclass
class CscKReport:
    mean: float
    deviation: float
    std: float
    expected_mean: float | None = None
    class_error: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def verify_cscK(omega, grid, surface=None, r=None):
    """Mean and spread of Scal(ω); with ``surface`` and ``r`` also the class check."""
    if not omega.positive():
        raise PositivityError("verify_cscK needs a positive form")
    S = np.real(scal(omega, grid))
    m = mean(S, omega, grid)
    vol = volume_density(omega) * grid.mass
    std = float(np.sqrt(np.sum(vol * (S - m) ** 2) / vol.sum()))
    rep = CscKReport(m, float(np.abs(S - m).max()), std)
    if surface is not None and r is not None:
        num = intersection_numbers(surface, r=r)
        rep.expected_mean = float(num.mean_scal(r))
        rep.class_error = abs(m - rep.expected_mean)
    return rep
