"""Approximate solutions ω_{r,n} built order by order in ``1/r``.

With ``t = 1/r`` the ladder metric is

    ω_{r,n} = ω_r + i∂̄∂( Σ_{i<n} r^{1-i} f_i + Σ_{i<=n} r^{-i} φ_i )

and ``t ω_{r,n} = t ω₀ + ω_Σ + i∂̄∂( Σ t^i f_i + Σ t^{i+1} φ_i )`` is polynomial
in ``t``.  ``G(t) = t Scal(t ω_{r,n})`` equals ``Scal(ω_{r,n})`` and is analytic
at ``t = 0``, so the coefficient fields of its expansion are Taylor
coefficients.  They are read off by a discrete Cauchy integral on a small
circle of complex ``t`` (``method="circle"``) or by least squares over real
``r`` (``method="fit"``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grid import fibrewise_mean, i_del_delbar
from .kahler import PositivityError, l2_norm, norm_Ck, norm_L2k, scal
from .linear import base_sigma_operator, fit_inverse_powers

MAX_ORDER = 6


class LadderError(RuntimeError):
    """A stage of the ladder construction failed."""


# -- the two linear solves ------------------------------------------------------

def _fibre_eigen(curve, vv_row, cache):
    key = vv_row.tobytes()
    if key not in cache:
        cache[key] = curve.eig_laplacian(vv_row)
    return cache[key]


def fibre_correction(theta, surface, s0=None, tol=1e-10, atol=1e-9):
    """Solve ``(Δ_V² − s0 Δ_V) φ = Θ`` fibre by fibre, ``φ`` fibrewise mean zero.

    With hyperbolic fibres ``s0 = -1`` this is ``(Δ_V² + Δ_V) φ = Θ``.
    """
    g = surface.grid
    s0 = surface.s0 if s0 is None else s0
    theta = g.check(np.asarray(theta, float), "theta")
    vv = surface.fibre_metric
    scale = max(1.0, float(np.abs(theta).max()))
    fmean = fibrewise_mean(theta, g, vv)
    if np.abs(fmean).max() > atol * scale:
        i = int(np.argmax(np.abs(fmean)))
        raise LadderError(f"fibre_correction: right-hand side has fibrewise mean {fmean[i]:.3e} "
                          f"on fibre {i}")
    cache = {}
    phi = np.zeros(g.shape)
    for i in range(g.base.n):
        lam, V = _fibre_eigen(g.fibre, vv[i], cache)
        op = lam**2 - s0 * lam
        nz = lam != 0
        smin = float(np.abs(op[nz]).min()) if nz.any() else 0.0
        if smin < 1e-12 * max(1.0, float(np.abs(op).max())):
            raise LadderError(f"fibre operator is singular on fibre {i} (smallest value {smin:.3e})")
        coef = V.T @ (g.fibre.mass * vv[i] * theta[i])
        coef[~nz] = 0.0
        coef[nz] /= op[nz]
        phi[i] = V @ coef
    # per-fibre residual
    dv = _vertical(g, vv, phi)
    res = _vertical(g, vv, dv) - s0 * dv - theta
    r = float(np.abs(res).max()) / scale
    if r > tol:
        raise LadderError(f"fibre_correction residual {r:.3e} above tolerance")
    return phi


def _vertical(g, vv, phi):
    return g.fibre.lap(phi, -1) / vv


def base_correction(theta, surface, tol=1e-9):
    """``(f, c)`` with ``c`` the ω_Σ-mean of Θ and ``D_Σ f = c − Θ``, ``f`` of mean zero."""
    g = surface.grid
    theta = np.asarray(theta, float)
    if theta.shape != (g.base.n,):
        raise LadderError("base_correction expects one value per base point")
    m = g.base.mass * surface.mu
    c = float(m @ theta / m.sum())
    D = base_sigma_operator(surface)
    n = g.base.n
    Ab = np.zeros((n + 1, n + 1))
    Ab[:n, :n] = D
    Ab[:n, n] = m / m.sum()
    Ab[n, :n] = m
    sv = np.linalg.svd(Ab, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise LadderError(f"base operator is singular (smallest singular value {sv[-1]:.3e})")
    sol = np.linalg.solve(Ab, np.concatenate([c - theta, [0.0]]))
    f = sol[:n]
    res = float(np.abs(D @ f + theta - c).max()) / max(1.0, float(np.abs(theta).max()))
    if res > tol:
        raise LadderError(f"base_correction residual {res:.3e} above tolerance")
    return f, c


# -- coefficient extraction --------------------------------------------------------

def _scaled_form(surface, t, f_list, phi_list):
    g = surface.grid
    pot = 0.0
    for i, f in enumerate(f_list, start=1):
        pot = pot + t**i * g.pullback_base(f)
    for i, phi in enumerate(phi_list, start=1):
        pot = pot + t ** (i + 1) * phi
    form = t * surface.omega0 + surface.omega_sigma
    if not np.isscalar(pot):
        form = form + i_del_delbar(pot, g)
    return form


def scal_series_value(surface, t, f_list, phi_list):
    """``Scal(ω_{r,n})`` at ``r = 1/t``, for complex ``t`` as well."""
    form = _scaled_form(surface, t, f_list, phi_list)
    return t * scal(form, surface.grid, log_scale=t)


def circle_coefficients(surface, f_list, phi_list, kmax, radius, nodes=32):
    """Taylor coefficients ``a_0..a_kmax`` of ``G(t)`` from a circle of radius ``radius``."""
    ts = radius * np.exp(2j * np.pi * (np.arange(nodes) + 0.5) / nodes)
    vals = np.array([scal_series_value(surface, t, f_list, phi_list) for t in ts])
    out = []
    for k in range(kmax + 1):
        a = np.mean(vals * (ts ** (-k))[:, None, None], axis=0)
        out.append(np.real(a))
    return np.array(out)


def extract_coefficients(surface, f_list, phi_list, kmax, radii=(1 / 8, 1 / 16, 1 / 32, 1 / 64),
                         nodes=32, rtol=1e-8):
    """Stable Taylor coefficients: the largest radius that agrees with the next one.

    Returns ``(coefficients, radius, agreement)``.
    """
    prev = None
    best = None
    for rad in radii:
        try:
            cur = circle_coefficients(surface, f_list, phi_list, kmax, rad, nodes)
        except (PositivityError, FloatingPointError):
            prev = None
            continue
        if prev is not None:
            scale = max(1.0, float(np.abs(cur).max()))
            diff = float(np.abs(cur - prev[1]).max()) / scale
            if best is None or diff < best[2]:
                best = (prev[1], prev[0], diff)
            if diff < rtol:
                return prev[1], prev[0], diff
        prev = (rad, cur)
    if best is None:
        raise LadderError("coefficient extraction failed at every radius")
    return best


def fit_coefficients(surface, f_list, phi_list, kmax, r_list=(32, 64, 128, 256, 512, 1024)):
    """Real-``r`` route: least-squares fit of ``Scal(ω_{r,n})`` in powers of ``1/r``."""
    vals = [np.real(scal_series_value(surface, 1.0 / r, f_list, phi_list)) for r in r_list]
    coef, _ = fit_inverse_powers(r_list, np.array(vals), min(len(r_list) - 1, kmax + 3))
    return coef[:kmax + 1]


# -- the ladder ----------------------------------------------------------------------

@dataclass(eq=False)
class LadderState:
    surface: object
    n: int
    f: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    c: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    radius: float = float("nan")
    agreement: float = float("nan")
    method: str = "circle"

    @property
    def s0(self):
        return self.surface.s0

    def potential(self, r):
        g = self.surface.grid
        pot = np.zeros(g.shape)
        for i, f in enumerate(self.f, start=1):
            pot += r ** (1 - i) * g.pullback_base(f)
        for i, phi in enumerate(self.phi, start=1):
            pot += r ** (-i) * phi
        return pot

    def omega(self, r):
        om = self.surface.omega(r) + i_del_delbar(self.potential(r), self.surface.grid)
        if not om.positive():
            raise PositivityError(f"omega_(r,n) is not positive at r = {r}")
        return om

    def scal(self, r):
        return np.real(scal(self.omega(r), self.surface.grid))

    def expected(self, r):
        return self.s0 + sum(ci * r ** (-(i + 1)) for i, ci in enumerate(self.c))

    def residual(self, r):
        return self.scal(r) - self.expected(r)

    def to_dict(self):
        return {
            "layout": "cscklab-ladder-1",
            "grid": self.surface.grid.describe(),
            "order": self.n,
            "s0": self.s0,
            "c": [float(x) for x in self.c],
            "f": [np.asarray(x).ravel().tolist() for x in self.f],
            "phi": [np.asarray(x).ravel().tolist() for x in self.phi],
            "theta": [np.asarray(x).ravel().tolist() for x in self.theta],
            "radius": self.radius,
            "agreement": self.agreement,
            "method": self.method,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path, surface):
        with open(path) as fh:
            d = json.load(fh)
        if d.get("layout") != "cscklab-ladder-1":
            raise LadderError(f"{path}: unknown ladder layout")
        g = surface.grid
        if d["grid"] != json.loads(json.dumps(g.describe())):
            raise LadderError(f"{path}: ladder was built on a different grid")
        return cls(surface, int(d["order"]),
                   f=[np.array(x) for x in d["f"]],
                   phi=[np.array(x).reshape(g.shape) for x in d["phi"]],
                   c=list(d["c"]),
                   theta=[np.array(x).reshape(g.shape) for x in d["theta"]],
                   radius=d["radius"], agreement=d["agreement"], method=d["method"])


def build_ladder(surface, n, method="circle", tol=1e-7):
    """Construct ω_{r,n}: ``c_1..c_n``, base potentials ``f_1..f_{n-1}`` and fibre potentials ``φ_1..φ_n``.

    At order ``k`` the ``r^{-k}`` coefficient field ``E_k`` of the current
    scalar curvature is split into its fibrewise mean and the rest.  For
    ``k >= 2`` the base potential ``f_{k-1}`` makes the fibrewise mean
    constant; then ``φ_k`` removes the fibrewise-mean-zero part.
    """
    if not 0 <= n <= MAX_ORDER:
        raise ValueError(f"ladder order must be between 0 and {MAX_ORDER}")
    if method not in ("circle", "fit"):
        raise ValueError(f"unknown extraction method {method!r}")
    g = surface.grid
    vv = surface.fibre_metric
    state = LadderState(surface, n, method=method)

    def coeffs(k):
        if method == "circle":
            a, rad, agree = extract_coefficients(surface, state.f, state.phi, k)
            state.radius, state.agreement = rad, agree
            return a
        return fit_coefficients(surface, state.f, state.phi, k)

    for k in range(1, n + 1):
        stage = f"order {k}"
        try:
            E = coeffs(k)[k]
            base_part = fibrewise_mean(E, g, vv)
            if k >= 2:
                fk, ck = base_correction(base_part, surface)
                state.f.append(fk)
                E = coeffs(k)[k]
                base_part = fibrewise_mean(E, g, vv)
            m = g.base.mass * surface.mu
            ck = float(m @ base_part / m.sum())
            spread = float(np.abs(base_part - ck).max())
            if spread > tol * max(1.0, abs(ck)):
                raise LadderError(f"fibrewise mean of the r^-{k} error is not constant "
                                  f"(spread {spread:.3e}); is the base equation solved?")
            state.theta.append(E)
            state.phi.append(fibre_correction(-(E - base_part[:, None]), surface))
            state.c.append(ck)
            check = coeffs(k)[k]
            err = float(np.abs(check - ck).max())
            if err > tol * max(1.0, abs(ck)):
                raise LadderError(f"r^-{k} coefficient not constant after correction ({err:.3e})")
        except LadderError as exc:
            raise LadderError(f"{stage}: {exc}") from exc
    return state


# -- c_i ---------------------------------------------------------------------------

def c_closed_form(numbers, i):
    """``c_i = (−1)^i (B/A)^i (C/A − D/B)`` for the mean scalar curvature of ω_r."""
    A, B, C, D = numbers.A, numbers.B, numbers.C, numbers.D
    if A == 0 or B == 0:
        raise ZeroDivisionError("closed form needs A and B nonzero")
    return (-1) ** i * (B / A) ** i * (C / A - D / B)


def mean_scal_series(numbers, kmax):
    """Exact power series of ``(rC + D)/(rA + B)`` in ``1/r`` (Fractions in, Fractions out)."""
    A, B, C, D = (Fraction(x) for x in (numbers.A, numbers.B, numbers.C, numbers.D))
    # (C + D t)/(A + B t) = Σ a_k t^k, solved by long division
    out = []
    num = [C, D]
    for k in range(kmax + 1):
        nk = num[k] if k < len(num) else Fraction(0)
        prev = out[k - 1] if k >= 1 else Fraction(0)
        out.append((nk - B * prev) / A)
    return out


# -- residual decay --------------------------------------------------------------------

@dataclass
class DecayFit:
    r_list: list
    c0: list
    l2: list
    slope_c0: float
    slope_l2: float
    stderr_c0: float
    stderr_l2: float
    expected_c0: float
    expected_l2: float

    def to_dict(self):
        return dict(self.__dict__)


def _loglog(r, y):
    x, z = np.log(r), np.log(y)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, z, rcond=None)
    dof = max(len(x) - 2, 1)
    s2 = float(np.sum((A @ coef - z) ** 2)) / dof
    se = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    return float(coef[0]), se


def residual_report(ladder, r_list=(32, 64, 128, 256), k=0):
    """C^k(g_r) and L²_k(g_r) sizes of ``Scal(ω_{r,n}) − (s0 + Σ c_i r^{-i})`` and their slopes."""
    r_list = sorted(float(r) for r in r_list)
    if len(r_list) < 4:
        raise ValueError("need at least four values of r")
    g = ladder.surface.grid
    c0, l2 = [], []
    for r in r_list:
        om = ladder.omega(r)
        res = np.real(scal(om, g)) - ladder.expected(r)
        if k == 0:
            c0.append(float(np.abs(res).max()))
            l2.append(l2_norm(res, om, g))
        else:
            c0.append(norm_Ck(res, om, g, k))
            l2.append(norm_L2k(res, om, g, k))
    # a residual at round-off level has no meaningful slope
    floor = 1e-12 * max(1.0, abs(ladder.s0), *(abs(c) for c in ladder.c))
    if max(c0) <= floor or min(l2) <= 0:
        raise LadderError("residual vanished identically; slopes undefined")
    s1, e1 = _loglog(np.array(r_list), np.array(c0))
    s2, e2 = _loglog(np.array(r_list), np.array(l2))
    n = ladder.n
    return DecayFit(r_list, c0, l2, s1, s2, e1, e2, -(n + 1.0), -(n + 0.5))


def class_drift(ladder, r):
    """Largest change of the intersection numbers of ω_{r,n} against ω_r."""
    s = ladder.surface
    g = s.grid
    om = ladder.omega(r)
    base = s.omega(r)
    from .grid import wedge

    refs = [s.omega0, s.omega_sigma]
    d = [abs(wedge(om - base, ref, g)) / max(1.0, abs(wedge(base, ref, g))) for ref in refs]
    return float(max(d))
