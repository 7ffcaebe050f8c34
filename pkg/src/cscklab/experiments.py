"""Config-driven experiments: geometry construction and the five commands."""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import SAFE_FRACTION, ConfigError, line_of
from .curves import GridError, TorusCurve, load_mesh, origami_curve, write_off
from .fibre import ConvergenceError, alpha_integral, product_surface, theta_mean_identity
from .grid import ProductGrid, i_del_delbar
from .kahler import intersection_numbers
from .ladder import LadderError, build_ladder, c_closed_form, mean_scal_series, residual_report
from .newton import ScalMap, certificate, newton_solve, verify_cscK
from .spectral import COLUMNS, spectral_sweep

log = logging.getLogger(__name__)

COMMANDS = ("uniformize", "ladder", "spectra", "solve", "validate")


class CertificationError(RuntimeError):
    """``solve --require-certified`` ended without a certificate."""


# -- geometry ------------------------------------------------------------------

def make_curve(spec, cfg, where):
    if spec.kind == "origami":
        return origami_curve(spec.size)
    if spec.kind == "torus":
        return TorusCurve((spec.size, spec.size), cfg.tau)
    path = Path(spec.path)
    if not path.is_absolute() and cfg.source:
        path = Path(cfg.source).parent / path
    try:
        return load_mesh(path)
    except (OSError, GridError) as exc:
        raise ConfigError(f"{where}: cannot use mesh {spec.path!r}: {exc}") from None


def _lowmode_field(grid, rng):
    lf, Vf = grid.fibre.eig_laplacian()
    lb, Vb = grid.base.eig_laplacian()
    psi = np.zeros(grid.shape)
    for i in range(1, 4):
        for j in range(1, 4):
            psi += rng.standard_normal() * np.outer(Vb[:, j], Vf[:, i])
    return psi / np.abs(psi).max()


def perturbation_field(cfg, grid):
    if cfg.perturbation == "none" or cfg.amplitude == 0:
        return None
    if cfg.perturbation == "cos":
        if not (isinstance(grid.fibre, TorusCurve) and isinstance(grid.base, TorusCurve)):
            raise ConfigError(f"{line_of(cfg, 'geometry', 'perturbation')}: "
                              "the cos family is defined on torus factors only")
        xf = grid.fibre.uv[0]
        xb = grid.base.uv[0]
        psi = np.outer(np.cos(2 * np.pi * xb), np.cos(2 * np.pi * xf))
    else:
        psi = _lowmode_field(grid, np.random.default_rng(cfg.seed))
    psi = cfg.amplitude * psi
    dd = i_del_delbar(psi, grid)
    # the unperturbed fibre factor is 1
    bound = float(np.abs(dd.vv).max())
    if bound >= SAFE_FRACTION:
        raise ConfigError(f"{line_of(cfg, 'geometry', 'amplitude')}: amplitude {cfg.amplitude} is not "
                          f"positivity-safe (fibre part of the perturbation reaches {bound:.3g})")
    return psi


def build_surface(cfg, spectra=False):
    fs = cfg.spectra_fibre if spectra and cfg.spectra_fibre else cfg.fibre
    bs = cfg.spectra_base if spectra and cfg.spectra_base else cfg.base
    sec = "spectra" if spectra and cfg.spectra_fibre else "geometry"
    F = make_curve(fs, cfg, line_of(cfg, sec, "fibre"))
    B = make_curve(bs, cfg, line_of(cfg, sec, "base"))
    grid = ProductGrid(F, B)
    psi = perturbation_field(cfg, grid)
    if cfg.twist and not (F.global_frame and B.global_frame):
        raise ConfigError(f"{line_of(cfg, 'geometry', 'twist')}: a twist needs global frames on both factors")
    surf = product_surface(F, B, s0_fibre=cfg.fibre_s0, s0_base=cfg.base_s0, twist=cfg.twist,
                           psi=psi, label=f"{fs}x{bs}")
    r0 = cfg.r_list[0]
    if not r0 > surf.positivity_threshold:
        raise ConfigError(f"{line_of(cfg, 'sweep', 'r')}: omega_r is not positive at r = {r0} "
                          f"(threshold {surf.positivity_threshold:.4g})")
    return surf


# -- output helpers ------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


def write_csv(path, rows, columns):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    wr.writeheader()
    for row in rows:
        wr.writerow({k: _fmt(row.get(k, "")) for k in columns})
    Path(path).write_text(buf.getvalue())


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def _surface_off(curve, path, factor):
    if getattr(curve, "kind", "") == "torus":
        n1, n2 = curve.shape
        u, v = curve.uv
        a, b = 2 * np.pi * u, 2 * np.pi * v
        P = np.stack([(2 + np.cos(b)) * np.cos(a), (2 + np.cos(b)) * np.sin(a), np.sin(b)], 1)
        idx = np.arange(curve.n).reshape(n1, n2)
        faces = []
        for i in range(n1):
            for j in range(n2):
                p, q = idx[i, j], idx[(i + 1) % n1, j]
                s, t = idx[(i + 1) % n1, (j + 1) % n2], idx[i, (j + 1) % n2]
                faces += [[p, q, s], [p, s, t]]
        write_off(path, P, np.array(faces), factor)
        return
    if curve.positions is not None and np.iscomplexobj(curve.positions):
        P = np.stack([curve.positions.real, curve.positions.imag, np.zeros(curve.n)], 1)
    else:
        P = np.asarray(curve.positions, float)
    write_off(path, P, curve.faces, factor)


class Run:
    """Output directory, timings and the manifest of one command."""

    def __init__(self, cfg, command, out=None, overrides=None):
        self.cfg = cfg
        self.command = command
        self.out = Path(out or cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings = {}
        self.outputs = []
        self.overrides = overrides or {}
        self._t = time.perf_counter()

    def stage(self, name):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 6)
        self._t = now

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def manifest(self, status):
        write_json(self.out / "manifest.json", {
            "command": self.command,
            "config": self.cfg.source,
            "config_hash": self.cfg.config_hash,
            "overrides": self.overrides,
            "status": status,
            "outputs": sorted(set(self.outputs)),
            "timings": self.timings,
            "versions": {"cscklab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
        })


# -- commands ------------------------------------------------------------------

def cmd_uniformize(cfg, run):
    surf = build_surface(cfg)
    run.stage("geometry")
    g = surf.grid
    info = surf.meta["uniformization"]
    base = surf.meta.get("base")
    r0 = cfg.r_list[0]
    num = intersection_numbers(surf, r=r0)
    lhs, rhs = theta_mean_identity(surf)
    summary = {
        "config_hash": cfg.config_hash,
        "grid": g.describe(),
        "fibre_s0": surf.s0,
        "fibre_residual": info["residual"],
        "fibre_iterations": info["iterations"],
        "closedness": info["closedness"],
        "base_constant": surf.meta.get("c_sigma"),
        "base_residual": None if base is None else base.residual,
        "theta_min": float(surf.theta.min()),
        "theta_max": float(surf.theta.max()),
        "positivity_threshold": surf.positivity_threshold,
        "intersection_numbers": num.__dict__,
        "alpha_integral": alpha_integral(surf.omega0, g),
        "theta_mean_identity_error": float(np.abs(lhs - rhs).max()),
    }
    write_json(run.path("uniformization.json"), summary)
    rows = [{"config_hash": cfg.config_hash, "factor": "fibre", "vertices": g.fibre.n,
             "s0": surf.s0, "residual": info["residual"], "iterations": info["iterations"]},
            {"config_hash": cfg.config_hash, "factor": "base", "vertices": g.base.n,
             "s0": surf.meta.get("c_sigma", ""), "residual": "" if base is None else base.residual,
             "iterations": "" if base is None else base.iterations}]
    write_csv(run.path("uniformize.csv"), rows,
              ["config_hash", "factor", "vertices", "s0", "residual", "iterations"])
    _surface_off(g.fibre, run.path("fibre.off"), surf.fibre_metric[0])
    _surface_off(g.base, run.path("base.off"), surf.mu)
    run.stage("outputs")
    return 0, f"uniformized {g.fibre!r} x {g.base!r}; base constant {summary['base_constant']}"


def _closed_forms(num, order):
    """``c_1..c_n`` from the closed form, or from the exact series when ``B = 0``."""
    if num.B == 0:
        return [float(x) for x in mean_scal_series(num, order)[1:]]
    return [c_closed_form(num, i) for i in range(1, order + 1)]


def cmd_ladder(cfg, run):
    surf = build_surface(cfg)
    run.stage("geometry")
    rows, fits, state = [], {}, None
    for n in range(cfg.order + 1):
        state = build_ladder(surf, n, method=cfg.method, tol=cfg.tol_ladder)
        try:
            rep = residual_report(state, cfg.r_list)
        except LadderError:
            # exact ladder (products of constant curvature metrics): no slope to fit
            rep = None
        if rep is None:
            fits[str(n)] = None
            vals = [(r, 0.0, 0.0) for r in cfg.r_list]
        else:
            fits[str(n)] = {"slope_c0": rep.slope_c0, "slope_l2": rep.slope_l2,
                            "stderr_c0": rep.stderr_c0, "stderr_l2": rep.stderr_l2,
                            "expected_c0": rep.expected_c0, "expected_l2": rep.expected_l2}
            vals = zip(rep.r_list, rep.c0, rep.l2)
        for r, a, b in vals:
            rows.append({"config_hash": cfg.config_hash, "order": n, "r": r, "residual_c0": a,
                         "residual_l2": b})
    run.stage("ladder")
    num = intersection_numbers(surf, r=cfg.r_list[0])
    state.save(run.path("ladder.json"))
    write_csv(run.path("ladder_residuals.csv"), rows,
              ["config_hash", "order", "r", "residual_c0", "residual_l2"])
    write_json(run.path("ladder_fit.json"), {"config_hash": cfg.config_hash, "order": cfg.order,
                                             "c": state.c, "c_closed_form": _closed_forms(num, cfg.order),
                                             "intersection_numbers": num.__dict__, "slopes": fits,
                                             "extraction_radius": state.radius})
    run.stage("outputs")
    f = fits[str(cfg.order)]
    if f is None:
        return 0, f"ladder order {cfg.order}: residual vanishes to round-off"
    return 0, f"ladder order {cfg.order}: C0 slope {f['slope_c0']:.3f}, L2 slope {f['slope_l2']:.3f}"


def cmd_spectra(cfg, run):
    surf = build_surface(cfg, spectra=True)
    run.stage("geometry")
    state = build_ladder(surf, cfg.order, method=cfg.method, tol=cfg.tol_ladder)
    quantities = list(COLUMNS[1:])
    if cfg.backend == "torus":
        # translations are holomorphic vector fields on a torus product, so
        # the first eigenvalue of the vector-field operator is zero
        quantities.remove("lambda1_dbar")
    rep = spectral_sweep(state.omega, surf.grid, cfg.r_list, quantities=quantities,
                         mask_cones=cfg.mask_cones)
    if cfg.backend == "torus":
        rep.flags.append("lambda1_dbar: not measured (holomorphic vector fields on tori)")
    run.stage("spectra")
    rows = [dict(row, config_hash=cfg.config_hash, order=cfg.order) for row in rep.rows()]
    write_csv(run.path("spectra.csv"), rows, ["config_hash", "order"] + list(COLUMNS))
    d = rep.to_dict()
    d["config_hash"] = cfg.config_hash
    d["order"] = cfg.order
    d["grid"] = surf.grid.describe()
    write_json(run.path("spectra.json"), d)
    run.stage("outputs")
    return 0, "spectra: " + ", ".join(f"{k} exponent {v.exponent:.3f}" for k, v in rep.fits.items())


def cmd_solve(cfg, run, require_certified=False):
    surf = build_surface(cfg)
    run.stage("geometry")
    state = build_ladder(surf, cfg.order, method=cfg.method, tol=cfg.tol_ladder)
    run.stage("ladder")
    r = cfg.solve_r
    smap = ScalMap(state.omega(r), surf.grid)
    cert = certificate(smap, seed=cfg.seed)
    run.stage("certificate")
    cert = newton_solve(smap, tol=cfg.solve_tol, max_iter=cfg.max_iter, cert=cert, update=cfg.update)
    run.stage("newton")
    check = verify_cscK(smap.metric(cert.phi), surf.grid, surf, r)
    d = cert.to_dict(with_phi=False)
    d.update(config_hash=cfg.config_hash, order=cfg.order, r=r, verify=check.to_dict())
    write_json(run.path("certificate.json"), d)
    sol = state.to_dict()
    sol["r"] = r
    sol["newton_phi"] = np.asarray(cert.phi).ravel().tolist()
    write_json(run.path("solution.json"), sol)
    row = {"config_hash": cfg.config_hash, "order": cfg.order, "r": r, "s0_norm": cert.s0_norm,
           "inv_norm": cert.inv_norm, "lipschitz": cert.lipschitz, "delta_prime": cert.delta_prime,
           "delta": cert.delta, "margin": cert.margin, "iterations": cert.iterations,
           "converged": cert.converged, "certified": cert.certified,
           "final_deviation": cert.scal_deviation}
    write_csv(run.path("solve.csv"), [row], list(row))
    run.stage("outputs")
    msg = (f"solve r={r:g} n={cfg.order}: margin {cert.margin:.3g}, converged={cert.converged}, "
           f"certified={cert.certified}, Scal deviation {cert.scal_deviation:.3e}")
    if not cert.converged:
        raise ConvergenceError("Newton did not reach the tolerance: " + msg)
    if require_certified and not cert.certified:
        raise CertificationError(msg)
    return 0, msg


def cmd_validate(cfg, run):
    from .validate import run_suite

    results = run_suite(mesh=cfg.backend == "mesh", seed=cfg.seed)
    run.stage("suite")
    rows = [dict(r, config_hash=cfg.config_hash) for r in results]
    write_csv(run.path("validate.csv"), rows,
              ["config_hash", "module", "check", "value", "tolerance", "passed"])
    run.stage("outputs")
    bad = [r for r in results if not r["passed"]]
    status = 0 if not bad else 3
    return status, f"validate: {len(results) - len(bad)}/{len(results)} checks passed"


def run_experiment(cfg, command, out=None, overrides=None, require_certified=False):
    """Run one command; returns ``(status, summary_line, output_dir)``.

    Errors propagate to the caller (the CLI maps them to exit codes); the
    manifest is written either way.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    run = Run(cfg, command, out, overrides)
    status = "error"
    try:
        if command == "uniformize":
            code, msg = cmd_uniformize(cfg, run)
        elif command == "ladder":
            code, msg = cmd_ladder(cfg, run)
        elif command == "spectra":
            code, msg = cmd_spectra(cfg, run)
        elif command == "solve":
            code, msg = cmd_solve(cfg, run, require_certified)
        else:
            code, msg = cmd_validate(cfg, run)
        status = "ok" if code == 0 else "failed"
        (run.out / "summary.txt").write_text(msg + "\n")
        run.outputs.append("summary.txt")
        return code, msg, run.out
    finally:
        run.manifest(status)
