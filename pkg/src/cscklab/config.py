"""Experiment configuration: an INI file with a fixed schema.

Example::

    [geometry]
    backend = mesh          ; mesh | torus
    fibre = origami:4       ; origami:<cells> | torus:<n> | off:<path>
    base = origami:4
    fibre_s0 = -1
    base_s0 = -1            ; or "keep" to leave the base metric as given
    twist = 0.05
    perturbation = none     ; none | cos | lowmode
    amplitude = 0.0

    [ladder]
    order = 2
    method = circle         ; circle | fit

    [sweep]
    r = 32, 64, 128, 256

    [spectra]
    fibre = origami:3
    base = origami:3

    [solve]
    r = 128
    tol = 1e-8
    max_iter = 8
    update = chord          ; chord | newton

    [output]
    dir = out
    seed = 0

Every error message names the file and line of the offending entry.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path


class ConfigError(ValueError):
    """Invalid experiment configuration."""


SCHEMA = {
    "geometry": {"backend", "fibre", "base", "fibre_s0", "base_s0", "twist", "perturbation",
                 "amplitude", "tau"},
    "ladder": {"order", "method"},
    "sweep": {"r"},
    "spectra": {"fibre", "base", "mask_cones"},
    "solve": {"r", "tol", "max_iter", "update"},
    "tolerances": {"uniformize", "linear", "ladder"},
    "output": {"dir", "seed"},
}
REQUIRED = {"geometry": {"fibre", "base"}}
PERTURBATIONS = ("none", "cos", "lowmode")
# sup of the perturbation's i∂̄∂ relative to the metric must stay below this
SAFE_FRACTION = 0.5


@dataclass(frozen=True)
class CurveSpec:
    kind: str
    size: int = 0
    path: str = ""

    def __str__(self):
        return f"{self.kind}:{self.path or self.size}"


@dataclass(frozen=True)
class ExperimentConfig:
    backend: str
    fibre: CurveSpec
    base: CurveSpec
    fibre_s0: float = -1.0
    base_s0: float | None = -1.0
    twist: float = 0.0
    perturbation: str = "none"
    amplitude: float = 0.0
    tau: complex = 1j
    order: int = 2
    method: str = "circle"
    r_list: tuple = (32.0, 64.0, 128.0, 256.0)
    spectra_fibre: CurveSpec | None = None
    spectra_base: CurveSpec | None = None
    mask_cones: bool = True
    solve_r: float = 128.0
    solve_tol: float = 1e-8
    max_iter: int = 8
    update: str = "chord"
    tol_uniformize: float = 1e-10
    tol_linear: float = 1e-10
    tol_ladder: float = 1e-7
    out_dir: str = "out"
    seed: int = 0
    source: str = ""
    config_hash: str = ""
    lines: dict = field(default_factory=dict, compare=False)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _line_index(text):
    """``{(section, key): line}`` and ``{section: line}`` from the raw text."""
    where, sections = {}, {}
    sec = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip().lower()
            sections[sec] = i
            continue
        if sec is not None and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            where[(sec, key)] = i
    return where, sections


def config_hash(text):
    """Hash of the configuration with comments and blank lines removed."""
    keep = []
    for raw in text.splitlines():
        s = re.split(r"\s[#;]", raw, 1)[0].strip()
        if s and s[0] not in "#;":
            keep.append(re.sub(r"\s*=\s*", "=", s))
    return hashlib.sha256("\n".join(keep).encode()).hexdigest()[:16]


def _curve_spec(value, where):
    m = re.fullmatch(r"(origami|torus|off):(.+)", value.strip())
    if not m:
        raise ConfigError(f"{where}: curve must be origami:<cells>, torus:<n> or off:<path>, got {value!r}")
    kind, arg = m.groups()
    if kind == "off":
        return CurveSpec("off", path=arg.strip())
    try:
        size = int(arg)
    except ValueError:
        raise ConfigError(f"{where}: {kind} size must be an integer, got {arg!r}") from None
    if kind == "torus" and (size < 8 or size % 2):
        raise ConfigError(f"{where}: torus size must be even and at least 8")
    if kind == "origami" and size < 3:
        raise ConfigError(f"{where}: origami needs at least three cells")
    return CurveSpec(kind, size=size)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def parse_config(text, name="<config>"):
    where, sections = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        raise ConfigError(f"{name}:{line}: {msg}" if line else f"{name}: {msg}") from None

    def loc(sec, key=None):
        ln = where.get((sec, key)) if key else sections.get(sec)
        return f"{name}:{ln}" if ln else name

    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{loc(sec)}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{loc(sec, key)}: unknown key {key!r} in [{sec}]")
    for sec, keys in REQUIRED.items():
        if sec not in cp:
            raise ConfigError(f"{name}: missing section [{sec}]")
        for key in keys:
            if key not in cp[sec]:
                raise ConfigError(f"{loc(sec)}: missing key {key!r} in [{sec}]")

    def get(sec, key, conv, default):
        if sec not in cp or key not in cp[sec]:
            return default
        raw = cp[sec][key]
        try:
            return conv(raw)
        except (ValueError, TypeError):
            raise ConfigError(f"{loc(sec, key)}: cannot read {key} = {raw!r}") from None

    def s0_or_keep(raw):
        return None if raw.strip().lower() == "keep" else float(raw)

    def rlist(raw):
        vals = tuple(float(x) for x in raw.replace(",", " ").split())
        if not vals:
            raise ValueError
        return vals

    def boolean(raw):
        v = raw.strip().lower()
        if v in ("1", "yes", "true", "on"):
            return True
        if v in ("0", "no", "false", "off"):
            return False
        raise ValueError

    g = cp["geometry"]
    fibre = _curve_spec(g["fibre"], loc("geometry", "fibre"))
    base = _curve_spec(g["base"], loc("geometry", "base"))
    backend = get("geometry", "backend", str, "torus" if fibre.kind == "torus" else "mesh").strip()
    if backend not in ("torus", "mesh"):
        raise ConfigError(f"{loc('geometry', 'backend')}: backend must be torus or mesh")
    kinds = {fibre.kind, base.kind}
    if backend == "torus" and kinds != {"torus"}:
        raise ConfigError(f"{loc('geometry', 'backend')}: torus backend needs torus:<n> factors")
    if backend == "mesh" and "torus" in kinds:
        raise ConfigError(f"{loc('geometry', 'backend')}: mesh backend cannot use torus factors")
    pert = get("geometry", "perturbation", str, "none").strip()
    if pert not in PERTURBATIONS:
        raise ConfigError(f"{loc('geometry', 'perturbation')}: perturbation must be one of {PERTURBATIONS}")
    amp = get("geometry", "amplitude", float, 0.0)
    if amp < 0:
        raise ConfigError(f"{loc('geometry', 'amplitude')}: amplitude must be non-negative")
    r_list = get("sweep", "r", rlist, (32.0, 64.0, 128.0, 256.0))
    if list(r_list) != sorted(r_list) or any(r <= 0 for r in r_list):
        raise ConfigError(f"{loc('sweep', 'r')}: r-list must be positive and ascending")
    order = get("ladder", "order", int, 2)
    if not 0 <= order <= 6:
        raise ConfigError(f"{loc('ladder', 'order')}: ladder order must be between 0 and 6")
    method = get("ladder", "method", str, "circle").strip()
    if method not in ("circle", "fit"):
        raise ConfigError(f"{loc('ladder', 'method')}: method must be circle or fit")
    update = get("solve", "update", str, "chord").strip()
    if update not in ("chord", "newton"):
        raise ConfigError(f"{loc('solve', 'update')}: update must be chord or newton")
    sf = get("spectra", "fibre", lambda v: _curve_spec(v, loc("spectra", "fibre")), None)
    sb = get("spectra", "base", lambda v: _curve_spec(v, loc("spectra", "base")), None)
    cfg = ExperimentConfig(
        backend=backend, fibre=fibre, base=base,
        fibre_s0=get("geometry", "fibre_s0", float, 0.0 if fibre.kind == "torus" else -1.0),
        base_s0=get("geometry", "base_s0", s0_or_keep, 0.0 if base.kind == "torus" else -1.0),
        twist=get("geometry", "twist", float, 0.0),
        perturbation=pert, amplitude=amp,
        tau=get("geometry", "tau", lambda v: complex(v.replace(" ", "")), 1j),
        order=order, method=method, r_list=r_list,
        spectra_fibre=sf, spectra_base=sb,
        mask_cones=get("spectra", "mask_cones", boolean, True),
        solve_r=get("solve", "r", float, 128.0),
        solve_tol=get("solve", "tol", float, 1e-8),
        max_iter=get("solve", "max_iter", int, 8),
        update=update,
        tol_uniformize=get("tolerances", "uniformize", float, 1e-10),
        tol_linear=get("tolerances", "linear", float, 1e-10),
        tol_ladder=get("tolerances", "ladder", float, 1e-7),
        out_dir=get("output", "dir", str, "out").strip(),
        seed=get("output", "seed", int, 0),
        source=name, config_hash=config_hash(text), lines=dict(where),
    )
    return cfg


def line_of(cfg, section, key):
    ln = cfg.lines.get((section, key))
    return f"{cfg.source}:{ln}" if ln else cfg.source
