"""Scenario files: a versioned INI schema, validation, and object builders.

A scenario names a backend, the sample window, an equation, initial data,
the weight h, the terminal density of the conjugate equation, registry
settings and tolerances.  See ``scenarios/torus-heat-baseline.cfg`` for a
commented example.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .frequency import WeightFunction
from .geometry import AxisymSphere, ConformalTorus2D, FlatTorus2D
from .pde import Heat, LogNonlinear, PowerNonlinear

SCHEMA = "parafreq-scenario/1"

DEFAULT_TOLERANCES = {
    "mass": 1e-6,
    "volume": 1e-8,
    "lemma31": 1e-2,
    "identity": 2e-2,
    "f_evolution": 5e-2,
    "measure_evolution": 5e-2,
    "bochner": 1e-2,
    "max_principle": 1e-6,
    "monotonicity": 1e-8,
    "harnack": 1e-8,
    "estimate": 1e-10,
}

REGISTRY_KEYS = {
    "B1": float, "B_n": float, "C1": float, "C_n": float, "c_n": float,
    "eta": float, "A": float, "B4_override": float, "C3_override": float,
    "B4_mode": str, "E_variant": str,
}


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field as ``section.key``."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    lx: float = 2.0
    ly: float = 2.0
    nx: int = 64
    ny: int = 64
    gxx: float = 1.0
    gyy: float = 1.0
    dim: int = 2
    radius: float = 1.0
    ntheta: int = 128
    phi0_modes: tuple = ()

    def build(self, factor=1):
        """Backend with every grid count divided by ``factor``."""
        if self.kind == "FlatTorus2D":
            return FlatTorus2D(self.lx, self.ly, self.nx // factor, self.ny // factor, self.gxx, self.gyy)
        if self.kind == "AxisymSphere":
            return AxisymSphere(self.dim, self.radius, self.ntheta // factor)
        modes = self.phi0_modes
        lx, ly = self.lx, self.ly

        def phi0(x, y):
            out = np.zeros_like(x)
            for kx, ky, amp in modes:
                out = out + amp * np.cos(2 * math.pi * (kx * x / lx + ky * y / ly))
            return out

        return ConformalTorus2D(lx, ly, self.nx // factor, self.ny // factor, phi0)

    @property
    def resolution(self):
        return self.ntheta if self.kind == "AxisymSphere" else self.nx

    def can_coarsen(self, factor=2):
        counts = [self.ntheta] if self.kind == "AxisymSphere" else [self.nx, self.ny]
        return all(c % factor == 0 and (c // factor) >= 8 and (c // factor) % 2 == 0 for c in counts)


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "constant"
    value: float = 1.0
    base: float = 1.0
    modes: tuple = ()
    center: tuple = (0.0, 0.0)
    width: float = 0.1
    amplitude: float = 1.0

    def evaluate(self, backend):
        if backend.kind == "AxisymSphere":
            th = backend.theta
            if self.kind == "constant":
                return np.full(backend.shape, self.value)
            if self.kind == "fourier":
                out = np.full(backend.shape, self.base)
                for l, amp in self.modes:
                    out = out + amp * np.cos(l * th)
                return out
            c0 = math.cos(self.center[0])
            d2 = 2 * backend.r0**2 * (1 - np.cos(th) * c0)
            return self.base + self.amplitude * np.exp(-d2 / (4 * self.width))
        x, y = backend.coords
        lx, ly = backend.Lx, backend.Ly
        if self.kind == "constant":
            return np.full(backend.shape, self.value)
        if self.kind == "fourier":
            out = np.full(backend.shape, self.base)
            for kx, ky, amp in self.modes:
                out = out + amp * np.cos(2 * math.pi * (kx * x / lx + ky * y / ly))
            return out
        cx, cy = self.center
        sx = (lx / math.pi * np.sin(math.pi * (x - cx) / lx)) ** 2
        sy = (ly / math.pi * np.sin(math.pi * (y - cy) / ly)) ** 2
        return self.base + self.amplitude * np.exp(-(sx + sy) / (4 * self.width))


@dataclass(frozen=True)
class Scenario:
    name: str
    backend: BackendSpec
    t0: float
    t1: float
    samples: int
    equation: object
    initial: InitialSpec
    weight: WeightFunction
    h_scale: float = 1.0
    T: float | None = None
    pde_dt: float | None = None
    flow_dt: float | None = None
    kernel_center: tuple | None = None
    kernel_width: float = 0.5
    kernel_base: float = 0.0
    fit: str = "self"
    safety: float = 1.1
    registry: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    richardson: bool = True
    output: str | None = None
    source: str | None = None

    @property
    def times(self):
        return np.linspace(self.t0, self.t1, self.samples)

    @property
    def h(self):
        return self.weight.scaled(self.h_scale) if self.h_scale != 1.0 else self.weight

    @property
    def h_sign(self):
        return 1.0 if self.h(0.5 * (self.t0 + self.t1)) > 0 else -1.0

    @property
    def correction_kind(self):
        if isinstance(self.equation, LogNonlinear):
            return "phi"
        if isinstance(self.equation, Heat):
            return "heat"
        return "psi"

    def tol(self, key, scale=1.0):
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key]) * scale

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def with_param(self, name, value):
        """Copy with one sweep parameter changed (a, lambda, p, N, dt, h-scale)."""
        eq = self.equation
        if name == "a":
            if not isinstance(eq, LogNonlinear):
                raise ConfigError("equation.a", "only LogNonlinear has a")
            return self.replace(equation=LogNonlinear(float(value)))
        if name in ("lambda", "lam", "p"):
            if not isinstance(eq, (PowerNonlinear, Heat)):
                raise ConfigError(f"equation.{name}", "only PowerNonlinear has lambda and p")
            lam = getattr(eq, "lam", 0.0)
            p = getattr(eq, "p", 1.0)
            if name == "p":
                p = float(value)
            else:
                lam = float(value)
            return self.replace(equation=PowerNonlinear(lam, p))
        if name in ("N", "grid"):
            n = int(value)
            b = self.backend
            nb = (dataclasses.replace(b, ntheta=n) if b.kind == "AxisymSphere"
                  else dataclasses.replace(b, nx=n, ny=n))
            return validate(self.replace(backend=nb))
        if name == "dt":
            return self.replace(pde_dt=float(value))
        if name in ("h-scale", "h_scale"):
            return self.replace(h_scale=float(value))
        raise ConfigError("sweep.param", f"unknown parameter {name!r}")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _get(cp, section, key, conv, default=None, required=False):
    path = f"{section}.{key}"
    if not cp.has_section(section) or not cp.has_option(section, key):
        if required:
            raise ConfigError(path, "missing required field")
        return default
    raw = cp.get(section, key).strip()
    if raw == "":
        if required:
            raise ConfigError(path, "empty value")
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"cannot parse {raw!r}: {exc}") from None


def _floats(raw):
    return tuple(float(x) for x in raw.split(","))


def _modes(raw):
    return tuple(_floats(chunk) for chunk in raw.split(";") if chunk.strip())


def parse_text(text, source=None) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<scenario>")
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from None
    schema = _get(cp, "scenario", "schema", str, required=True)
    if schema != SCHEMA:
        raise ConfigError("scenario.schema", f"expected {SCHEMA!r}, got {schema!r}")
    name = _get(cp, "scenario", "name", str, required=True)

    kind = _get(cp, "backend", "kind", str, required=True)
    if kind not in ("FlatTorus2D", "AxisymSphere", "ConformalTorus2D"):
        raise ConfigError("backend.kind", f"unknown backend {kind!r}")
    nx = _get(cp, "backend", "cells_x", int, 64)
    backend = BackendSpec(
        kind=kind,
        lx=_get(cp, "backend", "length_x", float, 2.0),
        ly=_get(cp, "backend", "length_y", float, 2.0),
        nx=nx,
        ny=_get(cp, "backend", "cells_y", int, nx),
        gxx=_get(cp, "backend", "gxx", float, 1.0),
        gyy=_get(cp, "backend", "gyy", float, 1.0),
        dim=_get(cp, "backend", "dimension", int, 2),
        radius=_get(cp, "backend", "radius", float, 1.0),
        ntheta=_get(cp, "backend", "cells_theta", int, 128),
        phi0_modes=_get(cp, "backend", "phi0_modes", _modes, ()),
    )

    ekind = _get(cp, "equation", "kind", str, required=True)
    try:
        if ekind == "Heat":
            eq = Heat()
        elif ekind == "LogNonlinear":
            eq = LogNonlinear(_get(cp, "equation", "a", float, required=True))
        elif ekind == "PowerNonlinear":
            eq = PowerNonlinear(_get(cp, "equation", "lambda", float, required=True),
                                _get(cp, "equation", "p", float, required=True))
        else:
            raise ConfigError("equation.kind", f"unknown equation {ekind!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("equation.p", str(exc)) from None

    ikind = _get(cp, "initial", "kind", str, "constant")
    if ikind not in ("constant", "fourier", "bump"):
        raise ConfigError("initial.kind", f"unknown initial data {ikind!r}")
    initial = InitialSpec(
        kind=ikind,
        value=_get(cp, "initial", "value", float, 1.0),
        base=_get(cp, "initial", "base", float, 1.0),
        modes=_get(cp, "initial", "modes", _modes, ()),
        center=_get(cp, "initial", "center", _floats, (0.0, 0.0)),
        width=_get(cp, "initial", "width", float, 0.1),
        amplitude=_get(cp, "initial", "amplitude", float, 1.0),
    )

    wkind = _get(cp, "weight", "kind", str, "constant")
    if wkind == "constant":
        weight = WeightFunction.constant(_get(cp, "weight", "c", float, -1.0))
    elif wkind == "exponential":
        weight = WeightFunction.exponential(_get(cp, "weight", "c", float, -1.0),
                                            _get(cp, "weight", "k", float, 0.0))
    elif wkind == "polynomial":
        weight = WeightFunction.polynomial(_get(cp, "weight", "coeffs", _floats, required=True))
    else:
        raise ConfigError("weight.kind", f"unknown weight {wkind!r}")

    registry = {}
    if cp.has_section("registry"):
        for key in cp.options("registry"):
            if key in ("fit", "safety"):
                continue
            if key not in REGISTRY_KEYS:
                raise ConfigError(f"registry.{key}", "unknown registry field")
            registry[key] = _get(cp, "registry", key, REGISTRY_KEYS[key])

    tolerances = dict(DEFAULT_TOLERANCES)
    if cp.has_section("tolerances"):
        for key in cp.options("tolerances"):
            if key not in DEFAULT_TOLERANCES:
                raise ConfigError(f"tolerances.{key}", "unknown tolerance")
            tolerances[key] = _get(cp, "tolerances", key, float)

    sc = Scenario(
        name=name,
        backend=backend,
        t0=_get(cp, "time", "t0", float, required=True),
        t1=_get(cp, "time", "t1", float, required=True),
        samples=_get(cp, "time", "samples", int, 31),
        T=_get(cp, "time", "T", float),
        pde_dt=_get(cp, "time", "dt", float),
        flow_dt=_get(cp, "time", "flow_dt", float),
        equation=eq,
        initial=initial,
        weight=weight,
        h_scale=_get(cp, "weight", "scale", float, 1.0),
        kernel_center=_get(cp, "kernel", "center", _floats),
        kernel_width=_get(cp, "kernel", "width", float, 0.5),
        kernel_base=_get(cp, "kernel", "base", float, 0.0),
        fit=_get(cp, "registry", "fit", str, "self"),
        safety=_get(cp, "registry", "safety", float, 1.1),
        registry=registry,
        tolerances=tolerances,
        richardson=_get(cp, "checks", "richardson", _bool, True),
        output=_get(cp, "output", "dir", str),
        source=source,
    )
    return validate(sc)


def _bool(raw):
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def validate(sc: Scenario) -> Scenario:
    b = sc.backend
    counts = {"AxisymSphere": [("cells_theta", b.ntheta)]}.get(
        b.kind, [("cells_x", b.nx), ("cells_y", b.ny)])
    for key, c in counts:
        if c < 8 or c % 2:
            raise ConfigError(f"backend.{key}", f"grid count must be even and >= 8, got {c}")
    if b.kind == "AxisymSphere" and b.dim < 2:
        raise ConfigError("backend.dimension", "sphere dimension must be >= 2")
    if not sc.t0 > 0:
        raise ConfigError("time.t0", f"t0 must be > 0 (the correction integrands contain 1/s), got {sc.t0}")
    if not sc.t1 > sc.t0:
        raise ConfigError("time.t1", f"need t0 < t1, got t0={sc.t0}, t1={sc.t1}")
    if sc.samples < 5:
        raise ConfigError("time.samples", "need at least 5 samples")
    if sc.T is not None and not sc.T > sc.t1:
        raise ConfigError("time.T", f"need t1 < T, got t1={sc.t1}, T={sc.T}")
    if b.kind == "AxisymSphere":
        ext = b.radius**2 / (2 * (b.dim - 1))
        if sc.t1 >= ext:
            raise ConfigError("time.t1", f"t1 = {sc.t1} is past the extinction time {ext:.6g}")
        if sc.T is not None and sc.T > ext:
            raise ConfigError("time.T", f"T = {sc.T} is past the extinction time {ext:.6g}")
    try:
        sc.h.check(sc.t0, sc.t1)
    except Exception as exc:
        raise ConfigError("weight", f"h must keep a fixed sign on [t0, t1]: {exc}") from None
    try:
        u0 = sc.initial.evaluate(b.build())
    except Exception as exc:
        raise ConfigError("initial", f"cannot evaluate initial data: {exc}") from None
    if not np.all(u0 > 0):
        raise ConfigError("initial", f"initial data must be positive (min {float(u0.min()):.6g})")
    if sc.fit not in ("self", "none") and not sc.fit:
        raise ConfigError("registry.fit", "empty fit source")
    if sc.safety < 1:
        raise ConfigError("registry.safety", "safety multiplier must be >= 1")
    return sc


def load(path) -> Scenario:
    """Load a scenario file; bare names resolve to the bundled scenarios."""
    if not os.path.exists(path):
        bundled = bundled_path(path)
        if bundled is None:
            raise ConfigError("file", f"no such scenario {path!r}")
        path = bundled
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("file", str(exc)) from None
    return parse_text(text, source=os.path.abspath(path))


def bundled_path(name):
    stem = name[:-4] if name.endswith(".cfg") else name
    ref = resources.files("parafreq") / "scenarios" / f"{stem}.cfg"
    return str(ref) if ref.is_file() else None


def bundled_names():
    root = resources.files("parafreq") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_fit_source(sc: Scenario):
    """Scenario whose solve supplies the fitted constants (None for ``fit = none``)."""
    if sc.fit == "self":
        return sc
    if sc.fit == "none":
        return None
    path = sc.fit
    if sc.source and not os.path.isabs(path):
        cand = os.path.join(os.path.dirname(sc.source), path)
        if os.path.exists(cand):
            path = cand
    return load(path)
