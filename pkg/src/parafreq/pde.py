"""Method-of-lines RK4 solvers for the scalar equations on an evolving metric.

Forward equations (all with ``(d/dt - Laplacian) u = rhs``)::

    Heat                 rhs = 0
    LogNonlinear(a)      rhs = a u + |grad u|^2
    PowerNonlinear(l, p) rhs = l u^p

plus the conjugate heat equation ``dK/dt = -Laplacian K + R K`` which is
integrated backward in time.  Solutions start at ``t = 0`` and are sampled on
the trajectory's sample grid.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .flow import FlowTrajectory, _step_plan
from .geometry import ScalarField

log = logging.getLogger(__name__)

# RK4 is stable on the negative real axis down to about -2.785
RK4_REAL_LIMIT = 2.78
DEFAULT_DT_FRACTION = 0.5
BLOWUP_FACTOR = 1e6


class PDEError(RuntimeError):
    pass


@dataclass(frozen=True)
class Heat:
    name = "Heat"


@dataclass(frozen=True)
class LogNonlinear:
    a: float
    name = "LogNonlinear"


@dataclass(frozen=True)
class PowerNonlinear:
    lam: float
    p: float
    name = "PowerNonlinear"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"PowerNonlinear needs p >= 1, got {self.p}")


@dataclass(frozen=True)
class Conjugate:
    name = "Conjugate"


@dataclass(eq=False)
class ScalarFieldTrace:
    """A positive field sampled on the trajectory's sample times.

    ``rates`` holds the time derivative of the field at each sample, taken
    from the semi-discrete equation.  ``eta``/``A`` bound the initial data;
    ``window_min``/``window_max`` are the measured bounds over all samples.
    """

    backend: object
    times: np.ndarray
    fields: np.ndarray
    rates: np.ndarray
    equation: object
    eta: float
    A: float
    aux: dict = field(default_factory=dict, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def window_min(self):
        return float(self.fields.min())

    @property
    def window_max(self):
        return float(self.fields.max())

    def field_at(self, k) -> ScalarField:
        return ScalarField(self.backend, self.fields[k])

    def to_csv(self, path, traj):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "min", "max", "L2"])
            for k, t in enumerate(self.times):
                u = self.fields[k]
                l2 = math.sqrt(traj.snapshots[k].ops.integrate(u * u))
                w.writerow([repr(float(t)), repr(float(u.min())), repr(float(u.max())), repr(l2)])

    def dump_fields(self, path):
        """Plain-text dump: one row per cell, one column per sample time."""
        flat = self.fields.reshape(len(self.times), -1).T
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell"] + [f"t={float(t)!r}" for t in self.times])
            for i, row in enumerate(flat):
                w.writerow([i] + [repr(float(v)) for v in row])


class _OpsCache:
    """Tiny cache of operators by time; RK4 revisits t + h/2 and t + h."""

    def __init__(self, traj):
        self.traj = traj
        self.static = traj.backend.kind == "FlatTorus2D"
        self._store = {}

    def snap(self, t):
        key = 0.0 if self.static else round(t, 15)
        s = self._store.get(key)
        if s is None:
            if len(self._store) > 4:
                self._store.clear()
            s = self.traj.snapshot_at(max(t, 0.0) if self.static else t)
            self._store[key] = s
        return s


def stability_cap(traj: FlowTrajectory, t_start=0.0):
    """Largest RK4 step for pure diffusion over the stiffest stored metric."""
    ts = [t_start] + [float(t) for t in traj.times]
    if traj.backend.kind == "ConformalTorus2D":
        ts += [t for t in traj.dense_times if t >= t_start]
    rho = max(traj.snapshot_at(t).ops.spectral_radius_bound() for t in set(ts))
    return RK4_REAL_LIMIT / rho


def _resolve_dt(traj, dt, t_start):
    cap = stability_cap(traj, t_start)
    if dt is None:
        return DEFAULT_DT_FRACTION * cap
    if dt > cap * (1 + 1e-12):
        raise PDEError(f"dt = {dt:.3g} violates the diffusion stability cap {cap:.3g}")
    return float(dt)


def _rk4(y, t, h, rhs):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _first_violation(mask, t, backend):
    cell = np.unravel_index(int(np.argmax(mask)), backend.shape)
    return f"t = {t:.6g}, cell {tuple(int(c) for c in cell)}"


def _as_array(u0, backend):
    if isinstance(u0, ScalarField):
        if u0.backend is not backend:
            raise PDEError("initial data lives on a different backend")
        return u0.values.copy()
    arr = np.asarray(u0, dtype=float)
    if arr.shape != backend.shape:
        raise PDEError(f"initial data has shape {arr.shape}, grid is {backend.shape}")
    return arr.copy()


def equation_rhs(eq, ops, u, path="substitution"):
    """Right-hand side ``du/dt`` of the semi-discrete forward equation.

    For :class:`LogNonlinear` with ``path="substitution"`` the unknown is
    ``v = exp(u)`` and the equation ``dv/dt = Lap v + a v ln v``.
    """
    lap = ops.laplacian(u)
    if isinstance(eq, Heat):
        return lap
    if isinstance(eq, PowerNonlinear):
        return lap + eq.lam * u**eq.p
    if isinstance(eq, LogNonlinear):
        if path == "substitution":
            return lap + eq.a * u * np.log(u)
        return lap + eq.a * u + ops.grad_sq(u)
    raise TypeError(f"unsupported equation {eq!r}")


def forcing(eq, u, ops):
    """``(d/dt - Lap) u`` for the forward equation, in the variable u."""
    if isinstance(eq, Heat):
        return np.zeros_like(u)
    if isinstance(eq, PowerNonlinear):
        return eq.lam * u**eq.p
    if isinstance(eq, LogNonlinear):
        return eq.a * u + ops.grad_sq(u)
    raise TypeError(f"unsupported equation {eq!r}")


def solve_forward(eq, u0, traj: FlowTrajectory, dt=None, path="substitution") -> ScalarFieldTrace:
    """Integrate a forward equation from ``t = 0`` and sample on ``traj.times``.

    ``LogNonlinear`` is solved for ``v = exp(u)`` by default; pass
    ``path="direct"`` to integrate the equation for ``u`` itself.
    """
    b = traj.backend
    u = _as_array(u0, b)
    if np.any(u <= 0):
        raise PDEError("initial data must be positive")
    eta, A = float(u.min()), float(u.max())
    dt = _resolve_dt(traj, dt, 0.0)
    cache = _OpsCache(traj)
    substitution = isinstance(eq, LogNonlinear) and path == "substitution"
    y = np.exp(u) if substitution else u
    floor = 1.0 if substitution else 0.0
    cap = BLOWUP_FACTOR * float(y.max())

    def rhs(t, y):
        return equation_rhs(eq, cache.snap(t).ops, y, path)

    fields, rates, raw = [], [], []
    samples = [float(t) for t in traj.times]
    k = 0
    t = 0.0

    def record(t, y):
        r = rhs(t, y)
        if substitution:
            fields.append(np.log(y))
            rates.append(r / y)
            raw.append((y.copy(), r))
        else:
            fields.append(y.copy())
            rates.append(r)

    for t, h in _step_plan(0.0, samples, dt):
        y = _rk4(y, t, h, rhs)
        tn = t + h
        bad = ~(y > floor)
        if np.any(bad):
            raise PDEError(f"positivity lost at {_first_violation(bad, tn, b)}")
        if np.max(y) > cap:
            raise PDEError(f"finite-time blow-up reached near t = {tn:.6g}")
        if k < len(samples) and abs(tn - samples[k]) < 1e-12:
            record(samples[k], y)
            k += 1
    if k < len(samples):
        # samples equal to the start time (only possible if times[0] == 0)
        raise PDEError("sample grid not reached by the integrator")

    trace = ScalarFieldTrace(
        b, np.asarray(traj.times, float), np.array(fields), np.array(rates), eq, eta, A
    )
    trace.meta["dt"] = dt
    trace.meta["path"] = path if isinstance(eq, LogNonlinear) else "direct"
    if substitution:
        trace.aux["v"] = np.array([r[0] for r in raw])
        trace.aux["v_rate"] = np.array([r[1] for r in raw])
    return trace


def log_path_discrepancy(a, u0, traj, dt=None):
    """Max difference between the substituted and direct LogNonlinear solves."""
    eq = LogNonlinear(a)
    sub = solve_forward(eq, u0, traj, dt)
    direct = solve_forward(eq, u0, traj, dt, path="direct")
    return float(np.max(np.abs(sub.fields - direct.fields))), sub, direct


def solve_conjugate_backward(K_terminal, traj: FlowTrajectory, dt=None, mass_tol=1e-6) -> ScalarFieldTrace:
    """Integrate ``dK/dt = -Lap K + R K`` backward from ``t1`` to ``t0``."""
    b = traj.backend
    K = _as_array(K_terminal, b)
    if np.any(K <= 0):
        raise PDEError("terminal density must be positive")
    t1 = traj.t1
    snap1 = traj.snapshots[-1]
    mass = snap1.ops.integrate(K)
    if abs(mass - 1.0) > 1e-12:
        log.info("renormalising terminal density (mass %.12g)", mass)
        K = K / mass
    dt = _resolve_dt(traj, dt, traj.t0)
    cache = _OpsCache(traj)

    # in reversed time s = t1 - t:  dK/ds = Lap K - R K
    def back(s, y):
        snap = cache.snap(t1 - s)
        return snap.ops.laplacian(y) - snap.scalar_curvature * y

    samples = [float(t) for t in traj.times]
    targets = [t1 - t for t in reversed(samples)]
    fields = [K.copy()]
    k = 1
    y = K
    for s, h in _step_plan(0.0, targets[1:], dt):
        y = _rk4(y, s, h, back)
        sn = s + h
        bad = ~(y > 0)
        if np.any(bad):
            raise PDEError(f"positivity lost at {_first_violation(bad, t1 - sn, b)}")
        if k < len(targets) and abs(sn - targets[k]) < 1e-12:
            fields.append(y.copy())
            k += 1
    fields = np.array(fields[::-1])
    rates = np.array([-back(t1 - t, fields[j]) for j, t in enumerate(samples)])
    trace = ScalarFieldTrace(
        b, np.asarray(traj.times, float), fields, rates, Conjugate(),
        float(K.min()), float(K.max()),
    )
    masses = np.array([s.ops.integrate(f) for s, f in zip(traj.snapshots, fields)])
    drift = float(np.max(np.abs(masses - 1.0)))
    trace.meta.update(dt=dt, mass=masses, mass_drift=drift)
    if drift > mass_tol:
        trace.meta.setdefault("warnings", []).append(
            f"mass drift {drift:.3g} exceeds tolerance {mass_tol:.3g}"
        )
    return trace


class Extrema(NamedTuple):
    times: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None
    margin: float | None
    argmin: int | None


def envelope(eq, eta, A, t):
    """Maximum-principle envelope for the equation, or None if none is known."""
    t = np.asarray(t, float)
    if isinstance(eq, Heat):
        return np.full_like(t, eta), np.full_like(t, A)
    if isinstance(eq, LogNonlinear):
        g = np.exp(eq.a * t)
        return eta * g, A * g
    if isinstance(eq, PowerNonlinear) and eq.p == 1:
        g = np.exp(eq.lam * t)
        return eta * g, A * g
    return None


def extremum_bounds(trace: ScalarFieldTrace) -> Extrema:
    axes = tuple(range(1, trace.fields.ndim))
    mins = trace.fields.min(axis=axes)
    maxs = trace.fields.max(axis=axes)
    env = envelope(trace.equation, trace.eta, trace.A, trace.times)
    if env is None:
        return Extrema(trace.times, mins, maxs, None, None, None, None)
    lo, hi = env
    per = np.minimum(mins - lo, hi - maxs)
    k = int(np.argmin(per))
    return Extrema(trace.times, mins, maxs, lo, hi, float(per[k]), k)
