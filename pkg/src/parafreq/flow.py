"""Ricci flow of the three backends and trajectory diagnostics."""
from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import EPS_FLOOR, GeometryError, MetricSnapshot, _second, diameter

log = logging.getLogger(__name__)

STABILITY_SAFETY = 0.5
# dense conformal frames kept in memory before thinning kicks in
MAX_DENSE_BYTES = 400e6


class FlowError(RuntimeError):
    pass


def _conformal_rhs(phi, hx, hy):
    return np.exp(-2.0 * phi) * (_second(phi, 0, hx) + _second(phi, 1, hy))


def conformal_dt_cap(phi, hx, hy, safety=STABILITY_SAFETY):
    h = min(hx, hy)
    return safety * float(np.min(np.exp(2.0 * phi))) * h * h / 4.0


def _step_plan(t_start, targets, dt):
    """Yield (t, h) substeps that land exactly on every target time."""
    t = t_start
    for target in targets:
        span = target - t
        if span < 0:
            raise FlowError("sample times must be increasing")
        if span == 0:
            continue
        nsteps = max(1, math.ceil(span / dt - 1e-9))
        h = span / nsteps
        for k in range(nsteps):
            yield t + k * h, h
        t = target


@dataclass(eq=False)
class FlowTrajectory:
    """Ricci flow sampled on ``times`` with dense frames for interpolation.

    ``T`` is the nominal final time of the flow.  ``snapshots[k]`` is the
    metric at ``times[k]``; :meth:`snapshot_at` returns the metric at any
    time in ``[0, times[-1]]``.
    """

    backend: object
    times: np.ndarray
    snapshots: list
    T: float
    dt: float
    dense_times: list = field(default_factory=list, repr=False)
    dense_metrics: list = field(default_factory=list, repr=False)
    eps_floor: float = EPS_FLOOR

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def t1(self):
        return float(self.times[-1])

    @property
    def K_bar(self):
        return max(max(s.ricci_lower, s.ricci_upper) for s in self.snapshots)

    def metric_at(self, t):
        b = self.backend
        if b.kind == "FlatTorus2D":
            return b.initial_metric()
        if b.kind == "AxisymSphere":
            return b.radius_sq(t)
        ts = self.dense_times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise FlowError(f"t = {t} outside the integrated range [{ts[0]}, {ts[-1]}]")
        j = bisect.bisect_right(ts, t) - 1
        j = min(max(j, 0), len(ts) - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        if w <= 1e-14:
            return self.dense_metrics[j]
        if w >= 1 - 1e-14:
            return self.dense_metrics[j + 1]
        return (1 - w) * self.dense_metrics[j] + w * self.dense_metrics[j + 1]

    def snapshot_at(self, t):
        return MetricSnapshot.build(self.backend, t, self.metric_at(t), self.eps_floor)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "metric", "K1", "K2", "R_min", "R_max", "diameter", "volume"])
            for s in self.snapshots:
                w.writerow([
                    repr(s.t), _metric_summary(s), repr(s.ricci_lower), repr(s.ricci_upper),
                    repr(float(s.scalar_curvature.min())), repr(float(s.scalar_curvature.max())),
                    repr(diameter(s)), repr(s.ops.integrate(np.ones(s.backend.shape))),
                ])


def _metric_summary(s):
    if s.backend.kind == "FlatTorus2D":
        return f"gxx={s.metric[0]!r};gyy={s.metric[1]!r}"
    if s.backend.kind == "AxisymSphere":
        return f"r2={s.metric!r}"
    return f"phi_min={float(s.metric.min())!r};phi_max={float(s.metric.max())!r}"


def default_final_time(backend, t0, t1):
    T = t1 + 0.25 * (t1 - t0)
    if backend.kind == "AxisymSphere":
        T = min(T, backend.extinction_time)
    return T


def evolve_metric(backend, times, dt=None, T=None, eps_floor=EPS_FLOOR) -> FlowTrajectory:
    """Run Ricci flow from t = 0 and sample it at ``times``.

    Parameters
    ----------
    backend : FlatTorus2D, AxisymSphere or ConformalTorus2D
    times : array_like
        Strictly increasing sample times inside ``(0, T)``.
    dt : float, optional
        Integrator step for the conformal torus.  Defaults to the stability
        cap ``0.5 * min(exp(2 phi) h^2) / 4``.
    T : float, optional
        Nominal final time; defaults to ``t1 + (t1 - t0) / 4`` (clipped to
        the extinction time on spheres).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise FlowError("empty time grid")
    if np.any(np.diff(times) <= 0):
        raise FlowError("sample times must be strictly increasing")
    if times[0] <= 0:
        raise FlowError("sample times must be positive")
    t0, t1 = float(times[0]), float(times[-1])
    if T is None:
        T = default_final_time(backend, t0, t1)
    if backend.kind == "AxisymSphere":
        if t1 >= backend.extinction_time:
            raise GeometryError(
                f"flow extinct: t1 = {t1} >= extinction time {backend.extinction_time:.6g}"
            )
        if T > backend.extinction_time + 1e-15:
            raise FlowError(f"T = {T} exceeds the extinction time {backend.extinction_time:.6g}")
    if T <= t1:
        raise FlowError(f"T = {T} must exceed t1 = {t1}")

    traj = FlowTrajectory(backend, times, [], float(T), 0.0, eps_floor=eps_floor)
    if backend.kind == "ConformalTorus2D":
        _integrate_conformal(traj, dt)
    else:
        traj.dt = 0.0 if dt is None else float(dt)
    traj.snapshots = [traj.snapshot_at(float(t)) for t in times]
    return traj


def _integrate_conformal(traj, dt):
    b = traj.backend
    phi = b.phi0.copy()
    cap = conformal_dt_cap(phi, b.hx, b.hy)
    if dt is None:
        dt = cap
    elif dt > cap * (1 + 1e-12):
        raise FlowError(f"dt = {dt:.3g} violates the stability cap {cap:.3g}")
    nsteps_est = traj.times[-1] / dt + len(traj.times)
    stride = max(1, math.ceil(nsteps_est * phi.nbytes / MAX_DENSE_BYTES))
    if stride > 1:
        log.info("keeping every %d-th conformal frame (memory budget)", stride)

    dense_t, dense_phi = [0.0], [phi.copy()]
    sample_set = set(float(t) for t in traj.times)
    rhs = lambda p: _conformal_rhs(p, b.hx, b.hy)  # noqa: E731
    count = 0
    for t, h in _step_plan(0.0, traj.times, dt):
        k1 = rhs(phi)
        k2 = rhs(phi + 0.5 * h * k1)
        k3 = rhs(phi + 0.5 * h * k2)
        k4 = rhs(phi + h * k3)
        phi = phi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(phi)):
            raise FlowError(f"conformal flow became non-finite near t = {t + h:.6g}")
        count += 1
        tn = t + h
        is_sample = any(abs(tn - s) < 1e-12 for s in sample_set)
        if is_sample or count % stride == 0:
            dense_t.append(tn)
            dense_phi.append(phi.copy())
        if conformal_dt_cap(phi, b.hx, b.hy) < h * (1 - 1e-9):
            raise FlowError(f"stability cap violated at t = {tn:.6g}")
    traj.dt = float(dt)
    traj.dense_times = dense_t
    traj.dense_metrics = dense_phi


class VolumeResidual(NamedTuple):
    residual: float
    per_sample: np.ndarray
    expected_bound: float


def check_volume_evolution(traj: FlowTrajectory) -> VolumeResidual:
    """Residual of d/dt(volume density) + R * (volume density) at interior samples."""
    if len(traj.times) < 3:
        raise FlowError("need at least 3 time samples")
    dens = [s.volume_density for s in traj.snapshots]
    res = []
    for k in range(1, len(traj.times) - 1):
        span = traj.times[k + 1] - traj.times[k - 1]
        ddt = (dens[k + 1] - dens[k - 1]) / span
        res.append(float(np.max(np.abs(ddt + traj.snapshots[k].scalar_curvature * dens[k]))))
    res = np.array(res)
    ds = float(np.max(np.diff(traj.times)))
    b = traj.backend
    h = b.h if b.kind == "AxisymSphere" else max(b.hx, b.hy)
    return VolumeResidual(float(res.max()), res, ds**2 + h**2)


class CurvatureEnvelope(NamedTuple):
    K1: float
    K2: float
    K_bar: float
    rho_min: float
    rho_max: float


def curvature_envelope(traj: FlowTrajectory) -> CurvatureEnvelope:
    K1 = max(s.ricci_lower for s in traj.snapshots)
    K2 = max(s.ricci_upper for s in traj.snapshots)
    diams = [diameter(s) for s in traj.snapshots]
    return CurvatureEnvelope(K1, K2, max(K1, K2), min(diams), max(diams))
