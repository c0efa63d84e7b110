"""Conjugate heat kernel measure and the identities it satisfies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .flow import FlowTrajectory
from .geometry import ScalarField
from .pde import ScalarFieldTrace


class MeasureError(ValueError):
    pass


@dataclass(eq=False)
class WeightedMeasure:
    """``dmu = K dV`` with potential ``f = -ln K - (n/2) ln(4 pi tau)``."""

    K: ScalarFieldTrace
    f: np.ndarray
    tau: np.ndarray
    traj: FlowTrajectory
    T: float
    mass: np.ndarray

    @property
    def n(self):
        return self.traj.backend.dim

    @property
    def times(self):
        return self.K.times

    def density(self, k):
        return self.K.fields[k]

    def integrate(self, u, k):
        return self.traj.snapshots[k].ops.integrate(np.asarray(u), self.K.fields[k])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "tau", "mass", "K_min", "K_max", "f_min", "f_max"])
            for k, t in enumerate(self.times):
                K = self.K.fields[k]
                w.writerow([repr(float(v)) for v in (
                    t, self.tau[k], self.mass[k], K.min(), K.max(), self.f[k].min(), self.f[k].max()
                )])


def weighted_measure_from_K(K: ScalarFieldTrace, traj: FlowTrajectory, T=None) -> WeightedMeasure:
    T = traj.T if T is None else float(T)
    if traj.t1 >= T:
        raise MeasureError(f"t1 = {traj.t1} must be smaller than T = {T}")
    if np.any(K.fields <= 0):
        raise MeasureError("conjugate density must be positive")
    n = traj.backend.dim
    tau = T - np.asarray(K.times, float)
    shape = (-1,) + (1,) * (K.fields.ndim - 1)
    f = -np.log(K.fields) - 0.5 * n * np.log(4 * math.pi * tau).reshape(shape)
    mass = np.array([s.ops.integrate(k) for s, k in zip(traj.snapshots, K.fields)])
    return WeightedMeasure(K, f, tau, traj, T, mass)


def density_from_potential(f, tau, n):
    return (4 * math.pi * tau) ** (-0.5 * n) * np.exp(-f)


def drift_laplacian(u, mu: WeightedMeasure, k: int) -> ScalarField:
    """``Lap u - <grad f, grad u>`` at sample ``k``, in divergence form."""
    if not 0 <= k < len(mu.times):
        raise IndexError(f"sample index {k} out of range")
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, float)
    snap = mu.traj.snapshots[k]
    return ScalarField(snap.backend, snap.ops.weighted_laplacian(vals, mu.K.fields[k]))


class Residual(NamedTuple):
    residual: float
    per_sample: np.ndarray
    location: tuple


def _interior(mu, need=3):
    if len(mu.times) < need:
        raise MeasureError(f"need at least {need} time samples")
    return range(1, len(mu.times) - 1)


def _summarise(per_fields, ks):
    per = np.array([float(np.max(np.abs(r))) for r in per_fields])
    j = int(np.argmax(per))
    cell = np.unravel_index(int(np.argmax(np.abs(per_fields[j]))), per_fields[j].shape)
    return Residual(float(per[j]), per, (ks[j], tuple(int(c) for c in cell)))


def check_f_evolution(mu: WeightedMeasure) -> Residual:
    """Residual of ``df/dt = -Lap f - R + |grad f|^2 + n/(2 tau)``.

    The time derivative of ``-ln K`` is a centred difference; the ``tau``
    part of ``f`` is differentiated exactly.
    """
    t = mu.times
    lnK = np.log(mu.K.fields)
    res, ks = [], []
    for k in _interior(mu):
        snap = mu.traj.snapshots[k]
        dfdt = -(lnK[k + 1] - lnK[k - 1]) / (t[k + 1] - t[k - 1]) + mu.n / (2 * mu.tau[k])
        f = mu.f[k]
        rhs = (-snap.ops.laplacian(f) - snap.scalar_curvature + snap.ops.grad_sq(f)
               + mu.n / (2 * mu.tau[k]))
        res.append(dfdt - rhs)
        ks.append(k)
    return _summarise(res, ks)


def bochner_residual(u, mu: WeightedMeasure, k: int) -> np.ndarray:
    snap = mu.traj.snapshots[k]
    u = u.values if isinstance(u, ScalarField) else np.asarray(u, float)
    K = mu.K.fields[k]
    ops = snap.ops
    g2 = ops.grad_sq(u)
    lhs = ops.weighted_laplacian(g2, K)
    hess = snap.hessian_norm_sq(u)
    cross = ops.grad_inner(u, ops.weighted_laplacian(u, K))
    ric_f = snap.ricci_quadratic(u) + snap.hessian_quadratic(mu.f[k], u)
    return lhs - 2 * hess - 2 * cross - 2 * ric_f


def check_weighted_bochner(u, mu: WeightedMeasure, k: int) -> Residual:
    r = bochner_residual(u, mu, k)
    cell = np.unravel_index(int(np.argmax(np.abs(r))), r.shape)
    return Residual(float(np.max(np.abs(r))), np.array([np.max(np.abs(r))]),
                    (k, tuple(int(c) for c in cell)))


def check_measure_evolution(mu: WeightedMeasure) -> Residual:
    """Residual of ``d/dt (K dV) + (Lap K) dV`` per unit coordinate volume."""
    t = mu.times
    snaps = mu.traj.snapshots
    dens = [s.volume_density * K for s, K in zip(snaps, mu.K.fields)]
    res, ks = [], []
    for k in _interior(mu):
        ddt = (dens[k + 1] - dens[k - 1]) / (t[k + 1] - t[k - 1])
        res.append(ddt + snaps[k].ops.laplacian(mu.K.fields[k]) * snaps[k].volume_density)
        ks.append(k)
    return _summarise(res, ks)


def bump_density(snapshot, center=None, width=0.05, base=0.0):
    """Normalised ``exp(-d^2 / (4 width)) + base`` on a snapshot.

    ``d`` is a smooth chordal proxy for the distance to ``center``: on tori
    ``(L/pi) sin(pi dx / L)`` per axis, on spheres ``2 r^2 (1 - cos theta
    cos theta0)``, the squared chord when ``theta0`` is a pole (the default).
    """
    b = snapshot.backend
    if b.kind == "AxisymSphere":
        th0 = 0.0 if center is None else float(center[0])
        d2 = 2 * snapshot.metric * (1 - np.cos(b.theta) * np.cos(th0))
    else:
        x, y = b.coords
        cx, cy = (0.0, 0.0) if center is None else center
        sx = (b.Lx / math.pi * np.sin(math.pi * (x - cx) / b.Lx)) ** 2
        sy = (b.Ly / math.pi * np.sin(math.pi * (y - cy) / b.Ly)) ** 2
        if b.kind == "FlatTorus2D":
            d2 = snapshot.metric[0] * sx + snapshot.metric[1] * sy
        else:
            d2 = float(np.mean(np.exp(2 * snapshot.metric))) * (sx + sy)
    K = np.exp(-d2 / (4 * width)) + base
    return K / snapshot.ops.integrate(K)
