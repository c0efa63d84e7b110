"""Discrete closed manifolds and their metric-aware differential operators.

Three backends are available: a flat 2-torus with a constant diagonal metric,
the round n-sphere restricted to axisymmetric fields, and a 2-torus carrying
a conformally flat metric ``exp(2 phi) (dx^2 + dy^2)``.

Every backend is discretised in conservative (finite-volume) form.  For each
grid axis the operator data are a cell volume ``W`` and a face conductance
``c`` such that::

    integral <grad u, grad v> dV  ~  sum over faces of c * (du) * (dv)

The Laplacian is the divergence of face fluxes divided by ``W`` and the
pointwise ``|grad u|^2`` splits each face term evenly between its two cells.
With this choice the discrete Green identity and the weighted integration by
parts identity hold to rounding, while all pointwise quantities remain second
order accurate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

EPS_FLOOR = 1e-6


class GeometryError(ValueError):
    """Raised for invalid backends, mismatched grids or an extinct flow."""


def _check_grid_count(name, count):
    if count < 8 or count % 2:
        raise GeometryError(f"{name} must be an even grid count >= 8, got {count}")


@dataclass(frozen=True, eq=False)
class FlatTorus2D:
    Lx: float
    Ly: float
    Nx: int
    Ny: int
    gxx: float = 1.0
    gyy: float = 1.0

    kind = "FlatTorus2D"
    dim = 2

    def __post_init__(self):
        _check_grid_count("Nx", self.Nx)
        _check_grid_count("Ny", self.Ny)
        if self.Lx <= 0 or self.Ly <= 0:
            raise GeometryError("torus side lengths must be positive")
        if self.gxx <= 0 or self.gyy <= 0:
            raise GeometryError("metric coefficients must be positive")

    @property
    def shape(self):
        return (self.Nx, self.Ny)

    @property
    def hx(self):
        return self.Lx / self.Nx

    @property
    def hy(self):
        return self.Ly / self.Ny

    @cached_property
    def coords(self):
        x = np.arange(self.Nx) * self.hx
        y = np.arange(self.Ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def initial_metric(self):
        return (self.gxx, self.gyy)


@dataclass(frozen=True, eq=False)
class AxisymSphere:
    n: int
    r0: float
    Ntheta: int

    kind = "AxisymSphere"

    def __post_init__(self):
        if self.n < 2:
            raise GeometryError("sphere dimension must be >= 2")
        _check_grid_count("Ntheta", self.Ntheta)
        if self.r0 <= 0:
            raise GeometryError("initial radius must be positive")

    @property
    def dim(self):
        return self.n

    @property
    def shape(self):
        return (self.Ntheta,)

    @property
    def h(self):
        return math.pi / self.Ntheta

    @cached_property
    def theta(self):
        # cell centres strictly inside (0, pi)
        return (np.arange(self.Ntheta) + 0.5) * self.h

    @property
    def coords(self):
        return (self.theta,)

    @cached_property
    def omega(self):
        """Volume of the unit (n-1)-sphere."""
        return 2.0 * math.pi ** (self.n / 2) / math.gamma(self.n / 2)

    @cached_property
    def cell_weights(self):
        """Exact cell integrals of sin^(n-1) on the theta grid."""
        nodes, weights = np.polynomial.legendre.leggauss(10)
        lo = self.theta - self.h / 2
        pts = lo[:, None] + (nodes[None, :] + 1.0) * self.h / 2
        return (np.sin(pts) ** (self.n - 1)) @ weights * (self.h / 2)

    @cached_property
    def face_weights(self):
        # face i+1/2 sits at theta = (i+1) h; the last face (theta = pi) is
        # also the wrap-around face to cell 0, and both poles carry zero flux
        faces = (np.arange(self.Ntheta) + 1.0) * self.h
        s = np.sin(faces) ** (self.n - 1)
        s[-1] = 0.0
        return s

    @property
    def extinction_time(self):
        return self.r0**2 / (2.0 * (self.n - 1))

    def radius_sq(self, t):
        return self.r0**2 - 2.0 * (self.n - 1) * t

    def initial_metric(self):
        return self.r0**2


@dataclass(frozen=True, eq=False)
class ConformalTorus2D:
    Lx: float
    Ly: float
    Nx: int
    Ny: int
    phi0: Any = None

    kind = "ConformalTorus2D"
    dim = 2

    def __post_init__(self):
        _check_grid_count("Nx", self.Nx)
        _check_grid_count("Ny", self.Ny)
        if self.Lx <= 0 or self.Ly <= 0:
            raise GeometryError("torus side lengths must be positive")
        if self.phi0 is None:
            phi = np.zeros(self.shape)
        elif callable(self.phi0):
            x, y = self.coords
            phi = np.asarray(self.phi0(x, y), float) * np.ones(self.shape)
        else:
            phi = np.asarray(self.phi0, float)
        if phi.shape != self.shape:
            raise GeometryError(f"phi0 has shape {phi.shape}, expected {self.shape}")
        object.__setattr__(self, "phi0", phi)

    @property
    def shape(self):
        return (self.Nx, self.Ny)

    @property
    def hx(self):
        return self.Lx / self.Nx

    @property
    def hy(self):
        return self.Ly / self.Ny

    @cached_property
    def coords(self):
        x = np.arange(self.Nx) * self.hx
        y = np.arange(self.Ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def initial_metric(self):
        return self.phi0


Backend = FlatTorus2D | AxisymSphere | ConformalTorus2D


@dataclass(frozen=True, eq=False)
class ScalarField:
    backend: Any
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.backend.shape:
            raise GeometryError(
                f"field has shape {values.shape}, backend grid is {self.backend.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, backend, func):
        vals = func(*backend.coords)
        return cls(backend, np.broadcast_to(np.asarray(vals, float), backend.shape).copy())

    @classmethod
    def constant(cls, backend, c):
        return cls(backend, np.full(backend.shape, float(c)))


# ---------------------------------------------------------------------------
# conservative operator kernel
# ---------------------------------------------------------------------------


class Operators:
    """Finite-volume operator data for one metric on one grid.

    ``volumes`` holds the metric volume of each cell and ``conductances`` one
    face array per grid axis; face ``i`` of an axis joins cell ``i`` to cell
    ``i + 1`` (cyclically).
    """

    def __init__(self, volumes, conductances):
        self.volumes = volumes
        self.conductances = conductances

    @staticmethod
    def _up(u, axis):
        return np.roll(u, -1, axis=axis) - u

    @staticmethod
    def _split(face, axis):
        # half of each face term to both adjacent cells
        return 0.5 * (face + np.roll(face, 1, axis=axis))

    def laplacian(self, u):
        out = np.zeros_like(u)
        for axis, c in enumerate(self.conductances):
            flux = c * self._up(u, axis)
            out += flux - np.roll(flux, 1, axis=axis)
        return out / self.volumes

    def weighted_laplacian(self, u, weight):
        """``(1/w) div(w grad u)`` with arithmetic face averages of ``w``."""
        out = np.zeros_like(u)
        for axis, c in enumerate(self.conductances):
            wf = 0.5 * (weight + np.roll(weight, -1, axis=axis))
            flux = wf * c * self._up(u, axis)
            out += flux - np.roll(flux, 1, axis=axis)
        return out / (self.volumes * weight)

    def grad_inner(self, u, v):
        out = np.zeros_like(u)
        for axis, c in enumerate(self.conductances):
            out += self._split(c * self._up(u, axis) * self._up(v, axis), axis)
        return out / self.volumes

    def grad_sq(self, u):
        return self.grad_inner(u, u)

    def integrate(self, u, weight=None):
        dens = u * self.volumes
        if weight is not None:
            dens = dens * weight
        return float(np.sum(dens))

    def spectral_radius_bound(self):
        """Gershgorin bound on the spectral radius of the discrete Laplacian."""
        row = np.zeros_like(self.volumes)
        for axis, c in enumerate(self.conductances):
            cf = np.broadcast_to(c, self.volumes.shape)
            row = row + cf + np.roll(cf, 1, axis=axis)
        return float(np.max(2.0 * row / self.volumes))


def _central(u, axis, h):
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * h)


def _second(u, axis, h):
    return (np.roll(u, -1, axis=axis) - 2.0 * u + np.roll(u, 1, axis=axis)) / h**2


def _mixed(u, hx, hy):
    return _central(_central(u, 0, hx), 1, hy)


def _sphere_ghosted(u):
    # axisymmetric fields are even about both poles
    return np.concatenate(([u[0]], u, [u[-1]]))


def _sphere_d1(u, h):
    g = _sphere_ghosted(u)
    return (g[2:] - g[:-2]) / (2.0 * h)


def _sphere_d2(u, h):
    g = _sphere_ghosted(u)
    return (g[2:] - 2.0 * g[1:-1] + g[:-2]) / h**2


@dataclass(frozen=True, eq=False)
class MetricSnapshot:
    """Metric of one backend at one time, with its curvature data.

    ``metric`` is ``(gxx, gyy)`` for the flat torus, ``r(t)^2`` for the
    sphere and the conformal factor field for the conformal torus.
    """

    backend: Any
    t: float
    metric: Any
    scalar_curvature: np.ndarray = field(repr=False)
    ricci_lower: float
    ricci_upper: float

    @classmethod
    def build(cls, backend, t, metric, eps_floor=EPS_FLOOR):
        if backend.kind == "AxisymSphere":
            metric = float(metric)
            if metric <= 0:
                raise GeometryError(
                    f"flow extinct: r(t)^2 = {metric:.3g} <= 0 at t = {t} "
                    f"(extinction time {backend.extinction_time:.6g})"
                )
            n = backend.n
            R = np.full(backend.shape, n * (n - 1) / metric)
            lo = hi = (n - 1) / metric
        elif backend.kind == "FlatTorus2D":
            metric = tuple(float(g) for g in metric)
            R = np.zeros(backend.shape)
            lo = hi = 0.0
        else:
            metric = np.asarray(metric, float)
            lap = _second(metric, 0, backend.hx) + _second(metric, 1, backend.hy)
            R = -2.0 * np.exp(-2.0 * metric) * lap
            lo, hi = 0.5 * float(R.min()), 0.5 * float(R.max())
        K1 = max(-lo, eps_floor)
        K2 = max(hi, eps_floor)
        return cls(backend, float(t), metric, R, K1, K2)

    @cached_property
    def ops(self) -> Operators:
        b = self.backend
        if b.kind == "FlatTorus2D":
            gxx, gyy = self.metric
            sq = math.sqrt(gxx * gyy)
            W = np.full(b.shape, sq * b.hx * b.hy)
            return Operators(W, [sq * b.hy / (gxx * b.hx), sq * b.hx / (gyy * b.hy)])
        if b.kind == "AxisymSphere":
            r2 = self.metric
            scale = b.omega * r2 ** ((b.n - 2) / 2)
            W = b.omega * r2 ** (b.n / 2) * b.cell_weights
            return Operators(W, [scale * b.face_weights / b.h])
        W = np.exp(2.0 * self.metric) * b.hx * b.hy
        return Operators(W, [b.hy / b.hx, b.hx / b.hy])

    @property
    def volume_density(self):
        """Metric volume per unit coordinate volume."""
        b = self.backend
        if b.kind == "FlatTorus2D":
            return np.full(b.shape, math.sqrt(self.metric[0] * self.metric[1]))
        if b.kind == "AxisymSphere":
            return np.full(b.shape, self.metric ** (b.n / 2))
        return np.exp(2.0 * self.metric)

    @property
    def ricci_eigen(self):
        """Pointwise (min, max) Ricci eigenvalue fields."""
        b = self.backend
        if b.kind == "AxisymSphere":
            val = np.full(b.shape, (b.n - 1) / self.metric)
            return val, val
        half = 0.5 * self.scalar_curvature
        return half, half

    def gradient(self, u):
        """Coordinate gradient by central differences."""
        b = self.backend
        if b.kind == "AxisymSphere":
            return (_sphere_d1(u, b.h),)
        return (_central(u, 0, b.hx), _central(u, 1, b.hy))

    def hessian_norm_sq(self, u):
        b = self.backend
        if b.kind == "FlatTorus2D":
            gxx, gyy = self.metric
            uxx, uyy = _second(u, 0, b.hx), _second(u, 1, b.hy)
            uxy = _mixed(u, b.hx, b.hy)
            return uxx**2 / gxx**2 + 2 * uxy**2 / (gxx * gyy) + uyy**2 / gyy**2
        if b.kind == "AxisymSphere":
            r2 = self.metric
            ut, utt = _sphere_d1(u, b.h), _sphere_d2(u, b.h)
            cot = 1.0 / np.tan(b.theta)
            return (utt / r2) ** 2 + (b.n - 1) * (cot * ut / r2) ** 2
        H = self._conformal_hessian(u)
        return np.exp(-4.0 * self.metric) * (H[0] ** 2 + 2 * H[1] ** 2 + H[2] ** 2)

    def _conformal_hessian(self, u):
        # covariant Hessian of u for g = exp(2 phi) delta:
        # H_ij = u_ij - phi_i u_j - phi_j u_i + delta_ij <dphi, du>
        b = self.backend
        phi = self.metric
        ux, uy = _central(u, 0, b.hx), _central(u, 1, b.hy)
        px, py = _central(phi, 0, b.hx), _central(phi, 1, b.hy)
        dot = px * ux + py * uy
        hxx = _second(u, 0, b.hx) - 2 * px * ux + dot
        hyy = _second(u, 1, b.hy) - 2 * py * uy + dot
        hxy = _mixed(u, b.hx, b.hy) - px * uy - py * ux
        return hxx, hxy, hyy

    def hessian_quadratic(self, f, u):
        """``Hess f (grad u, grad u)`` pointwise."""
        b = self.backend
        if b.kind == "AxisymSphere":
            r2 = self.metric
            return _sphere_d2(f, b.h) * _sphere_d1(u, b.h) ** 2 / r2**2
        ux, uy = _central(u, 0, b.hx), _central(u, 1, b.hy)
        if b.kind == "FlatTorus2D":
            gxx, gyy = self.metric
            vx, vy = ux / gxx, uy / gyy
            fxx, fyy = _second(f, 0, b.hx), _second(f, 1, b.hy)
            fxy = _mixed(f, b.hx, b.hy)
            return fxx * vx**2 + 2 * fxy * vx * vy + fyy * vy**2
        hxx, hxy, hyy = self._conformal_hessian(f)
        w = np.exp(-4.0 * self.metric)
        return w * (hxx * ux**2 + 2 * hxy * ux * uy + hyy * uy**2)

    def ricci_quadratic(self, u):
        """``Ric(grad u, grad u)`` pointwise (Ricci is pure trace on all backends)."""
        lo, _ = self.ricci_eigen
        return lo * self.ops.grad_sq(u)


def _values(u, m):
    if isinstance(u, ScalarField):
        if u.backend is not m.backend:
            raise GeometryError("field and metric live on different backends")
        return u.values
    arr = np.asarray(u, float)
    if arr.shape != m.backend.shape:
        raise GeometryError(f"field has shape {arr.shape}, backend grid is {m.backend.shape}")
    return arr


def laplace_beltrami(u, m: MetricSnapshot) -> ScalarField:
    return ScalarField(m.backend, m.ops.laplacian(_values(u, m)))


def gradient_norm_sq(u, m: MetricSnapshot) -> ScalarField:
    return ScalarField(m.backend, m.ops.grad_sq(_values(u, m)))


def hessian_norm_sq(u, m: MetricSnapshot) -> ScalarField:
    return ScalarField(m.backend, m.hessian_norm_sq(_values(u, m)))


def integrate(u, m: MetricSnapshot, weight=None) -> float:
    vals = _values(u, m)
    w = None
    if weight is not None:
        w = _values(weight, m)
        if np.any(w < 0):
            raise GeometryError("integration weight must be nonnegative")
    return m.ops.integrate(vals, w)


def diameter(m: MetricSnapshot, max_nodes: int = 32) -> float:
    """Geodesic diameter of the snapshot.

    The conformal torus uses all-pairs Dijkstra on an 8-neighbour grid graph,
    coarsened to at most ``max_nodes`` per axis; graph paths overestimate
    geodesic distance.
    """
    b = m.backend
    if b.kind == "AxisymSphere":
        return math.pi * math.sqrt(m.metric)
    if b.kind == "FlatTorus2D":
        gxx, gyy = m.metric
        return 0.5 * math.sqrt(gxx * b.Lx**2 + gyy * b.Ly**2)
    return _graph_diameter(b, np.exp(m.metric), max_nodes)


def _graph_diameter(b, scale, max_nodes):
    sx = max(1, b.Nx // max_nodes)
    sy = max(1, b.Ny // max_nodes)
    while b.Nx % sx:
        sx += 1
    while b.Ny % sy:
        sy += 1
    nx, ny = b.Nx // sx, b.Ny // sy
    s = scale.reshape(nx, sx, ny, sy).mean(axis=(1, 3))
    hx, hy = b.Lx / nx, b.Ly / ny
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, data = [], [], []
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        length = math.hypot(dx * hx, dy * hy)
        nb = np.roll(np.roll(idx, -dx, axis=0), -dy, axis=1)
        snb = np.roll(np.roll(s, -dx, axis=0), -dy, axis=1)
        rows.append(idx.ravel())
        cols.append(nb.ravel())
        data.append((0.5 * (s + snb) * length).ravel())
    graph = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    ).tocsr()
    dist = dijkstra(graph, directed=False)
    return float(dist.max())


def ricci_bounds(m: MetricSnapshot) -> tuple[float, float]:
    """Tightest positive (K1, K2) with -K1 g <= Ric <= K2 g on the grid."""
    return m.ricci_lower, m.ricci_upper
