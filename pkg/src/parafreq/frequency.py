"""Parabolic frequency U(t) = correction(t) * D(t) / I(t) and its constants.

Two correction factors are implemented, one for each nonlinear equation:

``phi`` (equation ``u_t = Lap u + a u + |grad u|^2``)::

    phi(t) = exp(-int_{t0}^{t} [h'/h + 4a + B(n)/(eta^2 e^{as} s) + E(s)] ds)
    E(s)   = B4/(eta e^{as}) + (n + n c^2 A^2 e^{2as} + alpha(s)) Btilde(s)
    Btilde = B2(s)/(eta^2 e^{2as}) + B3

``psi`` (equation ``u_t = Lap u + lam u^p``)::

    psi(t) = exp(-int_{t0}^{t} [(h' + 2 lam1 p A^{p-1} h)/h + N(s) n/2
                                + p C(n)/s + P] ds)

Estimate constants (B1, B(n), C1, C(n)) are left free; they are either
configured or fitted from solved traces by :func:`fit_minimal_constants`.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .flow import FlowTrajectory, curvature_envelope
from .pde import Heat, LogNonlinear, PowerNonlinear, ScalarFieldTrace

QUAD_TOL = 1e-8
H_FLOOR = 1e-10
DEFAULT_SAFETY = 1.1


class FrequencyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def adaptive_simpson(f, a, b, tol=QUAD_TOL, max_depth=60):
    """Adaptive Simpson rule with a relative tolerance.

    Returns ``(value, error_estimate)``.  Intervals are bisected until the
    local Richardson estimate meets its share of the tolerance, so steep
    integrands (``1/s`` near a small lower limit) get refined locally.
    """
    if a == b:
        return 0.0, 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    target = tol * max(abs(whole), 1e-300)
    total, err = 0.0, 0.0
    stack = [(a, b, fa, fm, fb, whole, target, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, S, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4 * frm + fhi)
        delta = left + right - S
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
        else:
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    return sign * total, err


# ---------------------------------------------------------------------------
# weight functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    """The free time weight h(t) and its derivative.

    Use the constructors :meth:`constant`, :meth:`exponential`,
    :meth:`polynomial` or :meth:`tabulated`.
    """

    kind: str
    params: tuple

    @classmethod
    def constant(cls, c):
        return cls("constant", (float(c),))

    @classmethod
    def exponential(cls, c, k):
        return cls("exponential", (float(c), float(k)))

    @classmethod
    def polynomial(cls, coeffs):
        # coefficients in increasing powers of t
        return cls("polynomial", tuple(float(c) for c in coeffs))

    @classmethod
    def tabulated(cls, times, values):
        return cls("tabulated", (tuple(float(t) for t in times), tuple(float(v) for v in values)))

    def scaled(self, factor):
        if self.kind == "constant":
            return WeightFunction.constant(self.params[0] * factor)
        if self.kind == "exponential":
            return WeightFunction.exponential(self.params[0] * factor, self.params[1])
        if self.kind == "polynomial":
            return WeightFunction.polynomial([c * factor for c in self.params])
        return WeightFunction.tabulated(self.params[0], [v * factor for v in self.params[1]])

    def __call__(self, t):
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "exponential":
            c, k = self.params
            return c * math.exp(k * t)
        if self.kind == "polynomial":
            return sum(c * t**i for i, c in enumerate(self.params))
        ts, vs = self.params
        return float(np.interp(t, ts, vs))

    def derivative(self, t):
        if self.kind == "constant":
            return 0.0
        if self.kind == "exponential":
            c, k = self.params
            return c * k * math.exp(k * t)
        if self.kind == "polynomial":
            return sum(i * c * t ** (i - 1) for i, c in enumerate(self.params) if i)
        ts, vs = (np.asarray(p) for p in self.params)
        return float(np.interp(t, ts, np.gradient(vs, ts, edge_order=2)))

    def log_derivative(self, t):
        if self.kind == "exponential":
            return self.params[1]
        return self.derivative(t) / self(t)

    def check(self, t0, t1, h_floor=H_FLOOR, samples=2001):
        """Raise unless h keeps one sign with ``|h| >= h_floor`` on [t0, t1]."""
        vals = np.array([self(t) for t in np.linspace(t0, t1, samples)])
        if np.min(np.abs(vals)) < h_floor:
            raise FrequencyError(f"|h| drops below {h_floor:g} on [{t0}, {t1}]")
        if not (np.all(vals > 0) or np.all(vals < 0)):
            raise FrequencyError(f"h changes sign on [{t0}, {t1}]")
        return 1 if vals[0] > 0 else -1


# ---------------------------------------------------------------------------
# constant registry
# ---------------------------------------------------------------------------


ESTIMATE_CONSTANTS = ("B1", "B_n", "C1", "C_n")


@dataclass(frozen=True)
class ConstantRegistry:
    """Every constant entering the correction factors and the estimates.

    Free estimate constants are ``B1``, ``B_n`` (B(n)), ``C1`` and ``C_n``
    (C(n)); everything else in the derived block is recomputed from them.
    ``eta``/``A`` bound u: the initial data for the phi correction, all of
    M x [t0, t1] for psi.
    """

    n: int
    K1: float
    K2: float
    rho: float
    T: float
    t0: float
    eta: float
    A: float
    a: float = 0.0
    lam: float = 0.0
    p: float = 1.0
    c_n: float = 2.0
    B1: float = 1.0
    B_n: float = 1.0
    C1: float = 1.0
    C_n: float = 1.0
    B4_mode: str = "full"
    E_variant: str = "definition"
    safety: float = 1.0
    B4_override: float | None = None
    C3_override: float | None = None
    provenance: dict = field(default_factory=dict, compare=False)
    audit: dict = field(default_factory=dict, compare=False)

    # -- derived constants -------------------------------------------------

    @property
    def K_bar(self):
        return max(self.K1, self.K2)

    @property
    def eta1(self):
        return math.exp(self.eta)

    @property
    def A1(self):
        return math.exp(self.A)

    @property
    def lam1(self):
        return max(0.0, self.lam)

    @property
    def X(self):
        # sup over s in [0, T] of max{a (1 + e^{as} ln A1), 0}
        a, lnA1 = self.a, self.A
        ends = [a * (1 + math.exp(a * s) * lnA1) for s in (0.0, self.T)]
        return max(0.0, *ends)

    @property
    def envelope_factor(self):
        return math.sqrt(self.K_bar) + 1 / self.rho + 1 / math.sqrt(self.T) + math.sqrt(self.X)

    @property
    def B3(self):
        return 2 * self.B1 * self.envelope_factor**2

    def B2(self, t):
        return self.B3 * (1 + math.exp(self.a * t) * self.A) ** 2

    @property
    def B4(self):
        if self.B4_override is not None:
            return self.B4_override
        tail = 16 * self.n * math.sqrt(self.a**2)
        if self.B4_mode == "rho_inf":
            return self.B_n * self.K_bar + tail
        rho, Kb = self.rho, self.K_bar
        return self.B_n / rho**2 + self.B_n * math.sqrt(Kb) / rho + self.B_n * Kb + tail

    def alpha(self, t):
        return max(0.0, 2 - self.eta * math.exp(self.a * t))

    def B_tilde(self, t):
        return self.B2(t) / (self.eta**2 * math.exp(2 * self.a * t)) + self.B3

    @property
    def alpha_p(self):
        return max(self.p * self.lam * self.A ** (self.p - 1), 0.0)

    def C2(self, t):
        return self.C1 * (1 / self.rho + 1 / math.sqrt(t) + math.sqrt(self.K_bar)
                          + math.sqrt(self.alpha_p))

    @property
    def C3(self):
        if self.C3_override is not None:
            return self.C3_override
        p, lam, A = self.p, self.lam, self.A
        return self.C_n * (1 + self.K1 + self.K_bar) + self.C_n * p**2 * lam * A ** (p - 1)

    def N(self, t):
        return self.C2(t) * (1 + math.log(self.A / self.eta))

    @property
    def P(self):
        return self.p * self.C3 + self.lam1 * self.A ** (self.p - 1)

    # -- integrands ----------------------------------------------------------

    def E(self, s, t=None):
        """E(s); ``E_variant="proof"`` evaluates the B4 term at the upper limit t."""
        tt = s if (self.E_variant == "definition" or t is None) else t
        ea = math.exp(self.a * s)
        return (self.B4 / (self.eta * math.exp(self.a * tt))
                + (self.n + self.n * self.c_n**2 * self.A**2 * ea**2 + self.alpha(s))
                * self.B_tilde(s))

    def phi_rate(self, s, t=None):
        """phi integrand without the h'/h term."""
        return (4 * self.a + self.B_n / (self.eta**2 * math.exp(self.a * s) * s)
                + self.E(s, t))

    def psi_rate(self, s):
        """psi integrand without the h'/h term."""
        p = self.p
        return (2 * self.lam1 * p * self.A ** (p - 1) + 0.5 * self.N(s) * self.n
                + p * self.C_n / s + self.P)

    def heat_rate(self, s):
        """Heat-equation integrand without h'/h, written as in the lam = 0, p = 1 case."""
        return 0.5 * self.N(s) * self.n + self.C_n / s + self.C3

    # -- bookkeeping ---------------------------------------------------------

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def with_safety(self, factor=DEFAULT_SAFETY):
        """Scale the fitted estimate constants (all four if none is marked fitted)."""
        keys = [k for k in ESTIMATE_CONSTANTS if self.provenance.get(k) == "fitted"]
        kw = {k: getattr(self, k) * factor for k in (keys or ESTIMATE_CONSTANTS)}
        return self.replace(safety=self.safety * factor, **kw)

    def as_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["derived"] = {
            "K_bar": self.K_bar, "X": self.X, "B3": self.B3, "B4": self.B4,
            "C3": self.C3, "P": self.P, "lam1": self.lam1, "alpha_p": self.alpha_p,
            "envelope_factor": self.envelope_factor,
        }
        return d

    def to_json(self, path=None):
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d.pop("derived", None)
        return cls(**d)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(type(o))


def registry_for(trace: ScalarFieldTrace, traj: FlowTrajectory, **overrides) -> ConstantRegistry:
    """Registry with geometry and solution bounds measured from a solve."""
    env = curvature_envelope(traj)
    eq = trace.equation
    if isinstance(eq, LogNonlinear):
        eta, A = trace.eta, trace.A
    else:
        eta, A = trace.window_min, trace.window_max
    kw = dict(
        n=traj.backend.dim, K1=env.K1, K2=env.K2, rho=env.rho_min, T=traj.T, t0=traj.t0,
        eta=eta, A=A,
        a=getattr(eq, "a", 0.0), lam=getattr(eq, "lam", 0.0), p=getattr(eq, "p", 1.0),
    )
    prov = {k: "derived" for k in ("K1", "K2", "rho", "T", "eta", "A")}
    prov.update({k: "configured" for k in ("a", "lam", "p", "c_n") + ESTIMATE_CONSTANTS})
    for k in overrides:
        prov[k] = "configured"
    kw.update(overrides)
    return ConstantRegistry(provenance=prov, **kw)


# ---------------------------------------------------------------------------
# corrections
# ---------------------------------------------------------------------------


class Correction:
    """Cumulative correction exponent ``int_{t0}^{s} rate`` with node caching."""

    def __init__(self, registry, h: WeightFunction, kind, t0=None, tol=QUAD_TOL):
        if kind not in ("phi", "psi", "heat"):
            raise FrequencyError(f"unknown correction kind {kind!r}")
        self.reg = registry
        self.h = h
        self.kind = kind
        self.t0 = registry.t0 if t0 is None else t0
        self.tol = tol
        self._nodes = [self.t0]
        self._values = [0.0]
        self.error = 0.0

    def rate(self, s, t=None):
        r = self.reg
        hl = self.h.log_derivative(s)
        if self.kind == "phi":
            return hl + r.phi_rate(s, t)
        if self.kind == "heat":
            return hl + r.heat_rate(s)
        return hl + r.psi_rate(s)

    def exponent(self, t):
        if t < self.t0 - 1e-14:
            raise FrequencyError(f"t = {t} precedes t0 = {self.t0}")
        if self.kind == "phi" and self.reg.E_variant == "proof":
            val, err = adaptive_simpson(lambda s: self.rate(s, t), self.t0, t, self.tol)
            self.error = max(self.error, err)
            return val
        j = int(np.searchsorted(self._nodes, t, side="right")) - 1
        base, val0 = self._nodes[j], self._values[j]
        if t == base:
            return val0
        val, err = adaptive_simpson(self.rate, base, t, self.tol)
        self.error = max(self.error, err)
        return val0 + val

    def extend(self, t):
        """Cache the exponent at ``t`` (nodes must be added in increasing order)."""
        v = self.exponent(t)
        if t > self._nodes[-1]:
            self._nodes.append(t)
            self._values.append(v)
        return v

    def __call__(self, t):
        return math.exp(-self.exponent(t))


def _check_h(h, t0, t):
    h.check(t0, max(t, t0 + 1e-300) if t > t0 else t0)


def correction_phi(traj, registry, h, t, tol=QUAD_TOL):
    if t > registry.t0:
        _check_h(h, registry.t0, t)
    return Correction(registry, h, "phi", tol=tol)(t)


def correction_psi(traj, registry, h, t, tol=QUAD_TOL):
    if t > registry.t0:
        _check_h(h, registry.t0, t)
    return Correction(registry, h, "psi", tol=tol)(t)


def correction_heat(traj, registry, h, t, tol=QUAD_TOL):
    """psi for the heat equation, written with its own integrand."""
    if t > registry.t0:
        _check_h(h, registry.t0, t)
    return Correction(registry, h, "heat", tol=tol)(t)


# ---------------------------------------------------------------------------
# I, D, U
# ---------------------------------------------------------------------------


def compute_I(u, mu, k):
    vals = getattr(u, "values", u)
    return mu.integrate(np.asarray(vals) ** 2, k)


class DirichletValue(NamedTuple):
    D: float
    D_drift: float


def compute_D(u, mu, k, h: WeightFunction) -> DirichletValue:
    vals = np.asarray(getattr(u, "values", u), float)
    ops = mu.traj.snapshots[k].ops
    hk = h(float(mu.times[k]))
    energy = mu.integrate(ops.grad_sq(vals), k)
    drift = ops.weighted_laplacian(vals, mu.K.fields[k])
    return DirichletValue(hk * energy, -hk * mu.integrate(vals * drift, k))


@dataclass(eq=False)
class FrequencyTrace:
    times: np.ndarray
    I: np.ndarray
    D: np.ndarray
    correction: np.ndarray
    U: np.ndarray
    kind: str
    registry: ConstantRegistry
    h: WeightFunction
    D_drift: np.ndarray = None
    quad_error: float = 0.0
    equation: object = None
    corr: Correction = field(default=None, repr=False)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "I", "D", "correction", "U"])
            for row in zip(self.times, self.I, self.D, self.correction, self.U):
                w.writerow([repr(float(v)) for v in row])


def _check_bounds(trace, registry, kind):
    if kind == "phi":
        lo, hi = trace.eta, trace.A
    else:
        lo, hi = trace.window_min, trace.window_max
    slack = 1e-12 * max(1.0, abs(hi))
    if registry.eta > lo + slack or registry.A < hi - slack:
        raise FrequencyError(
            f"registry bounds [{registry.eta:.6g}, {registry.A:.6g}] do not contain "
            f"the measured solution range [{lo:.6g}, {hi:.6g}]"
        )


def compute_U_trace(trace: ScalarFieldTrace, mu, h: WeightFunction, registry, kind) -> FrequencyTrace:
    """Sample I, D, the correction factor and U on the trace's times.

    ``kind`` is ``"phi"``, ``"psi"`` or ``"heat"`` (the heat-equation form of
    psi).
    """
    _check_bounds(trace, registry, "phi" if kind == "phi" else "psi")
    times = np.asarray(trace.times, float)
    h.check(times[0], times[-1])
    if abs(registry.t0 - times[0]) > 1e-12:
        registry = registry.replace(t0=float(times[0]))
    corr = Correction(registry, h, kind)
    I = np.array([compute_I(trace.fields[k], mu, k) for k in range(len(times))])
    Ds = [compute_D(trace.fields[k], mu, k, h) for k in range(len(times))]
    D = np.array([d.D for d in Ds])
    c = np.array([math.exp(-corr.extend(float(t))) for t in times])
    return FrequencyTrace(
        times, I, D, c, c * D / I, kind, registry, h,
        D_drift=np.array([d.D_drift for d in Ds]), quad_error=corr.error,
        equation=trace.equation, corr=corr,
    )


# ---------------------------------------------------------------------------
# estimate terms and constant fitting
# ---------------------------------------------------------------------------


LEMMA_CONSTANT = {"L32": "B1", "L34": "B1", "L35": "B_n", "L37": "B_n", "L41": "C1", "L42": "C_n"}
LOG_LEMMAS = ("L32", "L34", "L35", "L37")
POWER_LEMMAS = ("L41", "L42")


class EstimateTerms(NamedTuple):
    """Pointwise pieces of an estimate ``lhs <= const * coeff + offset``."""

    lhs: np.ndarray
    coeff: np.ndarray
    offset: np.ndarray


def _time_shape(trace):
    return (-1,) + (1,) * (trace.fields.ndim - 1)


def estimate_terms(lemma, trace: ScalarFieldTrace, traj: FlowTrajectory, reg: ConstantRegistry) -> EstimateTerms:
    """LHS, constant coefficient and constant-free offset of one estimate.

    L34 is written in its first (unsquared) form here; the registry form
    ``B2(t) + B3 u^2`` is evaluated by :func:`estimate_rhs`.
    """
    t = np.asarray(trace.times, float).reshape(_time_shape(trace))
    snaps = traj.snapshots
    u = trace.fields
    g2 = np.array([s.ops.grad_sq(f) for s, f in zip(snaps, u)])
    zeros = np.zeros_like(u)
    if lemma in LOG_LEMMAS:
        a = reg.a
        if "v" in trace.aux:
            v, vt = trace.aux["v"], trace.aux["v_rate"]
        else:
            v, vt = np.exp(u), trace.rates * np.exp(u)
        gv2 = np.array([s.ops.grad_sq(f) for s, f in zip(snaps, v)])
        F = reg.envelope_factor
        gap = 1 + np.exp(a * t) * reg.A - u
        if lemma == "L32":
            return EstimateTerms(np.sqrt(gv2) / v, F * (1 + np.log(reg.A1 ** np.exp(a * t) / v)), zeros)
        if lemma == "L34":
            return EstimateTerms(g2, F**2 * gap**2, zeros)
        tail = 16 * reg.n * abs(a)
        if reg.B4_mode == "rho_inf":
            coeff = 1 / t + reg.K_bar
        else:
            coeff = 1 / t + 1 / reg.rho**2 + math.sqrt(reg.K_bar) / reg.rho + reg.K_bar
        coeff = coeff + zeros
        if lemma == "L35":
            lhs = gv2 / v**2 - 2 * vt / v - 2 * a * np.log(v)
        else:
            lhs = g2 - 2 * trace.rates - 2 * a * u
        return EstimateTerms(lhs, coeff, zeros + tail)
    if lemma == "L41":
        lhs = np.sqrt(g2) / u
        coeff = ((1 / reg.rho + 1 / np.sqrt(t) + math.sqrt(reg.K_bar) + math.sqrt(reg.alpha_p))
                 * (1 + np.log(reg.A / u)))
        return EstimateTerms(lhs, coeff, zeros)
    if lemma == "L42":
        lam, p = reg.lam, reg.p
        lhs = g2 / u**2 + (lam / p) * u ** (p - 1) - trace.rates / (p * u)
        coeff = 1 / t + 1 + reg.K1 + reg.K_bar + p**2 * lam * reg.A ** (p - 1) + zeros
        return EstimateTerms(lhs, coeff, zeros)
    raise FrequencyError(f"unknown lemma {lemma!r}")


def estimate_rhs(lemma, terms: EstimateTerms, trace, reg: ConstantRegistry):
    """Right-hand side of the estimate with the registry's constants."""
    if lemma == "L34":
        t = np.asarray(trace.times, float).reshape(_time_shape(trace))
        B2 = reg.B3 * (1 + np.exp(reg.a * t) * reg.A) ** 2
        return B2 + reg.B3 * trace.fields**2
    if lemma in ("L35", "L37"):
        # B4 already carries the constant-free 16 n |a| tail
        t = np.asarray(trace.times, float).reshape(_time_shape(trace))
        return reg.B_n / t + reg.B4 + np.zeros_like(terms.lhs)
    if lemma == "L42":
        t = np.asarray(trace.times, float).reshape(_time_shape(trace))
        return reg.C_n / t + reg.C3 + np.zeros_like(terms.lhs)
    const = getattr(reg, LEMMA_CONSTANT[lemma])
    return const * terms.coeff + terms.offset


class FitResult(NamedTuple):
    value: float
    location: tuple | None
    infeasible: int


def fit_constant(terms: EstimateTerms, times) -> FitResult:
    """Smallest nonnegative constant with ``lhs <= const * coeff + offset`` everywhere."""
    excess = terms.lhs - terms.offset
    pos = terms.coeff > 0
    bad = (~pos) & (excess > 0)
    ratio = np.where(pos, excess / np.where(pos, terms.coeff, 1.0), -np.inf)
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    best = float(ratio[idx])
    loc = (float(times[idx[0]]), tuple(int(i) for i in idx[1:]))
    if best <= 0:
        return FitResult(0.0, loc, int(bad.sum()))
    return FitResult(best, loc, int(bad.sum()))


class FitError(RuntimeError):
    pass


def fit_minimal_constants(traces, traj: FlowTrajectory, registry_template: ConstantRegistry,
                          safety=DEFAULT_SAFETY) -> ConstantRegistry:
    """Fit B1, B(n), C1, C(n) as the smallest constants making the estimates hold.

    ``traces`` is one trace or a list; LogNonlinear traces fit B1 (L32 and
    the first form of L34) and B(n) (L35, L37), Heat/PowerNonlinear traces
    fit C1 (L41) and C(n) (L42).  The returned registry stores the raw fitted
    values; its ``safety`` field records the multiplier to apply with
    :meth:`ConstantRegistry.with_safety`.
    """
    if isinstance(traces, ScalarFieldTrace):
        traces = [traces]
    if not traces:
        raise FitError("no traces to fit")
    best = {}
    audit = {}
    for trace in traces:
        lemmas = LOG_LEMMAS if isinstance(trace.equation, LogNonlinear) else POWER_LEMMAS
        if not isinstance(trace.equation, (LogNonlinear, Heat, PowerNonlinear)):
            raise FitError(f"cannot fit constants from {trace.equation!r}")
        reg = registry_template
        for lemma in lemmas:
            terms = estimate_terms(lemma, trace, traj, reg)
            res = fit_constant(terms, trace.times)
            if res.infeasible:
                raise FitError(f"{lemma}: {res.infeasible} points violate the estimate for every constant")
            name = LEMMA_CONSTANT[lemma]
            audit[lemma] = {"constant": name, "value": res.value,
                            "argmax_t": res.location[0], "argmax_cell": list(res.location[1])}
            if res.value >= best.get(name, (-1.0,))[0]:
                best[name] = (res.value, lemma)
    kw = {name: val for name, (val, _) in best.items()}
    prov = dict(registry_template.provenance)
    prov.update({name: "fitted" for name in kw})
    out = registry_template.replace(provenance=prov, audit=audit, safety=1.0, **kw)
    out.audit["safety_multiplier"] = safety
    return out
