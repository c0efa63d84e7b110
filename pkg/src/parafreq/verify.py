"""Pass/fail numerical checks for every identity, estimate and monotonicity claim."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .frequency import (
    LEMMA_CONSTANT,
    EstimateTerms,
    FrequencyTrace,
    adaptive_simpson,
    estimate_rhs,
    estimate_terms,
    fit_constant,
)
from .pde import Heat, LogNonlinear, PowerNonlinear, ScalarFieldTrace, extremum_bounds, forcing

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
_RANK = {PASS: 0, INCONCLUSIVE: 1, FAIL: 2}


@dataclass
class CheckReport:
    """Outcome of one check; ``margin > 0`` means the claim holds with room."""

    check_id: str
    status: str
    margin: float
    location: tuple | None = None
    tolerance: float = 0.0
    convergence: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "check_id": self.check_id,
            "status": self.status,
            "margin": self.margin,
            "location": list(self.location) if self.location is not None else None,
            "tolerance": self.tolerance,
            "convergence": self.convergence,
            "details": self.details,
        }

    def line(self):
        loc = "" if self.location is None else f" at {self.location}"
        return f"{self.status.upper():12s} {self.check_id:28s} margin={self.margin:+.3e} tol={self.tolerance:.1e}{loc}"


def classify(margin, tol, converging=True):
    if margin < -tol:
        return FAIL
    if abs(margin) <= tol and not converging:
        return INCONCLUSIVE
    return PASS


def worst_status(reports):
    if not reports:
        return PASS
    return max((r.status for r in reports), key=_RANK.__getitem__)


def convergence_order(residuals):
    """Observed orders between successive residuals of a 2x refinement chain."""
    r = [float(x) for x in residuals]
    return [math.log2(r[i] / r[i + 1]) if r[i + 1] > 0 and r[i] > 0 else math.inf
            for i in range(len(r) - 1)]


def _loc(k, cell, times):
    return (float(times[k]), tuple(int(c) for c in cell))


# ---------------------------------------------------------------------------
# rate identity for |grad u|^2
# ---------------------------------------------------------------------------


def _metric_offset(traj, k):
    """Half-width for a centred difference of the metric at sample ``k``."""
    b = traj.backend
    if b.kind == "FlatTorus2D":
        return None
    if b.kind == "AxisymSphere":
        return 1e-4 * float(traj.times[k])
    ts = np.asarray(traj.dense_times)
    j = int(np.argmin(np.abs(ts - traj.times[k])))
    left = ts[j] - ts[j - 1] if j > 0 else np.inf
    right = ts[j + 1] - ts[j] if j + 1 < len(ts) else np.inf
    return 0.5 * min(left, right)


def grad_sq_rate(trace: ScalarFieldTrace, traj, k):
    """``d/dt |grad u|^2_{g(t)}`` at sample ``k``.

    Split by the chain rule into ``2<grad u, grad u_t>`` (u_t from the
    semi-discrete equation) and the metric part, a centred difference of
    ``|grad u|^2_{g(t +- delta)}`` with u frozen.  The metric part carries the
    Ricci term of the evolving metric.
    """
    u = trace.fields[k]
    ops = traj.snapshots[k].ops
    out = 2 * ops.grad_inner(u, trace.rates[k])
    delta = _metric_offset(traj, k)
    if delta is not None:
        t = float(traj.times[k])
        hi = traj.snapshot_at(t + delta).ops.grad_sq(u)
        lo = traj.snapshot_at(t - delta).ops.grad_sq(u)
        out = out + (hi - lo) / (2 * delta)
    return out


def lemma31_residual(trace: ScalarFieldTrace, traj, relative=False):
    """Max-norm residual of the evolution equation of |grad u|^2.

    ``(d/dt - Lap)|grad u|^2 + 2|Hess u|^2 - 2<grad u, grad F>`` with F the
    equation's forcing, over the interior samples.  With ``relative`` the
    residual is divided by the largest single term.
    """
    times = trace.times
    if len(times) < 3:
        raise ValueError("need at least 3 samples")
    snaps = traj.snapshots
    worst, where = 0.0, None
    per = []
    scale = 0.0
    for k in range(1, len(times) - 1):
        s, u = snaps[k], trace.fields[k]
        F = forcing(trace.equation, u, s.ops)
        G = s.ops.grad_sq(u)
        terms = (grad_sq_rate(trace, traj, k), -s.ops.laplacian(G), 2 * s.hessian_norm_sq(u),
                 -2 * s.ops.grad_inner(u, F))
        res = sum(terms)
        scale = max(scale, *(float(np.max(np.abs(x))) for x in terms))
        r = np.abs(res)
        m = float(r.max())
        per.append(m)
        if m >= worst:
            worst = m
            where = _loc(k, np.unravel_index(int(np.argmax(r)), r.shape), times)
    if relative:
        return (worst / scale if scale > 0 else worst), where, np.array(per) / max(scale, 1e-300)
    return worst, where, np.array(per)


def check_lemma31(u: ScalarFieldTrace, traj, tol=1e-3, refinement=(), min_order=1.8,
                  relative=False) -> CheckReport:
    """Residual of the |grad u|^2 rate identity; ``refinement`` is a list of coarser ``(trace, traj)``
    pairs ordered coarse to fine, each a 2x refinement of the previous."""
    res, where, _ = lemma31_residual(u, traj, relative)
    conv = {}
    converging = True
    if refinement:
        chain = [lemma31_residual(t, tj, relative)[0] for t, tj in refinement] + [res]
        orders = convergence_order(chain)
        conv = {"residuals": chain, "orders": orders}
        converging = all(o >= min_order for o in orders) or max(chain) < 1e-12
    status = classify(-res, tol, converging)
    if refinement and not converging and status == PASS and res > 1e-12:
        status = FAIL
    return CheckReport("lemma31", status, -res, where, tol, conv, {"relative": relative})


# ---------------------------------------------------------------------------
# monotonicity
# ---------------------------------------------------------------------------


def _centred_derivative(values, times):
    v, t = np.asarray(values), np.asarray(times)
    return (v[2:] - v[:-2]) / (t[2:] - t[:-2])


def check_monotonicity(ft: FrequencyTrace, expected, coarse: FrequencyTrace | None = None,
                       rel_tol=1e-8) -> CheckReport:
    """Scan centred differences of U for the expected direction.

    With ``coarse`` (same sample times, half the grid) the tolerance adds a
    Richardson estimate of the discretisation error of U'.
    """
    if expected not in ("increasing", "decreasing"):
        raise ValueError(expected)
    sgn = 1.0 if expected == "increasing" else -1.0
    dU = _centred_derivative(ft.U, ft.times)
    scale = float(np.max(np.abs(ft.U))) if len(ft.U) else 0.0
    err = np.zeros_like(dU)
    conv = {}
    if coarse is not None:
        dUc = _centred_derivative(coarse.U, coarse.times)
        err = np.abs(dU - dUc) / 3.0
        conv = {"richardson_max": float(err.max()) if err.size else 0.0}
    tol = rel_tol * scale + (float(err.max()) if err.size else 0.0)
    if dU.size == 0:
        return CheckReport(f"monotonicity[{ft.kind}]", PASS, 0.0, None, tol, conv)
    signed = sgn * dU
    k = int(np.argmin(signed))
    margin = float(signed[k])
    details = {"expected": expected, "U_min": float(ft.U.min()), "U_max": float(ft.U.max())}
    return CheckReport(f"monotonicity[{ft.kind}]", classify(margin, tol), margin,
                       (float(ft.times[k + 1]),), tol, conv, details)


# ---------------------------------------------------------------------------
# integral Harnack inequalities
# ---------------------------------------------------------------------------


def _suffix_integrals(fn, times):
    """``J[k] = int_{t_k}^{t_end} fn`` for all sample times, plus max error."""
    pieces, err = [], 0.0
    for a, b in zip(times[:-1], times[1:]):
        v, e = adaptive_simpson(fn, float(a), float(b))
        pieces.append(v)
        err += e
    J = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return J, err


def harnack_margins(ft: FrequencyTrace, registry, variant):
    """Per-sample margins ``I(t1) - I(t) exp(...)`` and branch bookkeeping."""
    times = np.asarray(ft.times, float)
    corr = ft.corr
    h = ft.h
    reg = ft.registry
    I1 = ft.I[-1]
    margins = np.empty(len(times))
    info = {"variant": variant}
    if variant == "cor13":
        lam1, eta, p = reg.lam1, reg.eta, reg.p

        def g(s):
            return -1.0 / (corr(s) * h(s))

        J, err = _suffix_integrals(g, times)
        expo = 2 * ft.U * J + 2 * lam1 * eta ** (p - 1) * (times[-1] - times)
        margins = I1 - ft.I * np.exp(expo)
        info["quad_error"] = err
        return margins, np.ones(len(times), bool), info

    a, eta = reg.a, reg.eta

    def g(s):
        return (eta * math.exp(a * s) - 1.0) / (corr(s) * h(s))

    # split the sample grid at the branch crossing eta e^{as} = 1
    cross = None
    if a != 0 and eta > 0:
        sc = -math.log(eta) / a
        if times[0] < sc < times[-1]:
            cross = sc
    nodes = sorted(set(times.tolist() + ([cross] if cross is not None else [])))
    pieces = []
    err = 0.0
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        v, e = adaptive_simpson(g, lo, hi)
        mid = 0.5 * (lo + hi)
        pieces.append((lo, hi, v, eta * math.exp(a * mid) <= 1.0))
        err += e
    U_end = ft.U[-1]
    branch = np.array([eta * math.exp(a * t) <= 1.0 for t in times])
    for k, t in enumerate(times):
        expo = 2 * a * (times[-1] - t)
        for lo, hi, v, low_branch in pieces:
            if lo >= t - 1e-15:
                expo += 2 * (ft.U[k] if low_branch else U_end) * v
        margins[k] = I1 - ft.I[k] * math.exp(expo)
    if variant == "cor39i":
        mask = branch
    elif variant == "cor39ii":
        mask = ~branch
    else:
        mask = np.ones(len(times), bool)
    info.update(quad_error=err, crossing=cross, split=cross is not None,
                branch_i=int(branch.sum()), branch_ii=int((~branch).sum()))
    return margins, mask, info


def check_harnack(ft: FrequencyTrace, mu, registry, variant, coarse: FrequencyTrace | None = None,
                  rel_tol=1e-8) -> CheckReport:
    """Integral Harnack inequality at every sample time.

    ``variant`` is ``cor13`` (power/heat equations, psi correction) or
    ``cor39``/``cor39i``/``cor39ii`` (log equation, phi correction).  For the
    log equation the branch at each t follows the sign of ``eta e^{at} - 1``;
    if it changes inside ``[t, t1]`` the interval is split at the crossing
    and each piece uses its own branch (``U(t)`` for i, ``U(t1)`` for ii).
    """
    is_log = isinstance(ft.equation, LogNonlinear)
    if variant == "cor13" and is_log:
        raise ValueError("cor13 applies to the power/heat equations")
    if variant.startswith("cor39") and not is_log:
        raise ValueError("cor39 applies to the log equation")
    margins, mask, info = harnack_margins(ft, registry, variant)
    tol = rel_tol * float(np.max(ft.I))
    conv = {}
    if coarse is not None:
        mc, _, _ = harnack_margins(coarse, coarse.registry, variant)
        est = np.abs(margins - mc) / 3.0
        conv = {"richardson_max": float(est[mask].max()) if mask.any() else 0.0}
        tol += conv["richardson_max"]
    if not mask.any():
        return CheckReport(f"harnack[{variant}]", PASS, 0.0, None, tol, conv,
                           dict(info, note="no samples in this branch"))
    idx = np.flatnonzero(mask[:-1])
    if idx.size == 0:
        return CheckReport(f"harnack[{variant}]", PASS, 0.0, None, tol, conv,
                           dict(info, note="only t1 in this branch"))
    k = idx[int(np.argmin(margins[idx]))]
    margin = float(margins[k])
    info["relative_margin"] = margin / float(ft.I[-1])
    return CheckReport(f"harnack[{variant}]", classify(margin, tol), margin,
                       (float(ft.times[k]),), tol, conv, info)


# ---------------------------------------------------------------------------
# maximum principle
# ---------------------------------------------------------------------------


def check_max_principle(u: ScalarFieldTrace, tol=1e-8) -> CheckReport:
    ext = extremum_bounds(u)
    if ext.margin is None:
        return CheckReport("max_principle", PASS, math.inf, None, tol,
                           details={"note": "no envelope for this equation; extrema recorded",
                                    "min": float(ext.mins.min()), "max": float(ext.maxs.max())})
    return CheckReport("max_principle", classify(ext.margin, tol), ext.margin,
                       (float(ext.times[ext.argmin]),), tol,
                       details={"min": float(ext.mins.min()), "max": float(ext.maxs.max())})


# ---------------------------------------------------------------------------
# gradient estimates
# ---------------------------------------------------------------------------


def check_gradient_estimate(lemma, traces, traj, registry, tol=None) -> CheckReport:
    """Pointwise ``rhs - lhs`` of an estimate over every cell and sample."""
    trace = traces[0] if isinstance(traces, (list, tuple)) else traces
    terms = estimate_terms(lemma, trace, traj, registry)
    rhs = estimate_rhs(lemma, terms, trace, registry)
    gap = rhs - terms.lhs
    idx = np.unravel_index(int(np.argmin(gap)), gap.shape)
    margin = float(gap[idx])
    if tol is None:
        tol = 1e-10 * max(1.0, float(np.max(np.abs(terms.lhs))))
    fitted = fit_constant(terms, trace.times)
    details = {
        "constant": LEMMA_CONSTANT[lemma],
        "constant_used": getattr(registry, LEMMA_CONSTANT[lemma]),
        "fitted_minimal": fitted.value,
        "fitted_argmax": [fitted.location[0], list(fitted.location[1])],
    }
    if lemma == "L34":
        details["fitted_B3_direct"] = fit_B3_direct(trace, traj, registry)
    return CheckReport(f"estimate[{lemma}]", classify(margin, tol), margin,
                       _loc(idx[0], idx[1:], trace.times), tol, details=details)


def fit_B3_direct(trace, traj, registry):
    """Smallest B3 with ``|grad u|^2 <= B3 ((1 + e^{at} A)^2 + u^2)``."""
    t = np.asarray(trace.times, float).reshape((-1,) + (1,) * (trace.fields.ndim - 1))
    g2 = np.array([s.ops.grad_sq(u) for s, u in zip(traj.snapshots, trace.fields)])
    coeff = (1 + np.exp(registry.a * t) * registry.A) ** 2 + trace.fields**2
    return fit_constant(EstimateTerms(g2, coeff, np.zeros_like(g2)), trace.times).value


# ---------------------------------------------------------------------------
# I' and D' identities
# ---------------------------------------------------------------------------


def dI_dD_residuals(u: ScalarFieldTrace, mu, traj, h):
    times = np.asarray(u.times, float)
    snaps = traj.snapshots
    G = [s.ops.grad_sq(f) for s, f in zip(snaps, u.fields)]
    I = np.array([mu.integrate(f * f, k) for k, f in enumerate(u.fields)])
    E = np.array([mu.integrate(g, k) for k, g in enumerate(G)])
    D = np.array([h(t) for t in times]) * E
    dI = _centred_derivative(I, times)
    dD = _centred_derivative(D, times)
    fI, fD = [], []
    for k in range(1, len(times) - 1):
        s, f = snaps[k], u.fields[k]
        fI.append(mu.integrate(2 * f * u.rates[k] - s.ops.laplacian(f * f), k))
        dG = (G[k + 1] - G[k - 1]) / (times[k + 1] - times[k - 1])
        t = float(times[k])
        fD.append(h.derivative(t) * E[k] + h(t) * mu.integrate(dG - s.ops.laplacian(G[k]), k))
    fI, fD = np.array(fI), np.array(fD)
    sI = max(float(np.max(np.abs(fI))), float(np.max(np.abs(dI))), 1e-300)
    sD = max(float(np.max(np.abs(fD))), float(np.max(np.abs(dD))), 1e-300)
    return np.abs(dI - fI) / sI, np.abs(dD - fD) / sD, (dI, fI, dD, fD)


def check_dI_dD_identities(u, mu, traj, h, tol=1e-3, refinement=(), min_order=1.8) -> CheckReport:
    """Centred dI/dt and dD/dt against their integral formulas (relative).

    Spatially constant solutions have D = 0; their relative D residual is
    reported as zero.
    """
    if len(u.times) < 5:
        raise ValueError("need at least 5 samples")
    rI, rD, raw = dI_dD_residuals(u, mu, traj, h)
    if np.max(np.abs(raw[2])) < 1e-300 and np.max(np.abs(raw[3])) < 1e-300:
        rD = np.zeros_like(rD)
    res = float(max(rI.max(), rD.max()))
    conv = {"rel_residual_I": float(rI.max()), "rel_residual_D": float(rD.max())}
    converging = True
    if refinement:
        chain = []
        for tr, mu_c, tj in refinement:
            a, b, _ = dI_dD_residuals(tr, mu_c, tj, h)
            chain.append(float(max(a.max(), b.max())))
        chain.append(res)
        conv["residuals"] = chain
        conv["orders"] = convergence_order(chain)
        converging = all(o >= min_order for o in conv["orders"]) or max(chain) < 1e-10
    k = int(np.argmax(np.maximum(rI, rD)))
    status = classify(-res, tol, converging)
    if refinement and not converging and status == PASS:
        status = FAIL
    return CheckReport("dI_dD_identities", status, -res, (float(u.times[k + 1]),), tol, conv)


# ---------------------------------------------------------------------------
# generic residual report and suite output
# ---------------------------------------------------------------------------


def residual_report(check_id, residual, tol, location=None, refinement_residuals=None, min_order=1.8):
    conv = {}
    converging = True
    if refinement_residuals:
        chain = list(refinement_residuals) + [residual]
        conv = {"residuals": chain, "orders": convergence_order(chain)}
        converging = all(o >= min_order for o in conv["orders"]) or max(chain) < 1e-10
    status = classify(-residual, tol, converging)
    if refinement_residuals and not converging and status == PASS:
        status = FAIL
    return CheckReport(check_id, status, -float(residual), location, tol, conv)


def reports_to_json(reports, summary, path=None):
    doc = {"summary": summary, "checks": [r.as_dict() for r in reports]}
    text = json.dumps(doc, indent=2, sort_keys=True, default=_default)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(type(o))


def reports_to_markdown(reports, summary, path=None):
    lines = [f"# {summary.get('scenario', 'scenario')}: {summary['status']}", "",
             "| check | status | margin | tolerance | location | orders |",
             "|---|---|---|---|---|---|"]
    for r in reports:
        orders = r.convergence.get("orders")
        o = ", ".join(f"{x:.2f}" for x in orders) if orders else ""
        loc = "" if r.location is None else str(r.location)
        lines.append(f"| {r.check_id} | {r.status} | {r.margin:.3e} | {r.tolerance:.1e} | {loc} | {o} |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# scenario pipeline
# ---------------------------------------------------------------------------


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass(eq=False)
class Solve:
    """Flow, forward solution, conjugate density and measure at one resolution."""

    traj: object
    trace: ScalarFieldTrace
    kernel: ScalarFieldTrace | None = None
    mu: object = None
    ft: FrequencyTrace | None = None


@dataclass(eq=False)
class SuiteResult:
    scenario: object
    reports: list
    summary: dict
    fine: Solve
    coarse: Solve | None
    registry: object
    fit_registry: object | None


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
        raise PipelineError(name, exc) from exc


def solve_scenario(sc, factor=1, with_kernel=True) -> Solve:
    from .flow import evolve_metric
    from .measure import bump_density, weighted_measure_from_K
    from .pde import solve_conjugate_backward, solve_forward

    backend = _stage("backend", sc.backend.build, factor)
    traj = _stage("flow", evolve_metric, backend, sc.times, dt=sc.flow_dt, T=sc.T)
    u0 = sc.initial.evaluate(backend)
    trace = _stage("pde", solve_forward, sc.equation, u0, traj, dt=sc.pde_dt)
    out = Solve(traj, trace)
    if with_kernel:
        Kt = bump_density(traj.snapshots[-1], sc.kernel_center, sc.kernel_width, sc.kernel_base)
        out.kernel = _stage("conjugate", solve_conjugate_backward, Kt, traj, dt=sc.pde_dt)
        out.mu = _stage("measure", weighted_measure_from_K, out.kernel, traj)
    return out


def fit_scenario(sc, solve: Solve | None = None):
    """Raw fitted registry for ``sc`` (no safety applied)."""
    from .frequency import fit_minimal_constants, registry_for

    if solve is None:
        solve = solve_scenario(sc, with_kernel=False)
    passthrough = {k: v for k, v in sc.registry.items() if k in ("c_n", "B4_mode", "E_variant")}
    template = _stage("registry", registry_for, solve.trace, solve.traj, **passthrough)
    return _stage("fit", fit_minimal_constants, solve.trace, solve.traj, template, sc.safety)


def build_registry(sc, fine: Solve, coarse: Solve | None, fitted):
    """Registry used by the checks: measured geometry and bounds, fitted x safety, overrides."""
    from .frequency import ESTIMATE_CONSTANTS, registry_for

    kw = {}
    if fitted is not None:
        for k in ESTIMATE_CONSTANTS:
            if fitted.provenance.get(k) == "fitted":
                kw[k] = getattr(fitted, k) * sc.safety
    if coarse is not None:
        # bounds must hold for both resolutions used in the Richardson estimates
        if sc.correction_kind == "phi":
            kw["eta"] = min(fine.trace.eta, coarse.trace.eta)
            kw["A"] = max(fine.trace.A, coarse.trace.A)
        else:
            kw["eta"] = min(fine.trace.window_min, coarse.trace.window_min)
            kw["A"] = max(fine.trace.window_max, coarse.trace.window_max)
    kw.update(sc.registry)
    reg = _stage("registry", registry_for, fine.trace, fine.traj, **kw)
    prov = dict(reg.provenance)
    if fitted is not None:
        for k in ESTIMATE_CONSTANTS:
            if fitted.provenance.get(k) == "fitted" and k not in sc.registry:
                prov[k] = "fitted"
        return reg.replace(safety=sc.safety, provenance=prov, audit=dict(fitted.audit))
    return reg.replace(provenance=prov)


def applicable_lemmas(eq):
    from .frequency import LOG_LEMMAS, POWER_LEMMAS

    return LOG_LEMMAS if isinstance(eq, LogNonlinear) else POWER_LEMMAS


def run_suite(sc, tol_scale=1.0) -> SuiteResult:
    """Flow, solves, fit, then every check in a fixed order."""
    from .config import resolve_fit_source
    from .flow import check_volume_evolution
    from .frequency import compute_U_trace
    from .measure import check_f_evolution, check_measure_evolution, check_weighted_bochner

    fine = solve_scenario(sc)
    coarse = None
    if sc.richardson and sc.backend.can_coarsen(2):
        coarse = solve_scenario(sc, factor=2)

    src = resolve_fit_source(sc)
    fitted = None
    if src is sc:
        fitted = fit_scenario(sc, fine)
    elif src is not None:
        fitted = fit_scenario(src)
    reg = build_registry(sc, fine, coarse, fitted)

    kind = sc.correction_kind
    fine.ft = _stage("frequency", compute_U_trace, fine.trace, fine.mu, sc.h, reg, kind)
    if coarse is not None:
        coarse.ft = _stage("frequency", compute_U_trace, coarse.trace, coarse.mu, sc.h, reg, kind)

    T = lambda key: sc.tol(key, tol_scale)  # noqa: E731
    reports = []
    traj, trace, mu = fine.traj, fine.trace, fine.mu

    vol = check_volume_evolution(traj)
    b = traj.backend
    exact_volume = b.kind == "FlatTorus2D" or (b.kind == "AxisymSphere" and b.dim == 2)
    vtol = T("volume") if exact_volume else max(T("volume"), vol.expected_bound)
    reports.append(residual_report("volume_evolution", vol.residual, vtol))
    reports.append(residual_report("mass_conservation", fine.kernel.meta["mass_drift"], T("mass")))
    reports.append(check_max_principle(trace, T("max_principle")))
    refine = [(coarse.trace, coarse.traj)] if coarse is not None else ()
    reports.append(check_lemma31(trace, traj, T("lemma31"), refine, relative=True))

    fe = check_f_evolution(mu)
    reports.append(residual_report("f_evolution", fe.residual, T("f_evolution"), _mloc(fe, mu)))
    me = check_measure_evolution(mu)
    reports.append(residual_report("measure_evolution", me.residual, T("measure_evolution"), _mloc(me, mu)))
    mid = len(mu.times) // 2
    bo = check_weighted_bochner(trace.fields[mid], mu, mid)
    bscale = max(bochner_scale(trace.fields[mid], mu, mid), 1e-300)
    rep = residual_report("weighted_bochner", bo.residual / bscale, T("bochner"), _mloc(bo, mu))
    rep.details.update(relative=True, absolute=bo.residual)
    reports.append(rep)

    ft = fine.ft
    scale = max(float(np.max(np.abs(ft.D))), 1e-300)
    dforms = float(np.max(np.abs(ft.D - ft.D_drift))) / scale
    reports.append(residual_report("dirichlet_forms", dforms, 1e-9 * tol_scale))
    reports.append(check_dI_dD_identities(trace, mu, traj, sc.h, T("identity")))

    for lemma in applicable_lemmas(sc.equation):
        reports.append(check_gradient_estimate(lemma, trace, traj, reg, T("estimate")))

    expected = "increasing" if sc.h_sign < 0 else "decreasing"
    reports.append(check_monotonicity(ft, expected, coarse.ft if coarse else None, T("monotonicity")))
    variant = "cor39" if kind == "phi" else "cor13"
    reports.append(check_harnack(ft, mu, reg, variant, coarse.ft if coarse else None, T("harnack")))

    summary = {
        "scenario": sc.name,
        "status": worst_status(reports),
        "counts": {s: sum(r.status == s for r in reports) for s in (PASS, FAIL, INCONCLUSIVE)},
        "failed": [r.check_id for r in reports if r.status == FAIL],
        "tol_scale": tol_scale,
        "registry_provenance": dict(sorted(reg.provenance.items())),
    }
    return SuiteResult(sc, reports, summary, fine, coarse, reg, fitted)


def bochner_scale(u, mu, k):
    """Largest single term of the weighted Bochner identity at sample ``k``."""
    snap = mu.traj.snapshots[k]
    ops, K = snap.ops, mu.K.fields[k]
    terms = (ops.weighted_laplacian(ops.grad_sq(u), K), 2 * snap.hessian_norm_sq(u),
             2 * ops.grad_inner(u, ops.weighted_laplacian(u, K)),
             2 * (snap.ricci_quadratic(u) + snap.hessian_quadratic(mu.f[k], u)))
    return max(float(np.max(np.abs(x))) for x in terms)


def _mloc(res, mu):
    k, cell = res.location
    return (float(mu.times[k]), tuple(cell))
