"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N`` line (also collected in the
terminal summary) and asserts at the stated tolerance.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from parafreq import config, verify
from parafreq.config import InitialSpec
from parafreq.flow import check_volume_evolution, evolve_metric
from parafreq.frequency import WeightFunction, compute_U_trace
from parafreq.geometry import AxisymSphere, ConformalTorus2D, FlatTorus2D, MetricSnapshot
from parafreq.measure import (
    bump_density,
    check_f_evolution,
    check_measure_evolution,
    check_weighted_bochner,
    weighted_measure_from_K,
)
from parafreq.pde import Heat, LogNonlinear, PowerNonlinear, extremum_bounds, solve_conjugate_backward, solve_forward
from parafreq.verify import (
    check_gradient_estimate,
    check_harnack,
    check_monotonicity,
    convergence_order,
    lemma31_residual,
)

BASELINES = os.path.join(os.path.dirname(__file__), "data", "fitted_baselines.json")

MONOTONE_SET = [
    "torus-heat-baseline", "torus-log-pos", "torus-log-neg", "torus-power-neg", "torus-power-lin",
    "sphere-heat", "sphere-log-pos", "sphere-log-neg", "sphere-power-neg", "sphere-power-lin",
]
HARNACK_SET = MONOTONE_SET + ["torus-log-branch-low", "torus-log-branch-high", "torus-log-branch-cross"]


def _prepared(name):
    """Fine and coarse solves plus the fitted x safety registry of a bundled scenario."""
    sc = config.load(name)
    fine = verify.solve_scenario(sc)
    coarse = verify.solve_scenario(sc, factor=2) if sc.backend.can_coarsen(2) else None
    fitted = verify.fit_scenario(sc, fine)
    reg = verify.build_registry(sc, fine, coarse, fitted)
    return sc, fine, coarse, reg


_CACHE = {}


def prepared(name):
    if name not in _CACHE:
        _CACHE[name] = _prepared(name)
    return _CACHE[name]


# ---------------------------------------------------------------------------
# 1. operators
# ---------------------------------------------------------------------------


def _torus_errors(N):
    # unit torus, canonical modes; anisotropic metric exercises both axes
    gxx, gyy = 1.0, 2.0
    b = FlatTorus2D(1.0, 1.0, N, N, gxx, gyy)
    x, y = b.coords
    s = MetricSnapshot.build(b, 0.0, b.initial_metric())
    k = 2 * math.pi
    u = np.cos(k * x) + 0.5 * np.sin(k * y)
    exact = {
        "laplacian": -(k**2 / gxx) * np.cos(k * x) - 0.5 * (k**2 / gyy) * np.sin(k * y),
        "grad_sq": (k * np.sin(k * x)) ** 2 / gxx + (0.5 * k * np.cos(k * y)) ** 2 / gyy,
        "hessian": (k**2 * np.cos(k * x)) ** 2 / gxx**2 + (0.5 * k**2 * np.sin(k * y)) ** 2 / gyy**2,
    }
    got = {"laplacian": s.ops.laplacian(u), "grad_sq": s.ops.grad_sq(u), "hessian": s.hessian_norm_sq(u)}
    return {key: (float(np.max(np.abs(got[key] - exact[key]))), float(np.max(np.abs(exact[key]))))
            for key in exact}


def _sphere_errors(N, n):
    r = 1.3
    b = AxisymSphere(n, r, N)
    th = b.theta
    s = MetricSnapshot.build(b, 0.0, r * r)
    u = np.cos(th)  # first spherical harmonic
    exact = {
        "laplacian": -n / r**2 * np.cos(th),
        "grad_sq": np.sin(th) ** 2 / r**2,
        "hessian": n * np.cos(th) ** 2 / r**4,
    }
    got = {"laplacian": s.ops.laplacian(u), "grad_sq": s.ops.grad_sq(u), "hessian": s.hessian_norm_sq(u)}
    return {key: (float(np.max(np.abs(got[key] - exact[key]))), float(np.max(np.abs(exact[key]))))
            for key in exact}


def test_criterion_01_operators(criterion):
    start = time.perf_counter()
    ok = True
    details = []
    for label, fn in (("torus", _torus_errors),
                      ("S2", lambda N: _sphere_errors(N, 2)),
                      ("S3", lambda N: _sphere_errors(N, 3))):
        runs = [fn(N) for N in (64, 128, 256)]
        for op in ("laplacian", "grad_sq", "hessian"):
            abs_err = [r[op][0] for r in runs]
            rel = abs_err[-1] / runs[-1][op][1]
            order = convergence_order(abs_err)[-1]
            ok &= rel <= 1e-3 and order >= 1.8
            details.append(f"{label}/{op} rel={rel:.1e} abs={abs_err[-1]:.1e} p={order:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 10
    criterion(1, ok, f"N=256 errors (relative to max|exact|) and orders; {elapsed:.1f}s; " + "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 2. exact flow and volume evolution
# ---------------------------------------------------------------------------


def test_criterion_02_exact_flow(criterion):
    sphere = AxisymSphere(2, 1.5, 128)
    times = np.linspace(0.1, 0.9, 41)
    traj = evolve_metric(sphere, times)
    r2_err = max(abs(s.metric - (1.5**2 - 2 * (2 - 1) * s.t)) for s in traj.snapshots)
    vol_s2 = check_volume_evolution(traj).residual

    # on S^3 r^3 is not linear in t; a fine sample grid keeps dt^2 below the bound
    s3 = AxisymSphere(3, 1.5, 64)
    traj3 = evolve_metric(s3, np.linspace(0.1, 0.1002, 21))
    r2_err3 = max(abs(s.metric - (1.5**2 - 4 * s.t)) for s in traj3.snapshots)
    vol_s3 = check_volume_evolution(traj3).residual

    torus = evolve_metric(FlatTorus2D(2, 2, 32, 32), np.linspace(0.1, 0.5, 9))
    vol_t = check_volume_evolution(torus).residual
    ok = max(r2_err, r2_err3) <= 1e-12 and vol_s2 <= 1e-8 and vol_s3 <= 1e-8 and vol_t == 0.0
    criterion(2, ok, f"r^2 error {max(r2_err, r2_err3):.1e}; volume residual S2 {vol_s2:.1e}, "
                     f"S3 {vol_s3:.1e}, flat torus {vol_t:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 3. conjugate mass conservation
# ---------------------------------------------------------------------------


def test_criterion_03_mass(criterion):
    times = np.linspace(0.05, 0.15, 11)
    backends = {
        "FlatTorus2D": FlatTorus2D(2, 2, 128, 128),
        "AxisymSphere": AxisymSphere(2, 1.5, 128),
        "ConformalTorus2D": ConformalTorus2D(2, 2, 128, 128, lambda x, y: 0.1 * np.cos(np.pi * x)),
    }
    ok = True
    parts = []
    for name, b in backends.items():
        start = time.perf_counter()
        traj = evolve_metric(b, times)
        K = solve_conjugate_backward(bump_density(traj.snapshots[-1], None, 0.2), traj)
        elapsed = time.perf_counter() - start
        drift = K.meta["mass_drift"]
        ok &= drift <= 1e-6 and elapsed < 30
        parts.append(f"{name} drift {drift:.1e} in {elapsed:.1f}s")
    criterion(3, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 4. rate identity for |grad u|^2
# ---------------------------------------------------------------------------


def test_criterion_04_lemma31(criterion):
    orders = {}
    # static torus and the two evolving metrics
    for label, make, u0, times in (
        ("torus", lambda N: FlatTorus2D(2, 2, N, N),
         lambda b: 2 + 0.5 * np.cos(np.pi * b.coords[0]) + 0.25 * np.cos(np.pi * b.coords[1]),
         np.linspace(0.1, 0.2, 5)),
        ("sphere", lambda N: AxisymSphere(2, 1.5, 2 * N),
         lambda b: 2 + 0.5 * np.cos(b.theta) + 0.3 * np.cos(2 * b.theta), np.linspace(0.1, 0.2, 5)),
        ("conformal", lambda N: ConformalTorus2D(2, 2, N, N, lambda x, y: 0.1 * np.cos(np.pi * x)),
         lambda b: 2 + 0.5 * np.cos(np.pi * b.coords[1]), np.linspace(0.05, 0.07, 5)),
    ):
        res = []
        for N in (16, 32, 64):
            b = make(N)
            traj = evolve_metric(b, times)
            res.append(lemma31_residual(solve_forward(Heat(), u0(b), traj), traj)[0])
        orders[label] = convergence_order(res)[-1]

    # canonical Fourier-mode heat run at N = 256, dt at half the stability cap
    b = FlatTorus2D(1.0, 1.0, 256, 256)
    traj = evolve_metric(b, np.linspace(0.001, 0.003, 5))
    tr = solve_forward(Heat(), 2 + np.cos(2 * np.pi * b.coords[0]), traj)
    absolute = lemma31_residual(tr, traj)[0]
    relative = lemma31_residual(tr, traj, relative=True)[0]
    ok = min(orders.values()) >= 1.8 and absolute <= 1e-3
    criterion(4, ok, "orders " + ", ".join(f"{k} {v:.2f}" for k, v in orders.items())
              + f"; N=256 absolute residual {absolute:.2e} (relative {relative:.1e}), bound 1e-3")
    assert ok


# ---------------------------------------------------------------------------
# 5. weighted-measure identities
# ---------------------------------------------------------------------------


def _identity_chain(make, center, u0):
    out = {"f": [], "measure": [], "bochner": []}
    for i, N in enumerate((32, 64, 128)):
        b = make(N)
        traj = evolve_metric(b, np.linspace(0.1, 0.3, 12 * 2**i + 1))
        K = solve_conjugate_backward(bump_density(traj.snapshots[-1], center, 1.0), traj)
        mu = weighted_measure_from_K(K, traj)
        out["f"].append(check_f_evolution(mu).residual)
        out["measure"].append(check_measure_evolution(mu).residual)
        k = len(mu.times) // 2
        out["bochner"].append(check_weighted_bochner(u0(b), mu, k).residual)
    return {key: convergence_order(v)[-1] for key, v in out.items()}


def test_criterion_05_measure_identities(criterion):
    orders = {
        "torus": _identity_chain(lambda N: FlatTorus2D(2, 2, N, N), (1.0, 1.0),
                                 lambda b: 2 + np.cos(np.pi * b.coords[0])),
        "sphere": _identity_chain(lambda N: AxisymSphere(2, 1.5, N), None,
                                  lambda b: 2 + np.cos(b.theta)),
    }
    # uniform density: closed-form conjugate solution 1/vol(t)
    uni = {}
    b = FlatTorus2D(2, 2, 32, 32)
    traj = evolve_metric(b, np.linspace(0.1, 0.3, 11))
    mu = weighted_measure_from_K(solve_conjugate_backward(np.ones(b.shape), traj), traj)
    uni["torus f"] = check_f_evolution(mu).residual
    uni["torus measure"] = check_measure_evolution(mu).residual
    uni["torus bochner (u const)"] = check_weighted_bochner(np.full(b.shape, 3.0), mu, 5).residual
    s = AxisymSphere(2, 1.5, 64)
    traj = evolve_metric(s, np.linspace(0.1, 0.3, 11))
    mu = weighted_measure_from_K(solve_conjugate_backward(np.ones(s.shape), traj), traj)
    uni["sphere measure"] = check_measure_evolution(mu).residual

    worst_order = min(min(v.values()) for v in orders.values())
    ok = worst_order >= 1.8 and max(uni.values()) <= 1e-8
    criterion(5, ok, "orders " + "; ".join(f"{b}: " + ", ".join(f"{k} {o:.2f}" for k, o in v.items())
                                           for b, v in orders.items())
              + "; uniform-K residuals " + ", ".join(f"{k} {v:.1e}" for k, v in uni.items()))
    assert ok


# ---------------------------------------------------------------------------
# 6. maximum principle
# ---------------------------------------------------------------------------


def test_criterion_06_max_principle(criterion):
    margins = {}
    for bname in ("torus", "sphere"):
        heat = config.load(f"{bname}-heat" if bname == "sphere" else "torus-heat-baseline")
        log = config.load(f"{bname}-log-pos")
        runs = [("Heat", heat)] + [(f"Log a={a}", log.with_param("a", a)) for a in (-0.3, 0.0, 0.5)]
        for label, sc in runs:
            s = verify.solve_scenario(sc, with_kernel=False)
            margins[f"{bname} {label}"] = extremum_bounds(s.trace).margin
    ok = min(margins.values()) >= -1e-6
    criterion(6, ok, ", ".join(f"{k} {v:+.2e}" for k, v in margins.items()))
    assert ok


# ---------------------------------------------------------------------------
# 7. gradient estimates, transfer test
# ---------------------------------------------------------------------------


def _transfer(src_name, target):
    src = config.load(src_name)
    fitted = verify.fit_scenario(src)
    fine = verify.solve_scenario(target, with_kernel=False)
    reg = verify.build_registry(target, fine, None, fitted)
    reports = [check_gradient_estimate(L, fine.trace, fine.traj, reg)
               for L in verify.applicable_lemmas(target.equation)]
    raw = {k: getattr(fitted, k) for k in ("B1", "B_n", "C1", "C_n") if fitted.provenance.get(k) == "fitted"}
    return reports, raw


def test_criterion_07_transfer(criterion):
    heat_reports, heat_fit = _transfer("torus-heat-baseline", config.load("torus-heat-twomode"))
    log_target = config.load("torus-log-pos").replace(
        name="torus-log-twomode",
        initial=InitialSpec("fourier", base=1.0, modes=((1, 0, 0.1), (1, 1, 0.05))),
    )
    log_reports, log_fit = _transfer("torus-log-pos", log_target)
    reports = heat_reports + log_reports

    with open(BASELINES) as fh:
        baseline = json.load(fh)
    drift = max(
        abs(v - baseline[name][k]) / max(abs(baseline[name][k]), 1e-300) if baseline[name][k] else abs(v)
        for name, fit in (("torus-heat-baseline", heat_fit), ("torus-log-pos", log_fit))
        for k, v in fit.items()
    )
    ok = all(r.status == "pass" for r in reports) and drift <= 1e-6
    criterion(7, ok, ", ".join(f"{r.check_id} {r.margin:+.2e}" for r in reports)
              + f"; fitted constants vs stored baselines: max relative drift {drift:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 8. monotonicity
# ---------------------------------------------------------------------------


def test_criterion_08_monotonicity(criterion):
    start = time.perf_counter()
    results = {}
    for name in MONOTONE_SET:
        sc, fine, coarse, reg = prepared(name)
        for c in (-1.0, 1.0):
            h = WeightFunction.constant(c)
            ft = compute_U_trace(fine.trace, fine.mu, h, reg, sc.correction_kind)
            ftc = compute_U_trace(coarse.trace, coarse.mu, h, reg, sc.correction_kind)
            rep = check_monotonicity(ft, "increasing" if c < 0 else "decreasing", ftc)
            results[f"{name} h={c:+.0f}"] = rep
    elapsed = time.perf_counter() - start
    bad = [k for k, r in results.items() if r.status == "fail"]
    ok = not bad and elapsed < 300
    worst = min(results.items(), key=lambda kv: kv[1].margin + kv[1].tolerance)
    criterion(8, ok, f"{len(results)} runs in {elapsed:.0f}s; failures {bad or 'none'}; "
                     f"tightest {worst[0]} margin {worst[1].margin:+.2e} tol {worst[1].tolerance:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 9. Harnack inequalities
# ---------------------------------------------------------------------------


def test_criterion_09_harnack(criterion):
    results = {}
    for name in HARNACK_SET:
        sc, fine, coarse, reg = prepared(name)
        h = sc.h
        ft = compute_U_trace(fine.trace, fine.mu, h, reg, sc.correction_kind)
        ftc = compute_U_trace(coarse.trace, coarse.mu, h, reg, sc.correction_kind)
        variant = "cor39" if sc.correction_kind == "phi" else "cor13"
        results[name] = check_harnack(ft, fine.mu, reg, variant, ftc)
    branches = {k: (r.details.get("branch_i"), r.details.get("branch_ii"), r.details.get("split"))
                for k, r in results.items() if "branch" in k}
    bad = [k for k, r in results.items() if r.status == "fail"]
    ok = not bad
    criterion(9, ok, f"failures {bad or 'none'}; "
                     + ", ".join(f"{k} {r.margin:+.2e}" for k, r in results.items())
                     + f"; branch sample counts (i, ii, split) {branches}")
    assert ok


# ---------------------------------------------------------------------------
# 10. special-case reductions
# ---------------------------------------------------------------------------


def test_criterion_10_reductions(criterion):
    heat = config.load("torus-heat-baseline")
    power = heat.replace(name="torus-power-zero", equation=PowerNonlinear(0.0, 1.0))
    rh, rp = verify.run_suite(heat), verify.run_suite(power)
    diff = max(
        float(np.max(np.abs(rh.fine.trace.fields - rp.fine.trace.fields))),
        float(np.max(np.abs(rh.fine.ft.U - rp.fine.ft.U))),
        float(np.max(np.abs(rh.fine.ft.correction - rp.fine.ft.correction))),
        max(abs(getattr(rh.registry, k) - getattr(rp.registry, k)) for k in ("C1", "C_n")),
        max(abs(a.margin - b.margin) for a, b in zip(rh.reports, rp.reports)
            if math.isfinite(a.margin) and math.isfinite(b.margin)),
    )

    sc, fine, coarse, reg = prepared("torus-heat-baseline")
    U = {c: compute_U_trace(fine.trace, fine.mu, WeightFunction.constant(-c), reg, "heat").U for c in (1, 2, 4)}
    invariance = max(float(np.max(np.abs(U[c] - U[1]))) for c in (2, 4))
    homogeneity = max(float(np.max(np.abs(U[c] - c * U[1]))) for c in (2, 4))
    ok = diff <= 1e-12 and invariance <= 1e-12
    criterion(10, ok, f"lambda=0,p=1 vs heat pipeline max diff {diff:.1e}; "
                      f"max|U[c h] - U[h]| = {invariance:.2e} (c = 2, 4); "
                      f"max|U[c h] - c U[h]| = {homogeneity:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 11. falsifiability
# ---------------------------------------------------------------------------


def test_criterion_11_falsifiability(criterion):
    heat = config.load("torus-heat-baseline")
    log0 = config.load("sphere-log-pos").with_param("a", 0.0)
    probes = {
        "C3=0 heat baseline L42": (heat, {"C3_override": 0.0}, "estimate[L42]"),
        "B4=0 sphere log a=0 L35": (log0, {"B4_override": 0.0}, "estimate[L35]"),
    }
    parts = []
    ok = True
    for label, (sc, override, check_id) in probes.items():
        clean = verify.run_suite(sc)
        broken = verify.run_suite(sc.replace(registry=override))
        rc = {r.check_id: r for r in clean.reports}[check_id]
        rb = {r.check_id: r for r in broken.reports}[check_id]
        ok &= rc.status == "pass" and rb.status == "fail" and broken.summary["status"] == "fail"
        parts.append(f"{label}: clean {rc.margin:+.2e} -> corrupted {rb.margin:+.2e} ({rb.status})")
    criterion(11, ok, "; ".join(parts))
    assert ok
