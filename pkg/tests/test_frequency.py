import json
import math

import numpy as np
import pytest

from parafreq.flow import evolve_metric
from parafreq.frequency import (
    ConstantRegistry,
    Correction,
    EstimateTerms,
    FrequencyError,
    WeightFunction,
    adaptive_simpson,
    compute_D,
    compute_I,
    compute_U_trace,
    correction_heat,
    correction_phi,
    correction_psi,
    estimate_terms,
    fit_constant,
    fit_minimal_constants,
    registry_for,
)
from parafreq.geometry import FlatTorus2D
from parafreq.measure import weighted_measure_from_K
from parafreq.pde import Heat, LogNonlinear, PowerNonlinear, ScalarFieldTrace, solve_conjugate_backward, solve_forward


def uniform_measure(N, L=1.0, times=(0.1,)):
    b = FlatTorus2D(L, L, N, N)
    traj = evolve_metric(b, list(times), T=1.0)
    n = len(times)
    K = np.full((n,) + b.shape, 1.0 / L**2)
    tr = ScalarFieldTrace(b, np.asarray(times), K, np.zeros_like(K), None, 1.0, 1.0)
    return b, traj, weighted_measure_from_K(tr, traj)


# -- quadrature ----------------------------------------------------------------


def test_simpson_known_integrals():
    v, err = adaptive_simpson(math.exp, 0.0, 1.0)
    assert v == pytest.approx(math.e - 1, rel=1e-10)
    assert err < 1e-8
    v, _ = adaptive_simpson(lambda s: 1 / s, 1e-3, 1.0)
    assert v == pytest.approx(math.log(1e3), rel=1e-8)
    v, _ = adaptive_simpson(lambda s: 1 / math.sqrt(s), 1.0, 1e-4)
    assert v == pytest.approx(-2 * (1 - 1e-2), rel=1e-8)
    assert adaptive_simpson(math.sin, 2.0, 2.0) == (0.0, 0.0)


def test_halving_the_tolerance_stays_inside_the_error_estimate():
    reg = ConstantRegistry(n=2, K1=0.1, K2=0.2, rho=1.0, T=1.0, t0=0.05, eta=1.0, A=2.0)
    h = WeightFunction.constant(-1.0)
    c1 = Correction(reg, h, "psi", tol=1e-8)
    c2 = Correction(reg, h, "psi", tol=5e-9)
    e1, e2 = c1.exponent(0.8), c2.exponent(0.8)
    assert abs(e1 - e2) <= c1.error + c2.error + 1e-14


# -- weights ---------------------------------------------------------------------


def test_weight_function_catalogue():
    e = WeightFunction.exponential(-2.0, 0.5)
    assert e(1.0) == pytest.approx(-2 * math.exp(0.5))
    assert e.derivative(1.0) == pytest.approx(-math.exp(0.5))
    assert e.log_derivative(3.0) == 0.5
    p = WeightFunction.polynomial([1.0, 2.0, 3.0])
    assert p(2.0) == 17.0 and p.derivative(2.0) == 14.0
    t = np.linspace(0, 1, 201)
    tab = WeightFunction.tabulated(t, 1 + t**2)
    assert tab(0.5) == pytest.approx(1.25, abs=1e-4)
    assert tab.derivative(0.5) == pytest.approx(1.0, abs=1e-3)
    assert WeightFunction.constant(-1.0).scaled(3.0)(0.2) == -3.0
    assert p.scaled(2.0).params == (2.0, 4.0, 6.0)
    assert WeightFunction.constant(-1.0).check(0, 1) == -1


def test_weight_sign_change_and_floor_rejected():
    with pytest.raises(FrequencyError, match="sign"):
        WeightFunction.polynomial([-1.0, 2.0001]).check(0.0, 1.0)
    with pytest.raises(FrequencyError):
        WeightFunction.constant(0.0).check(0.0, 1.0)


# -- registry --------------------------------------------------------------------


def sample_registry(**kw):
    base = dict(n=2, K1=0.5, K2=0.5, rho=2.0, T=1.0, t0=0.1, eta=1.0, A=2.0,
                a=0.5, lam=-1.0, p=2.0, B1=1.0, B_n=1.0, C1=1.0, C_n=1.0)
    base.update(kw)
    return ConstantRegistry(**base)


def test_derived_constants_frozen():
    r = sample_registry()
    # X = a (1 + e^{aT} ln A1) with ln A1 = A
    assert r.X == pytest.approx(0.5 * (1 + 2 * math.exp(0.5)), rel=1e-15)
    F = math.sqrt(0.5) + 0.5 + 1.0 + math.sqrt(r.X)
    assert r.envelope_factor == pytest.approx(F, rel=1e-15)
    assert r.B3 == pytest.approx(2 * F**2, rel=1e-15)
    assert r.B3 == pytest.approx(26.981248331307377, rel=1e-12)
    assert r.B4 == pytest.approx(0.25 + math.sqrt(0.5) / 2 + 0.5 + 16.0, rel=1e-15)
    assert r.replace(B4_mode="rho_inf").B4 == pytest.approx(16.5)
    # C3 = C(n)(1 + K1 + Kbar) + C(n) p^2 lam A^{p-1}
    assert r.C3 == pytest.approx(2.0 - 8.0)
    assert r.lam1 == 0.0 and r.alpha_p == 0.0
    assert r.P == pytest.approx(2 * r.C3)
    assert r.C2(0.25) == pytest.approx(0.5 + 2.0 + math.sqrt(0.5))
    assert r.N(0.25) == pytest.approx(r.C2(0.25) * (1 + math.log(2.0)))
    assert r.alpha(0.0) == 1.0 and r.alpha(2.0) == 0.0
    assert r.A1 == pytest.approx(math.e**2)


def test_overrides_win_and_safety_scales_fitted_only():
    r = sample_registry(B4_override=0.0, C3_override=0.0)
    assert r.B4 == 0.0 and r.C3 == 0.0
    r = sample_registry(provenance={"C1": "fitted"})
    s = r.with_safety(1.1)
    assert s.C1 == pytest.approx(1.1) and s.B1 == 1.0 and s.safety == pytest.approx(1.1)
    assert sample_registry().with_safety(2.0).B_n == 2.0


def test_registry_json_round_trip(tmp_path):
    r = sample_registry(provenance={"B1": "fitted"}, audit={"L32": {"value": 0.3}})
    path = tmp_path / "r.json"
    text = r.to_json(path)
    back = ConstantRegistry.from_json(path.read_text())
    assert back == r and back.provenance == r.provenance
    assert json.loads(text)["derived"]["B3"] == pytest.approx(r.B3)


# -- I, D -------------------------------------------------------------------------


def test_I_of_constant_and_of_a_mode():
    b, traj, mu = uniform_measure(64)
    assert compute_I(np.full(b.shape, 3.0), mu, 0) == pytest.approx(9.0, rel=1e-13)
    x, _ = b.coords
    assert compute_I(1 + np.cos(2 * math.pi * x), mu, 0) == pytest.approx(1.5, abs=1e-6)


def test_D_of_a_mode_with_negative_weight():
    b, traj, mu = uniform_measure(1024)
    x, _ = b.coords
    d = compute_D(1 + np.cos(2 * math.pi * x), mu, 0, WeightFunction.constant(-1.0))
    assert d.D == pytest.approx(-2 * math.pi**2, abs=1e-4)
    assert d.D_drift == pytest.approx(d.D, rel=1e-10)
    assert compute_D(np.full(b.shape, 2.0), mu, 0, WeightFunction.constant(-1.0)).D == 0.0


# -- corrections ----------------------------------------------------------------


def bare_registry(**kw):
    base = dict(n=2, K1=0.0, K2=0.0, rho=math.inf, T=math.inf, t0=0.1, eta=1.0, A=1.0,
                B1=0.0, B_n=0.0, C1=0.0, C_n=0.0)
    base.update(kw)
    return ConstantRegistry(**base)


def test_phi_closed_form_power_law():
    eta, Bn = 1.3, 0.7
    reg = bare_registry(eta=eta, A=eta, B_n=Bn)
    h = WeightFunction.constant(-1.0)
    assert correction_phi(None, reg, h, 0.1) == 1.0
    for t in (0.2, 0.5, 1.0):
        assert correction_phi(None, reg, h, t) == pytest.approx((0.1 / t) ** (Bn / eta**2), rel=1e-8)


def test_psi_equals_heat_path_for_linear_case():
    reg = sample_registry(lam=0.0, p=1.0)
    h = WeightFunction.exponential(-1.0, 0.3)
    for s in (0.11, 0.3, 0.9):
        assert reg.psi_rate(s) == pytest.approx(reg.heat_rate(s), rel=1e-12)
    for t in (0.1, 0.4, 0.9):
        a = correction_psi(None, reg, h, t)
        b = correction_heat(None, reg, h, t)
        assert a == pytest.approx(b, rel=1e-12)
    assert correction_psi(None, reg, h, 0.1) == 1.0


def test_exponential_weight_contributes_k_times_elapsed_time():
    reg = bare_registry()
    k = 0.7
    c = Correction(reg, WeightFunction.exponential(-2.0, k), "psi")
    assert c.exponent(0.9) == pytest.approx(k * 0.8, rel=1e-8)


def test_corrections_positive_and_decreasing_with_positive_integrand():
    reg = sample_registry(a=0.0, B1=1e-3, B_n=1e-2)
    h = WeightFunction.constant(1.0)
    vals = [correction_phi(None, reg, h, t) for t in np.linspace(0.1, 0.9, 9)]
    assert vals[0] == 1.0 and all(v > 0 for v in vals)
    assert np.all(np.diff(vals) < 0)


def test_correction_rejects_bad_weight_and_time():
    reg = sample_registry()
    with pytest.raises(FrequencyError):
        correction_psi(None, reg, WeightFunction.polynomial([-0.5, 1.0]), 0.9)
    with pytest.raises(FrequencyError):
        Correction(reg, WeightFunction.constant(1.0), "psi").exponent(0.01)
    with pytest.raises(FrequencyError):
        Correction(reg, WeightFunction.constant(1.0), "chi")


# -- U traces ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def heat_mode():
    b = FlatTorus2D(1.0, 1.0, 64, 64)
    times = np.linspace(0.02, 0.1, 9)
    traj = evolve_metric(b, times)
    x, _ = b.coords
    eps = 1e-3
    u = solve_forward(Heat(), 2 + eps * np.cos(2 * math.pi * x), traj)
    K = solve_conjugate_backward(np.ones(b.shape), traj)
    mu = weighted_measure_from_K(K, traj)
    return b, traj, u, mu, eps


def test_heat_mode_ratio_decays_like_the_oracle(heat_mode):
    b, traj, u, mu, eps = heat_mode
    h = WeightFunction.constant(-1.0)
    reg = registry_for(u, traj)
    ft = compute_U_trace(u, mu, h, reg, "heat")
    lam_h = 4 * 64**2 * math.sin(math.pi / 64) ** 2
    # D/I = -(eps^2/2) lam_h e^{-2 lam_h t} / (4 + eps^2/2 e^{-2 lam_h t})
    ratio = ft.D / ft.I
    e = np.exp(-2 * lam_h * ft.times)
    oracle = -(eps**2 / 2) * lam_h * e / (4 + eps**2 / 2 * e)
    np.testing.assert_allclose(ratio, oracle, rtol=1e-6)
    np.testing.assert_allclose(ft.U, ft.correction * ft.D / ft.I, rtol=1e-15)
    assert np.all(ft.U < 0) and ft.correction[0] == 1.0


def test_U_scales_linearly_with_h(heat_mode):
    # the corrections contain h(t0)/h(t), so correction * h and U are both linear in h
    b, traj, u, mu, _ = heat_mode
    reg = registry_for(u, traj)
    h = WeightFunction.exponential(-1.0, 0.5)
    U1 = compute_U_trace(u, mu, h, reg, "psi").U
    U3 = compute_U_trace(u, mu, h.scaled(3.0), reg, "psi").U
    np.testing.assert_allclose(U3, 3.0 * U1, rtol=1e-12)


def test_constant_data_gives_zero_frequency(heat_mode):
    b, traj, _, mu, _ = heat_mode
    u = solve_forward(Heat(), np.full(b.shape, 1.5), traj)
    ft = compute_U_trace(u, mu, WeightFunction.constant(-1.0), registry_for(u, traj), "heat")
    assert np.all(ft.U == 0.0)


def test_registry_bounds_must_cover_the_solution(heat_mode):
    b, traj, u, mu, _ = heat_mode
    reg = registry_for(u, traj).replace(A=1.0)
    with pytest.raises(FrequencyError, match="bounds"):
        compute_U_trace(u, mu, WeightFunction.constant(-1.0), reg, "heat")


# -- fitting -------------------------------------------------------------------------


def test_fit_constant_scan():
    lhs = np.array([[1.0, 2.0], [3.0, -1.0]])
    coeff = np.array([[1.0, 4.0], [2.0, 1.0]])
    res = fit_constant(EstimateTerms(lhs, coeff, np.zeros_like(lhs)), [0.1, 0.2])
    assert res.value == 1.5 and res.location == (0.2, (0,)) and res.infeasible == 0
    res = fit_constant(EstimateTerms(-lhs ** 2, coeff, np.zeros_like(lhs)), [0.1, 0.2])
    assert res.value == 0.0
    bad = fit_constant(EstimateTerms(lhs, -coeff, np.zeros_like(lhs)), [0.1, 0.2])
    assert bad.infeasible == 3


def test_constant_solution_fits_zero():
    b = FlatTorus2D(1.0, 1.0, 16, 16)
    traj = evolve_metric(b, np.linspace(0.1, 0.3, 5))
    u = solve_forward(LogNonlinear(0.0), np.full(b.shape, 1.2), traj)
    fitted = fit_minimal_constants(u, traj, registry_for(u, traj))
    assert fitted.B1 == 0.0
    assert fitted.provenance["B1"] == "fitted" and fitted.audit["safety_multiplier"] == 1.1


def test_heat_C1_is_the_exhaustive_scan_maximum(heat_mode):
    b, traj, u, mu, _ = heat_mode
    reg = registry_for(u, traj)
    fitted = fit_minimal_constants(u, traj, reg)
    g2 = np.array([s.ops.grad_sq(f) for s, f in zip(traj.snapshots, u.fields)])
    t = u.times[:, None, None]
    scan = (np.sqrt(g2) / u.fields) / (
        (1 / reg.rho + 1 / np.sqrt(t) + math.sqrt(reg.K_bar)) * (1 + np.log(reg.A / u.fields)))
    assert fitted.C1 == pytest.approx(float(scan.max()), rel=1e-12)
    assert fitted.audit["L41"]["argmax_t"] == pytest.approx(float(u.times[np.unravel_index(scan.argmax(), scan.shape)[0]]))


def test_fitted_constants_shrink_on_subsets(heat_mode):
    b, traj, u, mu, _ = heat_mode
    reg = registry_for(u, traj)
    full = fit_minimal_constants(u, traj, reg)
    assert estimate_terms("L41", u, traj, reg).lhs.shape == u.fields.shape
    # restricting the scan to later times cannot raise the infimum
    tail = ScalarFieldTrace(b, u.times[4:], u.fields[4:], u.rates[4:], u.equation, u.eta, u.A)

    class Tail:
        snapshots = traj.snapshots[4:]

    part = fit_minimal_constants(tail, Tail, reg)
    assert part.C1 <= full.C1 and part.C_n <= full.C_n


def test_power_registry_uses_window_bounds():
    b = FlatTorus2D(1.0, 1.0, 16, 16)
    traj = evolve_metric(b, np.linspace(0.05, 0.1, 3))
    x, _ = b.coords
    u = solve_forward(PowerNonlinear(-1.0, 2.0), 2 + 0.5 * np.cos(2 * math.pi * x), traj)
    reg = registry_for(u, traj)
    assert reg.eta == u.window_min and reg.A == u.window_max and reg.lam1 == 0.0
