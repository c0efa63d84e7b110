"""Integral Harnack inequalities and the two branches of the log equation.

For the log equation the bound switches form where eta e^{at} crosses 1.
The three branch scenarios sit below, above and across that crossing.  The
last part shows the power equation with lambda < 0, where the inequality as
stated does not hold numerically.
"""
import numpy as np

from parafreq import load_scenario, run_suite

for name in ("torus-log-branch-low", "torus-log-branch-high", "torus-log-branch-cross"):
    res = run_suite(load_scenario(name))
    for r in res.reports:
        if r.check_id.startswith("harnack"):
            d = r.details
            print(f"{name:24s} {r.status:5s} margin {r.margin:+.3e}  branch i: {d.get('branch_i')}, "
                  f"branch ii: {d.get('branch_ii')}, split at {d.get('crossing')}")

res = run_suite(load_scenario("torus-power-neg"))
ft = res.fine.ft
rep = next(r for r in res.reports if r.check_id.startswith("harnack"))
k = int(np.searchsorted(ft.times, rep.location[0]))
print(f"\ntorus-power-neg: {rep.line()}")
print(f"  I(t) = {ft.I[k]:.6g} at t = {ft.times[k]:.4f}, I(t1) = {ft.I[-1]:.6g}")
print(f"  needed exponent ln(I(t1)/I(t)) = {np.log(ft.I[-1] / ft.I[k]):+.4f}")
print(f"  available: 2 U(t) int -1/(psi h) = {np.log((ft.I[-1] - rep.margin) / ft.I[k]):+.4f}"
      f" with U(t) = {ft.U[k]:+.4f}, and no reaction term")
print("  because lambda_1 = max(lambda, 0) = 0 while u^2 decays through lambda < 0")
