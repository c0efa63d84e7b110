"""Corrected frequency along the flow, for each equation.

Runs three bundled scenarios end to end and prints U(t) next to the
monotonicity verdict.  With h < 0 the frequency should increase.
"""
from parafreq import load_scenario, run_suite

for name in ("torus-heat-baseline", "torus-log-pos", "sphere-power-lin"):
    res = run_suite(load_scenario(name))
    ft = res.fine.ft
    mono = next(r for r in res.reports if r.check_id.startswith("monotonicity"))
    print(f"\n{name}: correction {ft.kind}, h(t0) = {ft.h(ft.times[0]):+g}")
    print(f"{'t':>8} {'I':>12} {'D':>12} {'correction':>12} {'U':>12}")
    for k in range(0, len(ft.times), max(1, len(ft.times) // 6)):
        print(f"{ft.times[k]:>8.3f} {ft.I[k]:>12.5e} {ft.D[k]:>12.5e} {ft.correction[k]:>12.5e} {ft.U[k]:>12.5e}")
    print(mono.line())
    print(f"suite: {res.summary['status']}, failed: {res.summary['failed'] or 'none'}")
