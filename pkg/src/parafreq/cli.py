"""Command-line front end: ``run``, ``fit``, ``sweep`` and ``list``.

Exit codes: 0 every check passed, 1 a check failed, 2 configuration error,
3 runtime error in a pipeline stage.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import config
from .config import ConfigError
from .verify import FAIL, PipelineError, fit_scenario, reports_to_json, reports_to_markdown, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SWEEP_PARAMS = ("a", "lambda", "p", "N", "dt", "h-scale")

ARTIFACTS = ("trajectory.csv", "trace.csv", "measure.csv", "frequency.csv",
             "registry.json", "report.json", "report.md")


def _outdir(sc, override):
    path = override or sc.output or os.path.join("out", sc.name)
    os.makedirs(path, exist_ok=True)
    return path


def write_artifacts(result, out):
    fine = result.fine
    fine.traj.to_csv(os.path.join(out, "trajectory.csv"))
    fine.trace.to_csv(os.path.join(out, "trace.csv"), fine.traj)
    fine.mu.to_csv(os.path.join(out, "measure.csv"))
    fine.ft.to_csv(os.path.join(out, "frequency.csv"))
    result.registry.to_json(os.path.join(out, "registry.json"))
    reports_to_json(result.reports, result.summary, os.path.join(out, "report.json"))
    reports_to_markdown(result.reports, result.summary, os.path.join(out, "report.md"))
    return [os.path.join(out, name) for name in ARTIFACTS]


def cmd_run(args):
    sc = config.load(args.config)
    result = run_suite(sc, tol_scale=args.tol_scale)
    out = _outdir(sc, args.out)
    write_artifacts(result, out)
    for r in result.reports:
        print(r.line())
    print(f"{sc.name}: {result.summary['status']} ({out})")
    return EXIT_FAIL if result.summary["status"] == FAIL else EXIT_OK


def cmd_fit(args):
    sc = config.load(args.config)
    fitted = fit_scenario(sc).with_safety(sc.safety)
    out = _outdir(sc, args.out)
    path = os.path.join(out, "registry.json")
    fitted.to_json(path)
    for lemma, entry in sorted(fitted.audit.items()):
        if isinstance(entry, dict):
            print(f"{lemma}: {entry['constant']} = {entry['value']!r} at t = {entry['argmax_t']!r}, "
                  f"cell {tuple(entry['argmax_cell'])}")
    print(f"registry written to {path} (safety x{sc.safety})")
    return EXIT_OK


def _sweep_row(sc, param, value, tol_scale):
    res = run_suite(sc.with_param(param, value), tol_scale=tol_scale)
    by_id = {r.check_id: r for r in res.reports}
    mono = [r.margin for k, r in by_id.items() if k.startswith("monotonicity")]
    harn = [r.margin for k, r in by_id.items() if k.startswith("harnack")]
    reg = res.registry
    ft = res.fine.ft
    return {
        "value": value,
        "status": res.summary["status"],
        "monotonicity_margin": min(mono) if mono else "",
        "harnack_margin": min(harn) if harn else "",
        "lemma31_residual": -by_id["lemma31"].margin,
        "U_t0": float(ft.U[0]),
        "U_t1": float(ft.U[-1]),
        "B1": reg.B1, "B_n": reg.B_n, "C1": reg.C1, "C_n": reg.C_n,
    }


def cmd_sweep(args):
    sc = config.load(args.config)
    if args.param not in SWEEP_PARAMS:
        raise ConfigError("sweep.param", f"expected one of {', '.join(SWEEP_PARAMS)}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep.values", "no values given")
    for v in values:
        sc.with_param(args.param, v)  # validate before any solve
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = list(pool.map(lambda v: _sweep_row(sc, args.param, v, args.tol_scale), values))
    out = _outdir(sc, args.out)
    path = os.path.join(out, f"sweep-{args.param}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    cols = ("value", "status", "monotonicity_margin", "harnack_margin", "lemma31_residual")
    print(" ".join(f"{c:>20s}" for c in cols))
    for row in rows:
        print(" ".join(f"{row[c]:>20.6g}" if isinstance(row[c], float) else f"{row[c]!s:>20s}" for c in cols))
    print(f"sweep written to {path}")
    return EXIT_FAIL if any(r["status"] == FAIL for r in rows) else EXIT_OK


def cmd_list(args):
    for name in config.bundled_names():
        print(name)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    common.add_argument("--tol-scale", type=float, default=1.0, help="multiply every check tolerance")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="parafreq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run a scenario and every check")
    r.add_argument("config", help="scenario file or bundled scenario name")
    r.set_defaults(func=cmd_run)
    f = sub.add_parser("fit", parents=[common], help="fit the estimate constants only")
    f.add_argument("config")
    f.set_defaults(func=cmd_fit)
    s = sub.add_parser("sweep", parents=[common], help="repeat a run over parameter values")
    s.add_argument("config")
    s.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)
    ls = sub.add_parser("list", parents=[common], help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"runtime error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - mapped onto the exit-code contract
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
