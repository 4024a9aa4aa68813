"""Command-line front end: validate, run, sweep, report.

Exit codes: 0 success, 1 validation failure, 2 runtime divergence, 3 usage
error.  Run and sweep write a machine-readable summary document plus
comma-separated tables into a fresh timestamped subdirectory of the output
directory; report renders figures beside the tables it finds there.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import config as config_mod
from .engine import simulate_path, write_trace
from .errors import (BoundaryBreach, KyleBackError, PathDiverged,
                     TooManyDiverged, UsageError)
from .experiments import (check_exclusions, run_blocks, summarize_blocks,
                          sweep, term_means, upper_bound_gap)
from .market import validate_rule

TERM_ORDER = ("direct", "ibp", "total", "psi0", "psi1", "qv_term",
              "c_term", "g_term", "jump_sum", "endowment")

# Strategies whose wealth the no-free-lunch bound covers: continuous, no
# block trades, admissible by construction.
BOUND_KINDS = ("zero", "tracker", "bridge")


class _Parser(argparse.ArgumentParser):
    """Parser that raises on bad usage instead of exiting the process."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="kyleback",
        description="Monte Carlo studies of price-impact trading models.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("validate",
                       help="run admissibility checks on the pricing rule")
    p.add_argument("--config", required=True, help="YAML run document")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="estimate mean wealth with full accounting")
    p.add_argument("--config", required=True, help="YAML run document")
    p.add_argument("--seed", type=int, default=None,
                   help="override the document seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (default 1)")
    p.add_argument("--trace", type=int, default=0, metavar="N",
                   help="dump per-node traces for the first N paths")
    p.add_argument("--out", default=None,
                   help="override the document output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep",
                       help="re-estimate over a parameter grid and fit a trend")
    p.add_argument("--config", required=True, help="YAML run document")
    p.add_argument("--param", required=True,
                   help="parameter to vary: b, n_jumps, z, or dt")
    p.add_argument("--values", required=True,
                   help="comma-separated grid values, ascending")
    p.add_argument("--seed", type=int, default=None,
                   help="override the document seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (default 1)")
    p.add_argument("--out", default=None,
                   help="override the document output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report",
                       help="render figures for the tables in a run directory")
    p.add_argument("--out", required=True,
                   help="directory holding summary.json and tables")
    p.set_defaults(func=cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Output plumbing


def _fresh_run_dir(parent: str) -> str:
    """Create and return a new timestamped subdirectory of ``parent``."""
    os.makedirs(parent, exist_ok=True)
    base = os.path.join(parent, "run-" + time.strftime("%Y%m%d-%H%M%S"))
    path, n = base, 1
    while True:
        try:
            os.mkdir(path)
            return path
        except FileExistsError:
            n += 1
            path = f"{base}-{n}"


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


def _fmt(v: float) -> str:
    return f"{float(v):.12g}"


def _summary_dict(est) -> dict:
    lo, hi = est.ci95
    return {"n_paths": int(est.n_paths), "n_excluded": int(est.n_excluded),
            "mean": float(est.mean), "stderr": float(est.stderr),
            "ci95": [float(lo), float(hi)]}


def _checks_dict(report) -> list:
    return [{"name": c.name, "passed": bool(c.passed), "detail": c.detail}
            for c in report.checks]


def _validated(doc):
    """Build the rule and run the admissibility suite; None when it fails."""
    rule = config_mod.build_rule(doc["rule"])
    report = validate_rule(rule, window=config_mod.rule_window(doc))
    if not report.passed:
        for c in report.checks:
            if not c.passed:
                print(f"FAIL  {c.name}: {c.detail}", file=sys.stderr)
        print(f"{report.rule_name}: validation failed", file=sys.stderr)
        return None
    return rule, report


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    doc = config_mod.load_config(args.config)
    rule = config_mod.build_rule(doc["rule"])
    report = validate_rule(rule, window=config_mod.rule_window(doc))
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    verdict = "all checks passed" if report.passed else "validation failed"
    print(f"{report.rule_name}: {verdict}")
    return 0 if report.passed else 1


def cmd_run(args) -> int:
    doc = config_mod.load_config(args.config)
    if args.seed is not None:
        doc["seed"] = int(args.seed)
    if args.out is not None:
        doc["out"] = args.out
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    if args.trace < 0:
        raise UsageError("--trace must be nonnegative")

    built = _validated(doc)
    if built is None:
        return 1
    rule, vreport = built

    cfg = config_mod.build_sim(doc)
    n_paths = int(doc["n_paths"])
    blocks = run_blocks(cfg, n_paths, threads=args.threads)
    check_exclusions(blocks, n_paths)
    est = summarize_blocks(blocks, "direct")
    terms = term_means(blocks)

    checks = {"rule_validation": _checks_dict(vreport)}
    applicable = (config_mod.is_penalty_free(doc["rule"])
                  and doc["strategy"]["kind"] in BOUND_KINDS)
    if applicable:
        gap, gap_se = upper_bound_gap(blocks)
        verdict = "PASS" if gap <= 3.0 * gap_se else "EXCEEDS"
        checks["upper_bound"] = {"verdict": verdict, "gap_mean": float(gap),
                                 "gap_stderr": float(gap_se)}
    else:
        checks["upper_bound"] = {"verdict": "NOT-APPLICABLE"}

    summary = {
        "command": "run",
        "config": doc,
        "estimate": _summary_dict(est),
        "breakdown": {name: float(terms[name]) for name in TERM_ORDER},
        "checks": checks,
    }

    run_dir = _fresh_run_dir(doc["out"])
    summary_path = os.path.join(run_dir, "summary.json")
    _write_json(summary_path, summary)
    breakdown_path = os.path.join(run_dir, "breakdown.csv")
    _write_csv(breakdown_path, ["term", "mean"],
               [(name, _fmt(terms[name])) for name in TERM_ORDER])
    written = [summary_path, breakdown_path]
    for i in range(min(args.trace, n_paths)):
        rec = simulate_path(cfg, i)
        trace_path = os.path.join(run_dir, f"trace_{i:04d}.csv")
        write_trace(rec, trace_path)
        written.append(trace_path)

    print(f"rule      {rule.name}")
    print(f"strategy  {doc['strategy']['kind']}")
    print(f"paths     {est.n_paths} ({est.n_excluded} excluded)")
    print(f"mean      {_fmt(est.mean)}")
    print(f"stderr    {_fmt(est.stderr)}")
    lo, hi = est.ci95
    print(f"ci95      [{_fmt(lo)}, {_fmt(hi)}]")
    bound = checks["upper_bound"]
    if bound["verdict"] == "NOT-APPLICABLE":
        print("bound     not applicable (penalized rule or block trades)")
    else:
        print(f"bound     {bound['verdict']} "
              f"(mean - psi0 = {_fmt(bound['gap_mean'])}, "
              f"stderr {_fmt(bound['gap_stderr'])})")
    for path in written:
        print(f"wrote {path}")
    return 0


def _parse_values(text: str) -> list:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("--values: empty grid")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(
            f"--values: expected comma-separated numbers, got {text!r}"
        ) from None


def cmd_sweep(args) -> int:
    doc = config_mod.load_config(args.config)
    if args.seed is not None:
        doc["seed"] = int(args.seed)
    if args.out is not None:
        doc["out"] = args.out
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    values = _parse_values(args.values)

    built = _validated(doc)
    if built is None:
        return 1
    _, vreport = built

    cfg = config_mod.build_sim(doc)
    result = sweep(cfg, args.param, values, int(doc["n_paths"]),
                   threads=args.threads)

    summary = {
        "command": "sweep",
        "config": doc,
        "sweep": {
            "parameter": result.parameter,
            "values": [float(v) for v in result.values],
            "degree": int(result.degree),
            "poly": [float(p) for p in result.poly],
            "coefficient": float(result.coefficient),
            "coefficient_se": float(result.coefficient_se),
            "verdict": result.verdict,
            "chi2": float(result.chi2),
            "points": [_summary_dict(s) for s in result.summaries],
        },
        "checks": {"rule_validation": _checks_dict(vreport)},
    }

    run_dir = _fresh_run_dir(doc["out"])
    summary_path = os.path.join(run_dir, "summary.json")
    _write_json(summary_path, summary)
    sweep_path = os.path.join(run_dir, "sweep.csv")
    rows = []
    for v, s, fit, res in zip(result.values, result.summaries,
                              result.fitted, result.residuals):
        rows.append((_fmt(v), s.n_paths, s.n_excluded, _fmt(s.mean),
                     _fmt(s.stderr), _fmt(fit), _fmt(res)))
    _write_csv(sweep_path,
               ["value", "n_paths", "n_excluded", "mean", "stderr",
                "fitted", "residual"], rows)

    print(f"sweep     {result.parameter} over {len(result.values)} points")
    for v, s in zip(result.values, result.summaries):
        print(f"  {result.parameter}={_fmt(v)}  mean {_fmt(s.mean)} "
              f"(stderr {_fmt(s.stderr)})")
    print(f"trend     degree-{result.degree} coefficient "
          f"{_fmt(result.coefficient)} +- {_fmt(result.coefficient_se)}")
    print(f"verdict   {result.verdict}")
    for path in (summary_path, sweep_path):
        print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    from .report import render_dir

    written = render_dir(args.out)
    if not written:
        print(f"report: no recognized tables in {args.out}")
        return 0
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PathDiverged, TooManyDiverged, BoundaryBreach) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KyleBackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
