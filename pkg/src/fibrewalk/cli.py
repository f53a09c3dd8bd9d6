"""Command-line entry point: ``fibrewalk {mcmc,sis,gfit,bounds,enumerate}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .pipeline import RunConfig, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fibrewalk", description="Exact conditional tests for contingency tables.")
    sub = p.add_subparsers(dest="mode", required=True)

    def common(sp):
        sp.add_argument("--data", required=True, help="dataset JSON file or bundled name (nber, rochdale, tiny3x3)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", dest="output", help="write the JSON report here")
        return sp

    m = common(sub.add_parser("mcmc", help="Markov chain exact p-values"))
    m.add_argument("--chains", type=int, default=10)
    m.add_argument("--iters", dest="iterations", type=int, default=250_000)
    m.add_argument("--burnin", dest="burn_in", type=int, default=25_000)
    m.add_argument("--batches", type=int, default=10)
    m.add_argument("--f", dest="kind", default="reciprocal", choices=["reciprocal", "uniform", "hypergeometric"])
    m.add_argument("--target", default="hypergeometric", choices=["uniform", "hypergeometric"])
    m.add_argument("--g", dest="g_path", help="g JSON from 'fibrewalk gfit'; estimated when omitted")
    m.add_argument("--imax", dest="i_max", type=int, default=10_000, help="explorations when g is estimated")
    m.add_argument("--workers", type=int, help="parallel chains (default: $FIBREWALK_WORKERS or CPU count)")

    s = common(sub.add_parser("sis", help="sequential importance sampling baseline"))
    s.add_argument("--samples", dest="num_samples", type=int, default=10_000)
    s.add_argument("--f", dest="kind", default="hypergeometric", choices=["reciprocal", "uniform", "hypergeometric"])
    s.add_argument("--target", default="hypergeometric", choices=["uniform", "hypergeometric"])

    g = common(sub.add_parser("gfit", help="estimate the neighbour-order distribution g"))
    g.add_argument("--imax", dest="i_max", type=int, default=10_000)

    common(sub.add_parser("bounds", help="global LP cell bounds"))

    e = common(sub.add_parser("enumerate", help="exhaustive fiber enumeration (small tables only)"))
    e.add_argument("--limit", type=int, default=10**6)
    e.add_argument("--target", default="hypergeometric", choices=["uniform", "hypergeometric"])
    return p


def _summarise(report: dict) -> str:
    lines = [f"{report.get('dataset') or 'dataset'}: {report['cells']} cells, {report['free_cells']} free, df {report['df']}"]
    for k, v in report.get("observed", {}).items():
        lines.append(f"  {k} = {v:.4f}  asymptotic p = {report['asymptotic_p'][k]:.4f}")
    for k, v in report.get("p_values", {}).items():
        se = v.get("standard_error")
        extra = f" +/- {se:.4f}" if se is not None else ""
        lines.append(f"  exact p ({k}) = {v['exact_p']:.4f}{extra}")
    if "fiber_size" in report:
        lines.append(f"  |T| = {report['fiber_size']}" + (" (limit reached)" if report["overflow"] else ""))
    if "g_mode" in report:
        lines.append(f"  g mode {report['g_mode']} ({report['g_at_mode']:.3f}), Q = {report['Q']:.2f}")
    if "counters" in report:
        c = report["counters"]
        lines.append(f"  accepted {c['accepted']}, rejected {c['rejected']}, failed {c['failed']}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = vars(_parser().parse_args(argv))
    try:
        cfg = RunConfig(**{k: v for k, v in args.items() if v is not None})
        report = run(cfg)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"fibrewalk: error: {args.get('data')}: {exc}", file=sys.stderr)
        return 1
    if cfg.output:
        Path(cfg.output).write_text(json.dumps(report, indent=2, default=float))
    if cfg.mode == "gfit" and not cfg.output:
        print(json.dumps(report["g"]))
    print(_summarise(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
