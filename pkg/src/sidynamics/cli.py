"""Command line entry point: ``run``, ``verify``, ``plot`` and ``report``.

Exit codes: 0 on success, 1 when ``verify`` finds a failing check or a plot
input holds no data, 2 for invalid configs, unknown names and unreadable
inputs.  Output goes under ``$SIDYNAMICS_OUTPUT_ROOT`` (default ``runs``)
unless a path is given explicitly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import svg
from .dynamics import Trajectory
from .experiments import ConfigError, output_root, report, run_experiment
from .jumps import TOY_DELTA, delta_envelopes, fit_envelopes, segment_phases
from .verify import SUITES, verify


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sidynamics", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="experiment directory (default: output root / experiment name)")
    r.add_argument("--workers", type=int, default=1)

    v = sub.add_parser("verify", help="run the property battery")
    v.add_argument("suite", nargs="?", default="all", choices=["all", *SUITES])
    v.add_argument("--json", help="report path (default: output root / verify-<suite>.json)")

    pl = sub.add_parser("plot", help="emit SVG charts for a trace")
    pl.add_argument("input", help="trace.csv or a sweep-point directory")
    pl.add_argument("--kind", required=True, choices=svg.KINDS)
    pl.add_argument("--out", help="output directory (default: next to the input)")
    pl.add_argument("--period", type=int, help="index among complete periods (default: middle one)")
    pl.add_argument("--delta", type=float, help="jump threshold for segmentation")
    pl.add_argument("--family", default="const", help="envelope family: const, inv or inv2")
    pl.add_argument("--eta", type=float, help="learning rate when no manifest is present")
    pl.add_argument("--lam", type=float, help="weight decay when no manifest is present")
    pl.add_argument("--linear", action="store_true", help="linear y axes throughout")

    rp = sub.add_parser("report", help="summarise an experiment directory")
    rp.add_argument("dir")
    return p


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _cmd_run(args) -> int:
    try:
        out = run_experiment(args.config, args.out, workers=args.workers)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{exc.source}: {d}", file=sys.stderr)
        return 2
    except OSError as exc:
        return _fail(str(exc), 2)
    top = json.loads((out / "manifest.json").read_text())
    for name in top["points"]:
        flag = "  (truncated)" if name in top["truncated"] else ""
        print(f"{out / name}{flag}")
    return 0


def _cmd_verify(args) -> int:
    rep = verify(args.suite)
    print(rep.summary())
    path = Path(args.json) if args.json else output_root() / f"verify-{args.suite}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rep.to_json())
    print(f"report: {path}")
    return 0 if rep.passed else 1


def _load_trace(args):
    src = Path(args.input)
    csv_path = src / "trace.csv" if src.is_dir() else src
    if not csv_path.is_file():
        raise FileNotFoundError(f"no trace at {csv_path}")
    cols = Trajectory.read_csv(csv_path)
    meta = {}
    manifest = csv_path.parent / "manifest.json"
    if manifest.is_file():
        meta = json.loads(manifest.read_text())
    cfg = meta.get("config", {})
    eta = args.eta if args.eta is not None else cfg.get("eta")
    lam = args.lam if args.lam is not None else cfg.get("lam")
    delta = args.delta if args.delta is not None else (meta.get("deltas") or [TOY_DELTA])[0]
    return csv_path, cols, eta, lam, delta


def _pick_period(cols, eta, lam, delta, index):
    if eta is None or lam is None:
        raise ValueError("eta and lam are needed (no manifest next to the trace; pass --eta/--lam)")
    data = dict(cols, eta=eta, lam=lam)
    complete = [p for p in segment_phases(data, delta) if p.complete]
    if not complete:
        raise ValueError(f"no complete period at delta={delta}")
    i = len(complete) // 2 if index is None else index
    if not 0 <= i < len(complete):
        raise ValueError(f"period index {i} out of range (0..{len(complete) - 1})")
    return data, complete[i]


def _cmd_plot(args) -> int:
    try:
        csv_path, cols, eta, lam, delta = _load_trace(args)
    except (OSError, ValueError) as exc:
        return _fail(str(exc), 2)
    out = Path(args.out) if args.out else csv_path.parent
    log = not args.linear
    try:
        if args.kind == "trace":
            charts = {f"trace_{k}.svg": c for k, c in svg.trace_charts(cols, log, log).items()}
        elif args.kind == "phase":
            charts = {"phase.svg": svg.phase_diagram(cols)}
        else:
            if len(cols.get("step", [])) == 0:
                raise svg.PlotError("empty trace")
            data, period = _pick_period(cols, eta, lam, delta, args.period)
            if args.kind == "period":
                charts = {f"period_{period.index}.svg": svg.period_chart(cols, period.to_dict(), pad=5)}
            else:
                bounds = fit_envelopes(data, period.phases["B"], args.family)
                overlay = delta_envelopes(data, bounds)
                charts = {f"envelopes_{period.index}.svg": svg.envelope_chart(cols, overlay, period.phases["B"], log)}
        rendered = {name: c.render() for name, c in charts.items()}
    except (svg.PlotError, ValueError) as exc:
        return _fail(str(exc), 1)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in rendered.items():
        (out / name).write_text(text)
        print(out / name)
    return 0


def _cmd_report(args) -> int:
    try:
        summary = report(args.dir)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(str(exc), 2)
    print((Path(args.dir) / "report.md").read_text(), end="")
    return 0 if summary else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    np.seterr(all="ignore")
    return {"run": _cmd_run, "verify": _cmd_verify, "plot": _cmd_plot, "report": _cmd_report}[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
