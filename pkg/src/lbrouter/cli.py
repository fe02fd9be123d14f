"""Command line entry point: ``lbrouter {bounds,simulate,validate,tradeoff}``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from . import config as cfgmod
from .bounds import NoTrafficError, OverloadError, canonicalize, tail_curve
from .model import ConfigError, max_load
from .sim import InadmissibleTraffic, empirical_tail, run
from .sim.validate import MONITORED, dominate, sim_params
from .tradeoff import NoFeasibleConfiguration, frontier

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3

CURVE_COLUMNS = ["curve_id", "threshold", "probability", "log10_probability"]


class _Parser(argparse.ArgumentParser):
    # usage errors share the config-error status
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fmt_prob(p: float) -> str:
    return f"{p:.8e}"


def _fmt_num(x: float) -> str:
    return f"{x:.9g}"


class Table:
    """CSV with a ``#`` metadata line carrying the tool version and resolved config."""

    def __init__(self, columns, doc):
        self.buf = io.StringIO()
        self.buf.write(f"# lbrouter {__version__} config={cfgmod.dumps(doc)}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.writer.writerow(columns)

    def row(self, *values):
        self.writer.writerow(values)

    def text(self) -> str:
        return self.buf.getvalue()


def _emit(table: Table, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(table.text())
    else:
        sys.stdout.write(table.text())


def _sweep(exp: cfgmod.ExperimentConfig):
    """(label, router) per sweep entry, in declaration order."""
    base = exp.router
    if not exp.sweep_values:
        return [("base", base)]
    out = []
    for v in exp.sweep_values:
        if exp.sweep_parameter == "m_active":
            out.append((f"m_active={int(v)}", base.with_active(int(v))))
        else:
            out.append((f"speedup={v:g}", replace(base, alpha=float(v), beta=float(v))))
    return out


def cmd_bounds(doc: dict) -> tuple[Table, int]:
    exp = cfgmod.ExperimentConfig.from_resolved(doc)
    table = Table(CURVE_COLUMNS, doc)
    rbar = max_load(exp.traffic)
    status = EXIT_OK
    for label, router in _sweep(exp):
        for kind in exp.kinds:
            cid = f"{kind}:{label}"
            try:
                p = canonicalize(router, rbar, exp.traffic.aggregate_burst, exp.reading)
            except OverloadError as err:
                table.row(cid, "", "infeasible", "")
                print(f"{cid}: infeasible ({err})", file=sys.stderr)
                status = EXIT_INFEASIBLE
                continue
            curve = tail_curve(kind, exp.thresholds, p, exp.policy, union=True, label=cid)
            for x, pr, lg in zip(curve.thresholds, curve.probabilities, curve.log10_probabilities):
                table.row(cid, _fmt_num(x), _fmt_prob(pr), _fmt_num(lg))
    return table, status


def _simulate(exp: cfgmod.ExperimentConfig):
    return run(exp.router, exp.traffic, exp.seed, exp.horizon, exp.warmup)


def cmd_simulate(doc: dict) -> tuple[Table, int]:
    exp = cfgmod.ExperimentConfig.from_resolved(doc)
    stats = _simulate(exp)
    table = Table(CURVE_COLUMNS + ["samples"], doc)
    lines = [f"slots {stats.horizon}, warmup {stats.warmup}, injected {stats.injected}, departed {stats.departed}"]
    for q in ("q1", "q2", "q3", "d1", "d2", "e2e", "d3", "total"):
        if stats.count(q) == 0:
            lines.append(f"{q}: no samples")
            continue
        x = np.arange(stats.maximum(q) + 2)
        curve = empirical_tail(stats, q, x)
        for xi, pr, lg in zip(curve.thresholds, curve.probabilities, curve.log10_probabilities):
            table.row(f"empirical_{q}", _fmt_num(xi), _fmt_prob(pr), _fmt_num(lg), stats.count(q))
        what = "mean delay" if q[0] in "det" else "mean queue"
        lines.append(f"{q}: {what} {stats.mean(q):.6g}, max {stats.maximum(q)}")
    print("\n".join(lines), file=sys.stderr)
    return table, EXIT_OK


def cmd_validate(doc: dict, *, bound_scale: float = 1.0) -> tuple[Table, int]:
    exp = cfgmod.ExperimentConfig.from_resolved(doc)
    stats = _simulate(exp)
    table = Table(["quantity", "threshold", "bound", "empirical", "std_error", "samples", "result"], doc)
    if max_load(exp.traffic) == 0:
        print("no traffic: every bound holds vacuously", file=sys.stderr)
        return table, EXIT_OK
    try:
        params = sim_params(exp.router, exp.traffic, exp.reading)
    except OverloadError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return table, EXIT_INFEASIBLE
    report = dominate(stats, params, exp.policy, scale=bound_scale)
    for c in report.checks:
        table.row(
            c.quantity, _fmt_num(c.threshold), _fmt_prob(c.bound), _fmt_prob(c.empirical),
            _fmt_prob(c.std_error), c.samples, "PASS" if c.passed else "FAIL",
        )  # fmt: skip
    print(report.summary(), file=sys.stderr)
    for c in report.failures:
        print(f"FAIL {c.quantity} >= {c.threshold:g}: empirical {c.empirical:.3e} > bound {c.bound:.3e}", file=sys.stderr)
    return table, EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_tradeoff(doc: dict) -> tuple[Table, int]:
    exp = cfgmod.ExperimentConfig.from_resolved(doc)
    table = Table(["m_active", "power", "delay_bound", "queue_bound", "feasible"], doc)
    rbar = max_load(exp.traffic)
    m_values = [int(v) for v in exp.sweep_values] if exp.sweep_parameter == "m_active" and exp.sweep_values else None
    try:
        points = frontier(
            exp.router, rbar, exp.power, exp.target, exp.policy,
            sigma=exp.traffic.aggregate_burst, m_values=m_values,
        )  # fmt: skip
    except NoFeasibleConfiguration as err:
        print(str(err), file=sys.stderr)
        return table, EXIT_INFEASIBLE
    for pt in points:
        delay = "" if pt.delay_bound is None else pt.delay_bound
        queue = "" if pt.queue_bound is None else pt.queue_bound
        table.row(pt.m_active, _fmt_num(pt.power), delay, queue, str(pt.feasible).lower())
    return table, EXIT_OK


COMMANDS = {"bounds": cmd_bounds, "simulate": cmd_simulate, "validate": cmd_validate, "tradeoff": cmd_tradeoff}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lbrouter", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lbrouter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="YAML experiment file")
        src.add_argument("--preset", choices=cfgmod.PRESETS)
        p.add_argument("--output", help="CSV destination (default: stdout)")
        p.add_argument("--seed", type=int, help="overrides sim.seed")
    return parser


def resolve_args(args) -> dict:
    doc = cfgmod.load(args.config) if args.config else cfgmod.load_preset(args.preset)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        doc["sim"]["seed"] = args.seed
    if args.output is not None:
        doc["output"]["path"] = args.output
    return cfgmod.resolve(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = resolve_args(args)
        table, status = COMMANDS[args.command](doc)
    except (ConfigError, NoTrafficError) as err:
        status = EXIT_INFEASIBLE if isinstance(err, InadmissibleTraffic) else EXIT_CONFIG
        print(f"error: {err}", file=sys.stderr)
        return status
    _emit(table, doc["output"]["path"])
    return status


if __name__ == "__main__":
    sys.exit(main())
