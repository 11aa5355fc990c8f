"""Command line entry point: ``artifact verify``, ``artifact scenarios``, ``artifact report``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import harness
from .processes import SCENARIOS

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

_COLORS = {"pass": "32", "fail": "31", "inconclusive": "33", "error": "35"}


def _use_color(stream) -> bool:
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _paint(text: str, status: str, stream) -> str:
    if not _use_color(stream):
        return text
    return f"\033[{_COLORS.get(status, '0')}m{text}\033[0m"


def _bins(value: str) -> list[int]:
    """``8`` means the dyadic ladder 2, 4, 8; ``3,5,7`` an explicit list."""
    try:
        if "," in value:
            out = [int(v) for v in value.split(",") if v.strip()]
        else:
            n = int(value)
            out = [n]
            if n >= 2 and n & (n - 1) == 0:
                out = [2 ** k for k in range(1, n.bit_length())]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --bins value {value!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("--bins needs positive integers")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description="Chaos-matrix QSC verification harness")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run a verification suite or all of them")
    v.add_argument("suite", help="suite id or 'all'")
    v.add_argument("--config", type=Path, help="JSON scenario configuration")
    v.add_argument("--bins", type=_bins, help="grid sizes: N (dyadic up to N) or a comma list")
    v.add_argument("--levels", type=int, help="truncation level J")
    v.add_argument("--buffer", type=int, help="buffer below J")
    v.add_argument("--seed", type=int, help="scenario seed")
    v.add_argument("--out", type=Path, help="directory for the report files")
    v.add_argument("--format", choices=["json", "csv", "both"], help="report format")
    v.add_argument("--quiet", action="store_true", help="only print the summary line")

    s = sub.add_parser("scenarios", help="scenario catalog")
    s.add_argument("action", choices=["list"])

    r = sub.add_parser("report", help="report utilities")
    r.add_argument("action", choices=["merge"])
    r.add_argument("inputs", nargs="+", type=Path)
    r.add_argument("--out", type=Path, required=True, help="directory for the merged report")
    r.add_argument("--format", choices=["json", "csv", "both"], default="json")
    return parser


def _config(args) -> harness.ScenarioConfig:
    cfg = harness.ScenarioConfig.from_file(args.config) if args.config else harness.ScenarioConfig()
    doc = cfg.to_dict()
    if args.bins is not None:
        doc["grid"]["n_bins"] = args.bins
    if args.levels is not None:
        doc["truncation"]["J"] = args.levels
    if args.buffer is not None:
        doc["truncation"]["buffer"] = args.buffer
    if args.seed is not None:
        doc["scenario"]["seed"] = args.seed
    if args.out is not None:
        doc["output"]["dir"] = str(args.out)
    if args.format is not None:
        doc["output"]["format"] = args.format
    if args.suite != "all":
        doc["suites"] = [args.suite]
    return harness.ScenarioConfig.from_dict(doc)


def _print_suite(rec: harness.SuiteRecord, out, quiet: bool):
    if quiet:
        return
    tag = _paint(f"{rec.status.upper():12s}", rec.status, out)
    print(f"{tag} {rec.suite} ({rec.wall_time:.1f}s)", file=out)
    if rec.error:
        print(f"    {rec.error}", file=out)
    for c in rec.checks:
        if c.status == "pass" and not c.control:
            continue
        kind = "control " if c.control else ""
        where = f" [{c.scenario}]" if c.scenario else ""
        print(f"    {kind}{c.name}{where}: {c.status} (value {c.value}, {c.criterion} {c.limit})", file=out)


def _verify(args, out) -> int:
    if args.suite != "all" and args.suite not in harness.SUITES:
        print(f"error: unknown suite {args.suite!r}; known: {', '.join(harness.SUITES)}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = _config(args)
    except (harness.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = harness.run_suites(cfg, progress=lambda rec: _print_suite(rec, out, args.quiet))
    if cfg.out_dir:
        try:
            paths = harness.emit_report(report, cfg.out_dir, cfg.out_format)
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return EXIT_ERROR
        for p in paths:
            print(f"wrote {p}", file=out)
    counts = {}
    for s in report.suites:
        counts[s.status] = counts.get(s.status, 0) + 1
    summary = ", ".join(f"{k} {v}" for k, v in sorted(counts.items())) or "no suites"
    print(_paint(f"{report.status.upper()}: {summary}", report.status, out), file=out)
    return report.exit_code


def _scenarios(out) -> int:
    for name, (_, description) in SCENARIOS.items():
        print(f"{name:12s} {description}", file=out)
    return EXIT_PASS


def _merge(args, out) -> int:
    try:
        merged = harness.merge_reports(harness.load_report(p) for p in args.inputs)
        paths = harness.emit_report(merged, args.out, args.format, stem="merged")
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in paths:
        print(f"wrote {p}", file=out)
    return EXIT_PASS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = sys.stdout
    if args.command == "verify":
        return _verify(args, out)
    if args.command == "scenarios":
        return _scenarios(out)
    return _merge(args, out)


if __name__ == "__main__":
    sys.exit(main())
