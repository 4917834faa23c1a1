"""Command line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, LebSimError, ParameterError
from .harness import (
    SWEEP_AXES,
    ScenarioConfig,
    build_trace,
    dumps_records,
    dumps_summary,
    dumps_sweep,
    run_scenario,
    sweep,
)
from .influence import write_audit_csv
from .trace import save_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lebsim", description="Spectrum sensing fusion under a learning Byzantine attacker.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    _common(p)
    p.add_argument("--output", default="trace.csv", help="file name inside --out-dir")

    p = sub.add_parser("run", help="run one scenario; writes records CSV and summary JSON")
    _common(p)
    p.add_argument("--trace", help="trace CSV to replay instead of a synthetic trace")
    p.add_argument("--audit", action="store_true", help="also write the policy audit CSV")

    p = sub.add_parser("sweep", help="sweep one parameter axis; writes a summary CSV")
    _common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--repeats", type=int, default=1, help="seeds per value")
    p.add_argument("--paired", action="store_true", help="reuse the same seeds for every value")
    p.add_argument("--workers", type=int, default=1, help="worker processes for independent runs")

    p = sub.add_parser("report", help="print a summary JSON as a table")
    p.add_argument("summary", help="summary JSON written by 'run'")
    return parser


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig() if args.config is None else ScenarioConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_values(axis: str, text: str) -> list:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            v = float(item)
        except ValueError:
            raise ConfigError(f"bad value {item!r} for axis {axis}") from None
        if axis in ("m", "eta"):
            if v != int(v):
                raise ConfigError(f"axis {axis} needs integer values, got {item}")
            v = int(v)
        values.append(v)
    if not values:
        raise ConfigError("--values is empty")
    return values


def cmd_gen_trace(args) -> int:
    cfg = _load_config(args)
    path = _out_dir(args) / args.output
    save_trace_csv(build_trace(cfg), path)
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.trace is not None:
        if not Path(args.trace).is_file():
            raise ConfigError(f"trace file not found: {args.trace}")
        cfg = cfg.replace(trace_path=str(args.trace))
    out = _out_dir(args)
    audit = [] if args.audit else None
    records, summary = run_scenario(cfg, audit=audit)
    (out / "records.csv").write_text(dumps_records(records), encoding="utf-8")
    (out / "summary.json").write_text(dumps_summary(cfg, summary), encoding="utf-8")
    if audit is not None:
        write_audit_csv(audit, out / "audit.csv")
    print(_table(summary.to_dict()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = _parse_values(args.axis, args.values)
    if args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    try:
        rows = sweep(cfg, args.axis, values, repeats=args.repeats, paired=args.paired, workers=args.workers)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    path = _out_dir(args) / f"sweep_{args.axis}.csv"
    path.write_text(dumps_sweep(rows), encoding="utf-8")
    print(path)
    return EXIT_OK


def _table(metrics: dict) -> str:
    width = max(len(k) for k in metrics)
    lines = []
    for k, v in metrics.items():
        lines.append(f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.summary)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read summary {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"summary {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "metrics" not in doc:
        raise ConfigError(f"summary {path} has no 'metrics' section")
    cfg = doc.get("config", {})
    print(f"defense={cfg.get('defense')} rule={cfg.get('rule')} m={cfg.get('m')} seed={doc.get('seed')}")
    print(_table(doc["metrics"]))
    return EXIT_OK


COMMANDS = {"gen-trace": cmd_gen_trace, "run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LebSimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
