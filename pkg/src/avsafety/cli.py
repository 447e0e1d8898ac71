"""Command-line entry point: ``avsafety {dlt,dit,replay,report}``.

Exit codes: 0 success, 1 verdict failure (DLT fail or replay mismatch),
2 configuration error, 3 protocol or runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, RunConfig, load_config
from .dlt import DltError, format_table
from .estimator import EstimatorError
from .policies import PolicyError
from .road import NetworkError
from .sim import SimError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _base_config(args, mode: str) -> RunConfig:
    default_mode = "dlt" if mode == "dlt" else f"dit-{getattr(args, 'mode', None) or 'nade'}"
    cfg = load_config(args.config) if args.config else RunConfig(mode=default_mode).validate()
    if args.config and mode == "dlt" and cfg.mode != "dlt":
        raise ConfigError(f"config mode {cfg.mode!r} is not a DLT run")
    if mode == "dit" and args.mode:
        cfg = cfg.with_overrides(mode=f"dit-{args.mode}")
    elif mode == "dit" and not cfg.mode.startswith("dit"):
        cfg = cfg.with_overrides(mode="dit-nade")
    return cfg.with_overrides(policy=args.policy, seed=args.seed, parallelism=args.parallel, output=args.out)


def cmd_dlt(args) -> int:
    from .runner import run_dlt

    cfg = _base_config(args, "dlt")
    if args.scenario:
        cfg = cfg.with_overrides(scenarios=tuple(args.scenario))
    res = run_dlt(cfg)
    sys.stdout.write(format_table(res.rows))
    if res.inconclusive:
        for c in res.inconclusive:
            print(f"inconclusive: {c.scenario}#{c.index}: {c.inconclusive}")
        print(f"DLT verdict: {'PASS' if res.passed else 'FAIL'} ({len(res.inconclusive)} inconclusive cases)")
        return EXIT_RUNTIME
    print(f"DLT verdict: {'PASS' if res.passed else 'FAIL'}; outputs in {cfg.output}")
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_dit(args) -> int:
    from .runner import run_dit

    cfg = _base_config(args, "dit").with_overrides(budget=args.budget)
    res = run_dit(cfg)
    r = res.report
    width = "n/a" if r.rel_half_width is None else f"{r.rel_half_width:.3f}"
    print(f"mode={r.mode} episodes={r.n} (+{r.n_ineffective} ineffective) p_hat={r.p_hat:.6g} "
          f"ci=[{r.ci_low:.6g}, {r.ci_high:.6g}] rel_half_width={width} converged={r.converged}")
    if r.crash_rate_per_mile is not None:
        print(f"crash rate per mile={r.crash_rate_per_mile:.6g}")
    print(f"outputs in {cfg.output}")
    if res.protocol_failures:
        print(f"{len(res.protocol_failures)} episodes lost to policy protocol failures")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_replay(args) -> int:
    from .runner import replay

    res = replay(args.trace, policy=args.policy, open_loop=args.open_loop)
    if args.out:
        res.replayed.save(args.out)
    if res.identical:
        print(f"replay identical ({len(res.original.steps)} steps)")
        return EXIT_OK
    for line, expected, actual in res.diff:
        print(f"line {line}:\n  recorded: {expected}\n  replayed: {actual}")
    return EXIT_FAIL


def cmd_report(args) -> int:
    from .runner import report_from_traces

    src = Path(args.directory)
    if (src / "dlt_summary.json").is_file() and not (src / "traces").is_dir():
        summary = json.loads((src / "dlt_summary.json").read_text())
        from .dlt import ScenarioRow

        rows = [ScenarioRow(**r) for r in summary["scenarios"]]
        sys.stdout.write(format_table(rows))
        print(f"DLT verdict: {summary['verdict']}")
        return EXIT_OK
    report = report_from_traces(src)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    report.write_histograms(out / "histograms")
    sys.stdout.write(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avsafety", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration YAML")
        sp.add_argument("--policy", help="built-in policy name or cmd:<command line>")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--parallel", type=int, help="worker processes")
        sp.add_argument("--out", help="output directory")

    d = sub.add_parser("dlt", help="run the driver licensing test")
    common(d)
    d.add_argument("--scenario", action="append", help="restrict to a scenario id (repeatable)")
    d.set_defaults(func=cmd_dlt)

    t = sub.add_parser("dit", help="run the statistical crash-rate test")
    common(t)
    t.add_argument("--mode", choices=("nde", "nade"))
    t.add_argument("--budget", type=int, help="maximum number of episodes")
    t.set_defaults(func=cmd_dit)

    r = sub.add_parser("replay", help="re-simulate a trace and diff it against the record")
    r.add_argument("trace")
    r.add_argument("--policy", help="override the recorded policy (closed loop)")
    r.add_argument("--open-loop", action="store_true", help="feed the recorded AV commands")
    r.add_argument("--out", help="write the replayed trace here")
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("report", help="rebuild reports from an output directory")
    s.add_argument("directory")
    s.add_argument("--out", help="where to write the regenerated report (default: in place)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, DltError, NetworkError, yaml.YAMLError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PolicyError, SimError, EstimatorError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
