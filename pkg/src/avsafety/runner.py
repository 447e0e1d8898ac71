"""Run orchestration: DLT cases and DIT episodes over a worker pool, replay, reports.

Workers never share state. Every episode or case gets its own seed derived
from the base seed and its index, so results do not depend on how work is
split across processes; the single aggregator merges them in index order.
"""

from __future__ import annotations

import csv
import json
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import dlt as dltmod
from .config import ConfigError, RunConfig
from .estimator import METERS_PER_MILE, ReportAccumulator, SafetyReport, WeightedOutcome, converged
from .policies import make_policy
from .rng import derived_int
from .sim import EpisodeSetup, EpisodeTrace, SimError, Simulator, diff_traces

TRACE_DIR = "traces"


def episode_seed(base_seed: int, index: int) -> int:
    return derived_int(base_seed, "episode", index)


def _pool(n: int, initializer, initargs):
    return ProcessPoolExecutor(max_workers=n, mp_context=mp.get_context("spawn"),
                               initializer=initializer, initargs=initargs)


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


# ---------------------------------------------------------------- DLT
@dataclass
class DltResult:
    rows: list
    cases: list
    passed: bool
    inconclusive: list = field(default_factory=list)


_DLT_POLICY = None


def _init_dlt(selector: str, step_budget_ms: float):
    global _DLT_POLICY
    _DLT_POLICY = _make_policy(selector, step_budget_ms)


def _make_policy(selector: str, step_budget_ms: float):
    if selector.startswith("cmd:"):
        from .policies import ExternalPolicy

        return ExternalPolicy(selector[4:], step_budget_ms=step_budget_ms)
    return make_policy(selector)


def _dlt_task(args):
    spec_dict, case, seed = args
    spec = dltmod.ScenarioSpec.from_dict(spec_dict)
    return dltmod.run_case(case, spec, _DLT_POLICY, seed)


def load_dlt_inputs(cfg: RunConfig):
    try:
        suite = dltmod.load_suite(cfg.suite or dltmod.default_suite_path())
        cal = dltmod.load_calibration(cfg.calibration or dltmod.default_calibration_path())
    except (OSError, yaml.YAMLError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load DLT suite: {exc}") from None
    if cfg.scenarios:
        unknown = set(cfg.scenarios) - {s.id for s in suite}
        if unknown:
            raise ConfigError(f"scenarios not in suite: {sorted(unknown)}")
        suite = [s for s in suite if s.id in cfg.scenarios]
    if not suite:
        raise ConfigError("the scenario suite is empty")
    missing = [s.id for s in suite if s.id not in cal]
    if missing:
        raise ConfigError(f"no calibration for scenarios: {missing}")
    return suite, cal


def run_dlt(cfg: RunConfig, write: bool = True) -> DltResult:
    """Generate, execute and judge every case of the suite."""
    suite, cal = load_dlt_inputs(cfg)
    tasks = []
    for spec in suite:
        for case in dltmod.generate_cases(spec, cal[spec.id]):
            tasks.append((spec.to_dict(), case, cfg.seed))
    if cfg.parallelism == 1 or len(tasks) <= 1:
        _init_dlt(cfg.policy, cfg.step_budget_ms)
        done = [_dlt_task(t) for t in tasks]
    else:
        with _pool(cfg.parallelism, _init_dlt, (cfg.policy, cfg.step_budget_ms)) as ex:
            done = list(ex.map(_dlt_task, tasks, chunksize=4))
    by_scenario = {s.id: [] for s in suite}
    for c in done:
        by_scenario[c.scenario].append(c)
    rows = [dltmod.scenario_verdict(sid, cases) for sid, cases in by_scenario.items()]
    result = DltResult(rows, done, dltmod.dlt_verdict(rows), [c for c in done if c.inconclusive])
    if write:
        write_dlt_outputs(cfg, result)
    return result


def write_dlt_outputs(cfg: RunConfig, result: DltResult) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out)
    (out / "dlt_table.txt").write_text(dltmod.format_table(result.rows))
    with (out / "dlt_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "N", "P/F", "n_p", "n_f", "d_min", "ttc_min", "t_react", "n_inconclusive"])
        for r in result.rows:
            w.writerow([r.scenario, r.n, r.verdict, r.n_pass, r.n_fail, r.d_min, r.ttc_min, r.t_react,
                        r.n_inconclusive])
    with (out / "dlt_cases.jsonl").open("w") as fh:
        for c in result.cases:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
    summary = {"verdict": "P" if result.passed else "F", "policy": cfg.policy, "seed": cfg.seed,
               "scenarios": [r.to_dict() for r in result.rows],
               "inconclusive": [{"scenario": c.scenario, "index": c.index, "reason": c.inconclusive}
                                for c in result.inconclusive]}
    (out / "dlt_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return out


# ---------------------------------------------------------------- DIT
@dataclass
class EpisodeResult:
    index: int
    seed: int
    outcome: WeightedOutcome
    termination: str
    diagnostic: str | None
    log_w: float
    trace_path: str | None

    @property
    def protocol_failure(self) -> bool:
        return bool(self.diagnostic) and self.diagnostic.startswith("policy")


@dataclass
class DitResult:
    report: SafetyReport
    episodes: list
    history: list

    @property
    def protocol_failures(self) -> list:
        return [e for e in self.episodes if e.protocol_failure]


_SIM = None
_POLICY = None
_SELECTOR = None
_TRACE_OUT = None


def _init_dit(setup_dict: dict, selector: str, step_budget_ms: float, trace_dir: str | None):
    global _SIM, _POLICY, _SELECTOR, _TRACE_OUT
    _SIM = Simulator(EpisodeSetup.from_dict(setup_dict))
    _POLICY = _make_policy(selector, step_budget_ms)
    _SELECTOR = selector
    _TRACE_OUT = trace_dir


def trace_name(index: int) -> str:
    return f"episode-{index:06d}.jsonl"


def _dit_task(args) -> EpisodeResult:
    index, seed = args
    trace = _SIM.run(_POLICY, seed, policy_name=_SELECTOR)
    path = None
    if _TRACE_OUT is not None:
        path = str(Path(_TRACE_OUT) / trace_name(index))
        trace.save(path)
    return EpisodeResult(index, seed, WeightedOutcome.from_trace(trace), trace.termination,
                         trace.footer.get("diagnostic"), trace.log_weight, path)


def lap_miles(setup: EpisodeSetup) -> float:
    sim = Simulator(setup)
    return sum(sim.network.lanes[l].length for l in sim.route) / METERS_PER_MILE


def run_dit(cfg: RunConfig, write: bool = True) -> DitResult:
    """Episodes in batches of ``checkpoint_every`` until the budget or convergence."""
    setup = cfg.episode_setup()
    try:
        miles = lap_miles(setup)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot build the simulation: {exc}") from None
    out = Path(cfg.output)
    trace_dir = None
    if write:
        (out / TRACE_DIR).mkdir(parents=True, exist_ok=True)
        trace_dir = str(out / TRACE_DIR)
        _write_config(cfg, out)
    init = (setup.to_dict(), cfg.policy, cfg.step_budget_ms, trace_dir)
    ex = None
    if cfg.parallelism > 1:
        ex = _pool(cfg.parallelism, _init_dit, init)
    else:
        _init_dit(*init)
    acc = ReportAccumulator()
    episodes, history = [], []
    try:
        start = 0
        while start < cfg.budget:
            stop = min(start + cfg.checkpoint_every, cfg.budget)
            tasks = [(i, episode_seed(cfg.seed, i)) for i in range(start, stop)]
            batch = list(ex.map(_dit_task, tasks)) if ex else [_dit_task(t) for t in tasks]
            for r in batch:
                acc.add(r.outcome)
            episodes.extend(batch)
            history.append((stop, _width(acc)))
            start = stop
            if cfg.stop_on_convergence and converged(history, cfg.threshold):
                break
    finally:
        if ex is not None:
            ex.shutdown()
    if acc.moments.n == 0:
        reasons = sorted({e.diagnostic or "ineffective" for e in episodes})
        raise SimError(f"no effective episodes ({'; '.join(reasons)})")
    report = acc.report(miles, cfg.sim_mode, cfg.threshold, history)
    result = DitResult(report, episodes, history)
    if write:
        write_dit_outputs(cfg, result)
    return result


def _width(acc: ReportAccumulator):
    if acc.moments.n == 0:
        return None
    return acc.moments.estimate().rel_half_width


def write_dit_outputs(cfg: RunConfig, result: DitResult) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    result.report.save(out / "report.json")
    result.report.write_histograms(out / "histograms")
    with (out / "episodes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "seed", "termination", "crash_type", "severity", "log_w", "miles", "effective",
                    "diagnostic"])
        for e in result.episodes:
            o = e.outcome
            w.writerow([e.index, e.seed, e.termination, o.crash_type or "", o.severity or "", repr(e.log_w),
                        repr(o.miles), int(o.effective), e.diagnostic or ""])
    with (out / "convergence.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes", "rel_half_width"])
        for n, width in result.history:
            w.writerow([n, "" if width is None else repr(width)])
    return out


# ---------------------------------------------------------------- report / replay
def report_from_traces(directory, checkpoint_every: int | None = None, threshold: float | None = None,
                       mode: str | None = None) -> SafetyReport:
    """Rebuild the safety report of a DIT output directory from its trace archive."""
    directory = Path(directory)
    cfg = {}
    if (directory / "config.yaml").is_file():
        cfg = yaml.safe_load((directory / "config.yaml").read_text()) or {}
    paths = sorted((directory / TRACE_DIR).glob("episode-*.jsonl"))
    if not paths:
        raise ConfigError(f"no traces under {directory / TRACE_DIR}")
    every = checkpoint_every or cfg.get("checkpoint_every", 50)
    threshold = threshold or cfg.get("threshold", 0.3)
    acc = ReportAccumulator()
    history = []
    setup = None
    for k, p in enumerate(paths, 1):
        trace = EpisodeTrace.load(p)
        setup = setup or EpisodeSetup.from_dict(trace.header["setup"])
        acc.add(WeightedOutcome.from_trace(trace))
        if k % every == 0 or k == len(paths):
            history.append((k, _width(acc)))
    return acc.report(lap_miles(setup), mode or setup.mode, threshold, history)


@dataclass
class ReplayResult:
    original: EpisodeTrace
    replayed: EpisodeTrace
    diff: list

    @property
    def identical(self) -> bool:
        return not self.diff


def replay(trace_path, policy: str | None = None, open_loop: bool = False,
           step_budget_ms: float = 50.0) -> ReplayResult:
    """Re-simulate a trace from its header and compare line by line.

    Closed loop re-runs the recorded policy (or ``policy``); open loop feeds
    the recorded AV commands instead, so any policy binary reproduces the
    kinematics.
    """
    try:
        original = EpisodeTrace.load(trace_path)
        setup = EpisodeSetup.from_dict(original.header["setup"])
    except (OSError, ValueError, KeyError, TypeError, SimError) as exc:  # JSON errors are ValueErrors
        raise ConfigError(f"cannot load trace {trace_path}: {exc}") from None
    sim = Simulator(setup)
    name = original.header["policy"]
    if open_loop:
        forced = [tuple(s["av"]) for s in original.steps]
        replayed = sim.run(None, original.seed, forced_av=forced, policy_name=name)
    else:
        selector = policy or name
        pol = _make_policy(selector, step_budget_ms)
        try:
            replayed = sim.run(pol, original.seed, policy_name=selector)
        finally:
            if hasattr(pol, "close"):
                pol.close()
    return ReplayResult(original, replayed, diff_traces(original, replayed))
