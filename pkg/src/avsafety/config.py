"""Run configuration: one YAML file per run, validated before anything executes.

Example::

    mode: dit-nade          # dlt | dit-nde | dit-nade
    policy: surrogate-idm   # built-in name or "cmd:<command line>"
    seed: 7
    budget: 200             # episodes (DIT)
    parallelism: 4
    output: runs/nade-7
    network: builtin:desk   # or a network YAML file
    behavior: behavior.yaml # preset file or an inline mapping
    nade: {epsilon: 3000}
    suite: my_suite.yaml    # DLT only; defaults to the shipped suite
    calibration: cal.yaml

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .estimator import DEFAULT_THRESHOLD

MODES = ("dlt", "dit-nde", "dit-nade")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "dlt"
    policy: str = "surrogate-idm"
    seed: int = 0
    budget: int = 100
    parallelism: int = 1
    output: str = "avsafety-out"
    network: str = "builtin:desk"
    route: str = "lap"
    horizon: float = 300.0
    behavior: object = None  # path, inline mapping, or None for defaults
    nade: dict = field(default_factory=dict)
    surrogate: dict = field(default_factory=dict)
    crash: dict = field(default_factory=dict)
    threshold: float = DEFAULT_THRESHOLD
    checkpoint_every: int = 50
    stop_on_convergence: bool = True
    suite: str | None = None
    calibration: str | None = None
    scenarios: tuple | None = None  # DLT subset by id
    step_budget_ms: float = 50.0

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError("budget must be an integer >= 1")
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ConfigError("parallelism must be an integer >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        for name in ("suite", "calibration"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")
        if isinstance(self.behavior, str) and not Path(self.behavior).is_file():
            raise ConfigError(f"behavior file not found: {self.behavior}")
        if not str(self.network).startswith("builtin:") and not Path(self.network).is_file():
            raise ConfigError(f"network file not found: {self.network}")
        if not self.policy.startswith("cmd:"):
            from .policies import builtin_policy

            try:
                builtin_policy(self.policy.removeprefix("builtin:"))
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from None
        return self

    @property
    def sim_mode(self) -> str:
        return {"dit-nde": "nde", "dit-nade": "nade"}.get(self.mode, "nade")

    def behavior_dict(self) -> dict:
        if self.behavior is None:
            return {}
        if isinstance(self.behavior, dict):
            return dict(self.behavior)
        raw = yaml.safe_load(Path(self.behavior).read_text())
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            raise ConfigError(f"behavior file {self.behavior} must hold a mapping")
        return raw

    def episode_setup(self):
        from .sim import EpisodeSetup

        try:
            return EpisodeSetup(network=str(self.network), route=self.route, mode=self.sim_mode,
                                horizon=self.horizon, behavior=self.behavior_dict(), nade=dict(self.nade),
                                surrogate=dict(self.surrogate), crash=dict(self.crash))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid episode settings: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["scenarios"] is not None:
            d["scenarios"] = list(d["scenarios"])
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate()


def _resolve(base: Path, value):
    if value is None or not isinstance(value, str) or value.startswith(("builtin:", "cmd:")):
        return value
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def config_from_dict(d: dict, base_dir=".") -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    d = dict(d)
    base = Path(base_dir)
    for k in ("suite", "calibration", "network", "behavior"):
        if k in d:
            d[k] = _resolve(base, d[k])
    if "scenarios" in d and d["scenarios"] is not None:
        d["scenarios"] = tuple(d["scenarios"])
    for k in ("nade", "surrogate", "crash"):
        if k in d and not isinstance(d[k], dict):
            raise ConfigError(f"{k} must be a mapping")
    try:
        return RunConfig(**d).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw, path.parent)
