"""Crash-rate estimators, confidence intervals and report aggregation.

All running sums are kept as exact rationals (``fractions.Fraction`` of the
binary float inputs). Merging partial results is then exactly associative and
commutative, so a report assembled from any number of workers in any order is
bit-for-bit the one a single worker would produce.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

Z95 = 1.96
METERS_PER_MILE = 1609.344
DEFAULT_THRESHOLD = 0.3  # invented stopping default, labeled as such in reports
DEFAULT_CHECKPOINTS = 3


class EstimatorError(ValueError):
    pass


class Estimate(NamedTuple):
    p_hat: float
    stderr: float
    ci_low: float
    ci_high: float
    rel_half_width: float | None  # None when p_hat == 0 (not converged)


@dataclass
class Moments:
    """Exact count, sum and sum of squares of a sample."""

    n: int = 0
    s1: Fraction = Fraction(0)
    s2: Fraction = Fraction(0)

    def add(self, x: float) -> None:
        self.n += 1
        if x != 0.0:
            f = Fraction(x)
            self.s1 += f
            self.s2 += f * f

    def extend(self, xs) -> None:
        xs = np.asarray(xs, float)
        self.n += xs.size
        for x in xs[xs != 0.0].tolist():
            f = Fraction(x)
            self.s1 += f
            self.s2 += f * f

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.n + other.n, self.s1 + other.s1, self.s2 + other.s2)

    def estimate(self) -> Estimate:
        if self.n == 0:
            raise EstimatorError("no episodes")
        n = self.n
        mean = self.s1 / n
        if n > 1:
            var = (self.s2 - self.s1 * mean) / (n - 1)
            se = math.sqrt(float(var) / n)
        else:
            se = 0.0
        p = float(mean)
        lo = min(max(p - Z95 * se, 0.0), 1.0)
        hi = min(max(p + Z95 * se, 0.0), 1.0)
        rhw = Z95 * se / p if p > 0 else None
        return Estimate(p, se, lo, hi, rhw)


def mc_estimate(indicators) -> Estimate:
    """Plain Monte Carlo: mean of 0/1 crash indicators, sample-std standard error."""
    x = np.asarray(indicators, float).ravel()
    if x.size == 0:
        raise EstimatorError("mc_estimate needs at least one episode")
    if not np.isin(x, (0.0, 1.0)).all():
        raise EstimatorError("indicators must be 0 or 1")
    m = Moments()
    m.extend(x)
    return m.estimate()


def is_estimate(indicators, weights) -> Estimate:
    """Importance-sampled estimate: mean of ``I_i * W_i``."""
    ind = np.asarray(indicators, float).ravel()
    w = np.asarray(weights, float).ravel()
    if ind.size == 0:
        raise EstimatorError("is_estimate needs at least one episode")
    if ind.shape != w.shape:
        raise EstimatorError("indicators and weights differ in length")
    if not (w > 0).all():
        raise EstimatorError("weights must be positive")
    m = Moments()
    m.extend(ind * w)
    return m.estimate()


def crash_rate_per_mile(weighted_crashes: float, weighted_miles: float) -> float:
    """Weighted crash mass divided by weighted AV miles."""
    if weighted_miles <= 0:
        raise EstimatorError("zero miles driven")
    return weighted_crashes / weighted_miles


def converged(widths, threshold: float = DEFAULT_THRESHOLD, k: int = DEFAULT_CHECKPOINTS) -> bool:
    """True when the last ``k`` relative half-widths are all ``<= threshold``.

    ``widths`` holds floats, ``None`` (no crash yet) or ``(n, width)`` pairs.
    """
    ws = [w[1] if isinstance(w, tuple) else w for w in widths]
    if len(ws) < k:
        return False
    return all(w is not None and w <= threshold for w in ws[-k:])


# ---------------------------------------------------------------- outcomes
@dataclass(frozen=True)
class WeightedOutcome:
    crash: bool
    weight: float = 1.0
    miles: float = 0.0
    crash_type: str | None = None
    severity: int | None = None
    location_class: str | None = None
    effective: bool = True

    def __post_init__(self):
        if not self.weight > 0:
            raise EstimatorError(f"weight must be positive, got {self.weight}")
        if self.miles < 0:
            raise EstimatorError("miles must be non-negative")

    @classmethod
    def from_trace(cls, trace) -> "WeightedOutcome":
        crash = trace.footer.get("crash")
        return cls(crash=crash is not None, weight=trace.weight, miles=trace.distance / METERS_PER_MILE,
                   crash_type=crash["type"] if crash else None,
                   severity=crash["severity"] if crash else None,
                   location_class=crash["location_class"] if crash else None,
                   effective=trace.effective)


def _add(hist: dict, key, value: Fraction):
    hist[key] = hist.get(key, Fraction(0)) + value


@dataclass
class ReportAccumulator:
    """Order-independent aggregation of weighted outcomes."""

    moments: Moments = field(default_factory=Moments)
    miles: Fraction = Fraction(0)
    weighted_miles: Fraction = Fraction(0)
    ineffective: int = 0
    crash_types: dict = field(default_factory=dict)
    severities: dict = field(default_factory=dict)
    locations: dict = field(default_factory=dict)

    def add(self, o: WeightedOutcome) -> None:
        if not o.effective:
            self.ineffective += 1
            return
        x = o.weight if o.crash else 0.0
        self.moments.add(x)
        self.miles += Fraction(o.miles)
        self.weighted_miles += Fraction(o.weight) * Fraction(o.miles)
        if o.crash:
            f = Fraction(o.weight)
            _add(self.crash_types, o.crash_type or "unknown", f)
            _add(self.severities, int(o.severity) if o.severity is not None else 0, f)
            _add(self.locations, o.location_class or "unknown", f)

    def merge(self, other: "ReportAccumulator") -> "ReportAccumulator":
        out = ReportAccumulator(self.moments.merge(other.moments), self.miles + other.miles,
                                self.weighted_miles + other.weighted_miles,
                                self.ineffective + other.ineffective)
        for name in ("crash_types", "severities", "locations"):
            merged = dict(getattr(self, name))
            for k, v in getattr(other, name).items():
                _add(merged, k, v)
            setattr(out, name, merged)
        return out

    def report(self, lap_miles: float | None = None, mode: str = "nade",
               threshold: float = DEFAULT_THRESHOLD, history=()) -> "SafetyReport":
        est = self.moments.estimate()
        per_mile = None
        if self.weighted_miles > 0:
            per_mile = float(self.moments.s1 / self.weighted_miles)
        per_lap_mile = est.p_hat / lap_miles if lap_miles else None
        n = self.moments.n

        def norm(h):
            return {str(k): float(v) for k, v in sorted(h.items())}

        return SafetyReport(
            mode=mode, n=n, n_ineffective=self.ineffective, p_hat=est.p_hat, stderr=est.stderr,
            ci_low=est.ci_low, ci_high=est.ci_high, rel_half_width=est.rel_half_width,
            crash_rate_per_mile=per_mile, crash_rate_per_lap_mile=per_lap_mile,
            miles=float(self.miles), crash_mass=float(self.moments.s1),
            crash_types=norm(self.crash_types), severities=norm(self.severities),
            locations=norm(self.locations), threshold=threshold,
            converged=converged(history, threshold) if history else False)


def accumulate(outcomes) -> ReportAccumulator:
    acc = ReportAccumulator()
    for o in outcomes:
        acc.add(o)
    return acc


# ---------------------------------------------------------------- report
@dataclass(frozen=True)
class SafetyReport:
    mode: str
    n: int  # effective episodes
    n_ineffective: int
    p_hat: float
    stderr: float
    ci_low: float
    ci_high: float
    rel_half_width: float | None
    crash_rate_per_mile: float | None  # weighted crashes / weighted miles
    crash_rate_per_lap_mile: float | None  # p_hat / lap length
    miles: float  # unweighted AV miles driven in simulation
    crash_mass: float  # total weighted crashes, sum of I * W
    crash_types: dict
    severities: dict
    locations: dict
    threshold: float = DEFAULT_THRESHOLD
    converged: bool = False

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["threshold_note"] = "convergence threshold is an invented default"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def load(cls, path) -> "SafetyReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def histograms(self) -> dict:
        return {"crash_type": self.crash_types, "severity": self.severities, "location": self.locations}

    def write_histograms(self, directory) -> list[Path]:
        """One CSV per histogram with columns ``bin, weighted_count``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, hist in self.histograms().items():
            p = directory / f"{name}_histogram.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin", "weighted_count"])
                for k, v in hist.items():
                    w.writerow([k, repr(v)])
            paths.append(p)
        return paths
