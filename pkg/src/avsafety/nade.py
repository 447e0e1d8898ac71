"""Adversarial environment construction by importance sampling.

Per step, every background vehicle near the AV gets a criticality
``C_j = sum_u P(u|s) * challenge(u)``. The most critical one becomes the
principal other vehicle (POV); its action distribution is replaced by an
amplified one while everybody else stays naturalistic. The episode weight
``W = prod P(u|s) / q(u|s)`` keeps the crash-rate estimate unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NadeError(RuntimeError):
    pass


@dataclass(frozen=True)
class NadeConfig:
    epsilon: float = 3000.0
    caps: dict = field(default_factory=lambda: {"intersection": 0.1, "other": 0.01})
    budget: float = 0.9  # max total importance mass on critical actions
    radius: float | None = None  # interaction radius (m); None = kinematic reach bound

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if any(not 0 < c < 1 for c in self.caps.values()):
            raise ValueError("caps must lie in (0, 1)")
        if "other" not in self.caps:
            raise ValueError("caps needs an 'other' entry")
        if not 0 < self.budget < 1:
            raise ValueError("budget must lie in (0, 1)")

    @property
    def enabled(self) -> bool:
        return self.epsilon > 0

    def cap(self, location_class: str) -> float:
        return self.caps.get(location_class, self.caps["other"])


@dataclass
class CriticalityRow:
    vehicle: str
    V: np.ndarray  # maneuver criticality per flat action index
    C: float
    location_class: str = "other"


@dataclass
class CriticalityRecord:
    time: float
    rows: dict  # vehicle id -> CriticalityRow
    pov: str | None = None


def vehicle_criticality(vehicle: str, probs, challenges, location_class: str = "other") -> CriticalityRow:
    """``V(u) = P(u|s) * challenge(u)`` and ``C = sum_u V(u)``."""
    probs = np.asarray(probs, float)
    ch = np.asarray(challenges, float)
    V = probs * ch
    return CriticalityRow(vehicle, V, math.fsum(V.tolist()), location_class)


def select_pov(rows) -> str | None:
    """Argmax of C over rows with C > 0; ties go to the lowest vehicle id."""
    best = None
    for vid in sorted(r.vehicle for r in (rows.values() if isinstance(rows, dict) else rows)):
        row = rows[vid] if isinstance(rows, dict) else next(r for r in rows if r.vehicle == vid)
        if row.C > 0 and (best is None or row.C > best[1]):
            best = (vid, row.C)
    return None if best is None else best[0]


def importance_pmf(probs, V, cap: float, cfg: NadeConfig) -> np.ndarray:
    """Importance distribution of the POV.

    Amplified actions are the critical ones (V > 0) whose naturalistic
    probability is below the cap; each gets ``max(P, min(cap, epsilon * V))``.
    If their total exceeds ``cfg.budget`` they are scaled down to it. The
    remaining mass goes to all other actions in proportion to P, so q > 0
    wherever P > 0. Critical actions that are already common keep their
    naturalistic share instead of being suppressed to the cap.
    """
    P = np.asarray(probs, float)
    V = np.asarray(V, float)
    if not (V > 0).any():
        raise NadeError("importance_pmf needs at least one critical action (C > 0)")
    if not cfg.enabled:
        return P.copy()
    amp = (V > 0) & (P < cap)
    if not amp.any():
        return P.copy()
    raw = np.where(amp, np.maximum(P, np.minimum(cap, cfg.epsilon * V)), 0.0)
    total = raw.sum()
    if total > cfg.budget:
        raw *= cfg.budget / total
        total = raw.sum()
    rest = (~amp) & (P > 0)
    q = raw.copy()
    if rest.any():
        q[rest] = (1.0 - total) * P[rest] / P[rest].sum()
    else:
        q = raw / total
    return q


def joint_importance_pmf(pmfs: dict, pov: str | None, q_pov=None) -> dict:
    """Per-vehicle distributions: importance for the POV, naturalistic for all others."""
    out = {vid: np.asarray(p, float) for vid, p in pmfs.items()}
    if pov is not None:
        out[pov] = np.asarray(q_pov, float)
    return out


def joint_log_ratio(actions: dict, P: dict, Q: dict) -> float:
    """log P(u|s) - log q(u|s) for a joint action; non-POV factors cancel to 0."""
    return math.fsum(math.log(P[v][a]) - math.log(Q[v][a]) for v, a in actions.items())


@dataclass
class LikelihoodRatio:
    log_weight: float = 0.0
    factors: list = field(default_factory=list)  # per-step log factors

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


def update_weight(lr: LikelihoodRatio, chosen: int, p_pmf, q_pmf) -> LikelihoodRatio:
    """Accumulate one step's ratio P(chosen) / q(chosen) in log space."""
    p = float(p_pmf[chosen])
    q = float(q_pmf[chosen])
    if q <= 0:
        raise NadeError(f"importance probability of the chosen action is {q}; absolute continuity violated")
    f = 0.0 if p == q else math.log(p) - math.log(q)
    factors = lr.factors + [f]
    return LikelihoodRatio(math.fsum(factors), factors)


def interaction_radius(cfg: NadeConfig, horizon: float, v_max_av: float, v_max_bv: float,
                       a_max: float = 3.0, size: float = 6.0) -> float:
    """Distance beyond which no background vehicle can reach the AV within the horizon."""
    if cfg.radius is not None:
        return cfg.radius
    reach = (v_max_av + v_max_bv) * horizon + a_max * horizon ** 2
    return reach + size
