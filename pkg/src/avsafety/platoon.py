"""Vectorized IDM platoon on a ring road.

A closed loop of identical IDM drivers is the classic stress test for a
car-following model: with no errors the platoon must stay collision-free,
and adding lead-vehicle neglect must produce crashes at a rate that falls
with the neglect probability. The dynamics mirror the per-vehicle model
(same IDM, same ballistic update, same neglect semantics) but run on arrays
so that 10^5-step rollouts take seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .behavior import PRESETS, ErrorModel, IdmParams, idm_equilibrium_speed
from .rng import stream


def idm_accel_array(v, gap, v_lead, p: IdmParams, v0: float, b_emergency: float = 8.0, attend=None):
    """Array IDM; where ``attend`` is False the leader term is dropped (free road)."""
    acc = p.a_max * (1.0 - (np.maximum(v, 0.0) / v0) ** p.delta)
    s_star = p.s0 + np.maximum(0.0, v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf)))
    inter = p.a_max * (s_star / np.maximum(gap, 1e-9)) ** 2
    if attend is not None:
        inter = np.where(attend, inter, 0.0)
    acc = acc - inter
    acc = np.where((gap <= 0) & (attend if attend is not None else True), -b_emergency, acc)
    return np.clip(acc, -b_emergency, p.a_max)


@dataclass
class PlatoonResult:
    steps: int
    crashes: int
    min_gap: float
    neglect_events: int

    @property
    def crash_rate(self) -> float:
        """Crashes per simulated step."""
        return self.crashes / self.steps


def equilibrium_platoon(n: int, ring_length: float, length: float, p: IdmParams, v0: float):
    """Evenly spaced positions (front bumpers) and the matching equilibrium speed."""
    spacing = ring_length / n
    gap = spacing - length
    if gap <= 0:
        raise ValueError("ring too short for the platoon")
    v = idm_equilibrium_speed(gap, p, v0)
    return np.arange(n) * spacing, np.full(n, v), gap


def platoon_rollout(n: int = 10, ring_length: float = 150.0, steps: int = 100_000, dt: float = 0.1,
                    params: IdmParams | None = None, errors: ErrorModel | None = None, seed: int = 0,
                    length: float = 4.8, b_emergency: float = 8.0, v0: float | None = None,
                    replicas: int = 1) -> PlatoonResult:
    """Simulate ``replicas`` independent rings for ``steps`` steps each.

    Vehicle ``i`` follows vehicle ``i + 1`` (mod n). A crash (negative gap)
    is counted and that ring reset to equilibrium. Only lead-vehicle neglect
    matters on a ring; other stimulus classes are ignored.
    """
    p = params or PRESETS["urban-calm"]
    v0 = p.v0 if v0 is None else v0
    errors = errors or ErrorModel()
    rng = stream(seed, "platoon")
    x0, vel0, _ = equilibrium_platoon(n, ring_length, length, p, v0)
    shape = (replicas, n)
    x, v = np.broadcast_to(x0, shape).copy(), np.broadcast_to(vel0, shape).copy()
    neglect = np.zeros(shape)  # remaining neglect time
    p_err = errors.lead_vehicle
    crashes, events, min_gap = 0, 0, math.inf
    for _ in range(steps):
        ahead = np.roll(x, -1, axis=1)
        gap = (ahead - x) % ring_length - length
        if p_err > 0:
            start = (neglect <= 1e-9) & (rng.random(shape) < p_err)
            events += int(start.sum())
            neglect = np.where(start, errors.duration, neglect)
        attend = neglect <= 1e-9
        a = idm_accel_array(v, gap, np.roll(v, -1, axis=1), p, v0, b_emergency, attend)
        vn = v + a * dt
        stopped = vn < 0
        ds = np.where(stopped, v * v / np.maximum(-2.0 * a, 1e-12), v * dt + 0.5 * a * dt * dt)
        x = (x + ds) % ring_length
        v = np.where(stopped, 0.0, vn)
        neglect = np.maximum(neglect - dt, 0.0)
        # an overtaken leader shows up as a gap close to the ring length
        space = (np.roll(x, -1, axis=1) - x) % ring_length
        gap = np.where(space > ring_length - length, space - ring_length, space) - length
        g = gap.min(axis=1)
        min_gap = min(min_gap, float(g.min()))
        hit = g < 0
        if hit.any():
            crashes += int(hit.sum())
            x[hit], v[hit], neglect[hit] = x0, vel0, 0.0
    return PlatoonResult(steps * replicas, crashes, min_gap, events)
