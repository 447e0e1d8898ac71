"""Naturalistic background-vehicle behavior.

IDM car-following, a gap-acceptance lane-change rule, and a human error model
that makes a driver ignore a class of stimuli for a while. The output of the
model is an explicit discrete action distribution (:class:`BehaviorPmf`), which
is what the importance-sampling machinery needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .road import RoadNetwork, lane_index, leader_along_route, signal_state

LATERAL = ("keep", "begin_left", "begin_right")
STIMULI = ("lead_vehicle", "signal", "conflict_traffic")


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.4
    T: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        for k in ("v0", "T", "a_max", "b_comf", "s0", "delta"):
            if not getattr(self, k) > 0:
                raise ValueError(f"IDM parameter {k} must be positive")
        if self.delta < 1:
            raise ValueError("IDM delta must be >= 1")


# Standard literature-range values; override through a preset file.
PRESETS = {
    "urban-calm": IdmParams(v0=13.4, T=1.6, a_max=1.2, b_comf=2.0, s0=2.5, delta=4.0),
    "urban-assertive": IdmParams(v0=15.6, T=1.1, a_max=1.8, b_comf=2.5, s0=1.5, delta=4.0),
}


@dataclass(frozen=True)
class ActionSpace:
    accels: tuple = (-8.0, -6.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)
    laterals: tuple = LATERAL

    def __post_init__(self):
        a = self.accels
        if len(a) < 3 or any(y <= x for x, y in zip(a, a[1:])) or 0.0 not in a:
            raise ValueError("accel grid must be strictly increasing, contain 0 and have >= 3 cells")

    @property
    def n_accel(self) -> int:
        return len(self.accels)

    @property
    def size(self) -> int:
        return len(self.accels) * len(self.laterals)

    def index(self, accel_idx: int, lateral: str = "keep") -> int:
        return self.laterals.index(lateral) * self.n_accel + accel_idx

    def decode(self, action: int) -> tuple[float, str]:
        lat, acc = divmod(int(action), self.n_accel)
        return self.accels[acc], self.laterals[lat]

    def snap(self, accel: float) -> int:
        """Index of the grid cell nearest to ``accel`` (ties to the lower cell)."""
        best, best_d = 0, math.inf
        for i, a in enumerate(self.accels):
            d = abs(a - accel)
            if d < best_d - 1e-12:
                best, best_d = i, d
        return best


@dataclass(frozen=True)
class ErrorModel:
    """Per-step probability of starting to neglect a stimulus class."""

    lead_vehicle: float = 0.0
    signal: float = 0.0
    conflict_traffic: float = 0.0
    duration: float = 2.0

    def __post_init__(self):
        ps = (self.lead_vehicle, self.signal, self.conflict_traffic)
        if any(p < 0 or p > 1 for p in ps) or sum(ps) > 1 + 1e-12:
            raise ValueError("error probabilities must lie in [0, 1] and sum to <= 1")
        if self.duration <= 0:
            raise ValueError("neglect duration must be positive")

    def scaled(self, k: float) -> "ErrorModel":
        return replace(self, lead_vehicle=self.lead_vehicle * k, signal=self.signal * k,
                       conflict_traffic=self.conflict_traffic * k)


@dataclass(frozen=True)
class ErrorState:
    neglecting: str | None = None
    remaining: float = 0.0


ATTENTIVE = ErrorState()


@dataclass(frozen=True)
class LaneChangeConfig:
    duration: float = 3.0
    min_gap: float = 2.0
    lead_time: float = 1.0  # s of closing speed to add to the lead-gap threshold
    lag_time: float = 1.5
    incentive: float = 0.3  # m/s^2 accel gain that motivates a change
    rate: float = 0.03  # per-step probability when feasible and motivated
    base_rate: float = 0.0005  # per-step probability when feasible, unmotivated
    tail_rate: float = 1e-5  # per-step probability of an unsafe (infeasible) change
    min_remaining: float = 10.0  # lane length that must remain beyond the maneuver
    min_speed: float = 2.0  # no lateral maneuvers below this speed (m/s)


@dataclass(frozen=True)
class BehaviorConfig:
    populations: dict = field(default_factory=lambda: {"urban-calm": 0.6, "urban-assertive": 0.4})
    params: dict = field(default_factory=lambda: dict(PRESETS))
    actions: ActionSpace = field(default_factory=ActionSpace)
    kernel: tuple = (0.1, 0.8, 0.1)
    tail_mass: float = 1e-4
    errors: ErrorModel = field(default_factory=ErrorModel)
    lane_change: LaneChangeConfig = field(default_factory=LaneChangeConfig)
    b_emergency: float = 8.0
    leader_horizon: float = 200.0
    signal_lookahead: float = 80.0
    yield_lookahead: float = 60.0
    yield_gap: float = 3.0  # s of clearance required from priority traffic
    speed_jitter: float = 1.0
    maneuver_hold: float = 1.0  # s a tail acceleration, once drawn, is held
    vehicle_length: float = 4.8
    vehicle_width: float = 2.0

    def __post_init__(self):
        k = self.kernel
        if len(k) % 2 != 1 or any(w < 0 for w in k) or abs(sum(k) - 1) > 1e-12:
            raise ValueError("kernel must have odd length, non-negative weights summing to 1")
        if k[len(k) // 2] <= 0:
            raise ValueError("kernel center weight must be positive")
        if not 0 <= self.tail_mass < 1:
            raise ValueError("tail_mass must lie in [0, 1)")
        if abs(sum(self.populations.values()) - 1) > 1e-9:
            raise ValueError("population shares must sum to 1")

    def idm(self, population: str) -> IdmParams:
        return self.params[population]


@dataclass
class BehaviorPmf:
    """Distribution over the flat action index of an :class:`ActionSpace`."""

    probs: np.ndarray
    vehicle: str | None = None
    recommended: int | None = None  # flat index of the deterministic recommendation

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)

    def __getitem__(self, action: int) -> float:
        return float(self.probs[action])

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def sample(self, u: float) -> int:
        """Inverse-CDF draw for a uniform ``u`` in [0, 1)."""
        c = np.cumsum(self.probs)
        i = int(np.searchsorted(c, u * c[-1], side="right"))
        i = min(i, len(c) - 1)
        while self.probs[i] <= 0:  # guard against landing on a zero cell through rounding
            i -= 1
        return i


# ------------------------------------------------------------------------ IDM


def idm_accel(v, gap, v_leader, params: IdmParams, v0: float | None = None, b_emergency: float = 8.0) -> float:
    """IDM acceleration, clamped to ``[-b_emergency, a_max]``.

    ``gap`` and ``v_leader`` are None in free flow. A non-positive gap returns
    the emergency bound.
    """
    vals = [v] + ([gap, v_leader] if gap is not None else [])
    if not all(math.isfinite(x) for x in vals):
        raise ValueError("non-finite IDM input")
    p = params
    v0 = p.v0 if v0 is None else v0
    acc = p.a_max * (1.0 - (max(v, 0.0) / v0) ** p.delta)
    if gap is not None:
        if gap <= 0:
            return -b_emergency
        s_star = p.s0 + max(0.0, v * p.T + v * (v - v_leader) / (2.0 * math.sqrt(p.a_max * p.b_comf)))
        acc -= p.a_max * (s_star / max(gap, 1e-9)) ** 2
    return min(max(acc, -b_emergency), p.a_max)


def idm_equilibrium_gap(v: float, params: IdmParams, v0: float | None = None) -> float:
    """Closed-form steady-state gap at speed ``v`` behind a leader at ``v``."""
    v0 = params.v0 if v0 is None else v0
    r = 1.0 - (v / v0) ** params.delta
    if r <= 0:
        return math.inf
    return (params.s0 + v * params.T) / math.sqrt(r)


def idm_equilibrium_speed(gap: float, params: IdmParams, v0: float | None = None) -> float:
    """Speed at which ``gap`` is the steady-state spacing (bisection)."""
    v0 = params.v0 if v0 is None else v0
    if gap <= params.s0:
        return 0.0
    lo, hi = 0.0, v0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if idm_equilibrium_gap(mid, params, v0) < gap:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------- error model


def step_error_state(state: ErrorState, u: float | None, model: ErrorModel, dt: float = 0.1):
    """Advance one vehicle's error state.

    ``u`` is a uniform draw (only consumed while attentive and some trigger
    probability is positive). Returns ``(new_state, probability of the realized
    transition)``.
    """
    if state.neglecting is not None:
        rem = state.remaining - dt
        if rem <= 1e-9:
            return ATTENTIVE, 1.0
        return ErrorState(state.neglecting, rem), 1.0
    ps = (model.lead_vehicle, model.signal, model.conflict_traffic)
    total = sum(ps)
    if total <= 0:
        return ATTENTIVE, 1.0
    acc = 0.0
    for cls, p in zip(STIMULI, ps):
        acc += p
        if p > 0 and u < acc:
            return ErrorState(cls, model.duration), p
    return ATTENTIVE, 1.0 - total


def needs_error_draw(state: ErrorState, model: ErrorModel) -> bool:
    return state.neglecting is None and (model.lead_vehicle + model.signal + model.conflict_traffic) > 0


# ---------------------------------------------------------------- perception


@dataclass
class Perception:
    """What a driver reacts to this step, after masking neglected stimuli."""

    leader: tuple | None = None  # (gap, leader speed)
    stops: list = field(default_factory=list)  # virtual stationary obstacles: gaps
    lane_options: dict = field(default_factory=dict)  # direction -> (feasible, incentive)
    lc_locked: bool = False


def _lc_target_lane(network, veh, direction):
    lane = network.lanes[veh.lane]
    return lane.left_neighbor if direction == "left" else lane.right_neighbor


def lane_change_feasible(network: RoadNetwork, vehicles, vid, direction: str, cfg: BehaviorConfig,
                         index=None, ignore_traffic: bool = False):
    """Gap-acceptance test for a change to the ``direction`` neighbor.

    Feasible iff the lead gap is at least ``min_gap + lead_time * max(0, v - v_lead)``
    and the lag gap at least ``min_gap + lag_time * max(0, v_lag - v)``
    (closed inequalities). Returns ``(feasible, info)``.
    """
    veh = vehicles[vid]
    target = _lc_target_lane(network, veh, direction)
    if target is None:
        raise ValueError(f"no {direction} neighbor for lane {veh.lane}")
    lc = cfg.lane_change
    tl = network.lanes[target]
    arc_t, _ = tl.polyline.project((veh.x, veh.y))
    info = {"target": target, "arc": arc_t, "lead": None, "lag": None,
            "lead_gap": math.inf, "lag_gap": math.inf}
    if ignore_traffic:
        return True, info
    if index is None:
        index = lane_index(vehicles)
    half = veh.length / 2.0
    lead_gap = lag_gap = math.inf
    lead = lag = None
    for arc, oid in index.get(target, ()):
        if oid == vid:
            continue
        o = vehicles[oid]
        if arc >= arc_t:
            g = arc - arc_t - o.length / 2.0 - half
            if g < lead_gap:
                lead_gap, lead = g, o
        else:
            g = arc_t - arc - o.length / 2.0 - half
            if g < lag_gap:
                lag_gap, lag = g, o
    ok = True
    if lead is not None:
        need = lc.min_gap + lc.lead_time * max(0.0, veh.speed - lead.speed)
        ok &= lead_gap >= need
    if lag is not None:
        need = lc.min_gap + lc.lag_time * max(0.0, lag.speed - veh.speed)
        ok &= lag_gap >= need
    info.update(lead=lead.id if lead else None, lag=lag.id if lag else None,
                lead_gap=lead_gap, lag_gap=lag_gap, lead_speed=lead.speed if lead else None)
    return bool(ok), info


class BehaviorModel:
    """Binds a network and a behavior config; computes per-vehicle pmfs."""

    def __init__(self, network: RoadNetwork, cfg: BehaviorConfig | None = None):
        self.network = network
        self.cfg = cfg or BehaviorConfig()

    # -- situation -------------------------------------------------------
    def perceive(self, state, vid, index=None) -> Perception:
        net, cfg = self.network, self.cfg
        veh = state.vehicles[vid]
        if index is None:
            index = lane_index(state.vehicles)
        neglect = veh.error.neglecting
        per = Perception()
        if neglect != "lead_vehicle":
            lanes = [(veh.lane, veh.arc)]
            if veh.lc_dir:
                lanes.append((veh.lc_target, veh.arc + veh.lc_shift))
            found = leader_along_route(net, state.vehicles, vid, cfg.leader_horizon, index, lanes)
            if found is not None:
                lid, gap = found
                per.leader = (gap, state.vehicles[lid].speed)
        if neglect != "signal":
            g = self._signal_stop(state, veh)
            if g is not None:
                per.stops.append(g)
        if neglect != "conflict_traffic":
            g = self._yield_stop(state, veh, index)
            if g is not None:
                per.stops.append(g)
        per.lc_locked = bool(veh.lc_dir)
        if not veh.lc_dir and veh.kind == "bv" and veh.speed >= cfg.lane_change.min_speed:
            lane = net.lanes[veh.lane]
            remaining = lane.length - veh.arc
            for direction in ("left", "right"):
                target = lane.left_neighbor if direction == "left" else lane.right_neighbor
                if target is None:
                    continue
                if remaining < veh.speed * cfg.lane_change.duration + cfg.lane_change.min_remaining:
                    continue
                feas, info = lane_change_feasible(net, state.vehicles, vid, direction, cfg, index,
                                                  ignore_traffic=(neglect == "conflict_traffic"))
                incentive = False
                if feas:
                    here = self._idm(veh, per.leader, [])
                    lead_t = None
                    if info.get("lead") is not None:
                        lead_t = (info["lead_gap"], info["lead_speed"])
                    there = self._idm(veh, lead_t, [])
                    incentive = there - here >= cfg.lane_change.incentive
                per.lane_options[direction] = (feas, incentive)
        return per

    def _signal_stop(self, state, veh):
        """Gap to a red (or stoppable yellow) stop line ahead, or None."""
        net = self.network
        dist = net.lanes[veh.lane].length - veh.arc - veh.length / 2.0
        for lid in _route_lanes(net, veh)[1:]:
            if dist > self.cfg.signal_lookahead:
                return None
            lane = net.lanes[lid]
            if lane.movement is not None:
                st = signal_state(net, lane.movement, state.time)
                b = self.cfg.idm(veh.population).b_comf
                if st == "red" or (st == "yellow" and dist >= veh.speed ** 2 / (2 * b)):
                    return max(dist, 0.0)
                return None
            dist += lane.length
        return None

    def _yield_stop(self, state, veh, index):
        """Gap to the entry of the first conflict zone where we must yield, or None."""
        net = self.network
        cfg = self.cfg
        dist_to_lane = -veh.arc
        for k, lid in enumerate(_route_lanes(net, veh)):
            if dist_to_lane > cfg.yield_lookahead:
                return None
            for z in net.zones_by_lane.get(lid, ()):
                prio = z.priority_lane()
                if prio == lid:
                    continue
                (s0, s1), other, (o0, o1) = z.side(lid)
                d_entry = dist_to_lane + s0 - veh.length / 2.0
                d_exit = dist_to_lane + s1 + veh.length / 2.0
                if d_exit < 0:
                    continue  # already cleared
                if d_entry < 0:
                    continue  # committed: inside the zone
                if d_entry > cfg.yield_lookahead:
                    continue
                # cannot stop comfortably any more: proceed
                if d_entry < veh.speed ** 2 / (2 * cfg.b_emergency * 0.6):
                    continue
                if prio is None:
                    # signal-controlled: let vehicles already in the box clear it
                    if k > 0:
                        if _occupying(state, index, other, o1):
                            return max(d_entry, 0.0)
                    elif _ahead_in_box(state, index, other, o0, o1, d_entry, veh.id):
                        return max(d_entry, 0.0)
                    continue
                v = max(veh.speed, 0.5)
                t_clear = d_exit / v + 1.0
                if _priority_conflict(net, state, other, o0, o1, t_clear + cfg.yield_gap, index):
                    return max(d_entry, 0.0)
            dist_to_lane += net.lanes[lid].length
        return None

    # -- recommendation ----------------------------------------------------
    def _v0(self, veh) -> float:
        p = self.cfg.idm(veh.population)
        return min(p.v0, self.network.lanes[veh.lane].speed_limit * 1.1)

    def _idm(self, veh, leader, stops) -> float:
        p = self.cfg.idm(veh.population)
        v0 = self._v0(veh)
        be = self.cfg.b_emergency
        acc = idm_accel(veh.speed, None, None, p, v0, be)
        if leader is not None:
            acc = min(acc, idm_accel(veh.speed, leader[0], leader[1], p, v0, be))
        for g in stops:
            acc = min(acc, idm_accel(veh.speed, g, 0.0, p, v0, be))
        return acc

    def recommendation(self, state, vid, index=None, perception=None) -> float:
        per = perception or self.perceive(state, vid, index)
        return self._idm(state.vehicles[vid], per.leader, per.stops)

    def pmf(self, state, vid, index=None, perception=None) -> BehaviorPmf:
        """Naturalistic action distribution P(u|s) for vehicle ``vid``."""
        cfg = self.cfg
        space = cfg.actions
        veh = state.vehicles[vid]
        if veh.maneuver is not None:
            probs = np.zeros(space.size)
            probs[space.index(veh.maneuver[0])] = 1.0
            return BehaviorPmf(probs, vid, space.index(veh.maneuver[0]))
        per = perception or self.perceive(state, vid, index)
        acc = self._idm(state.vehicles[vid], per.leader, per.stops)
        accel_p = accel_pmf(space, acc, cfg.kernel, cfg.tail_mass)
        lat_p = np.zeros(len(space.laterals))
        if per.lc_locked:
            lat_p[0] = 1.0
        else:
            lc = cfg.lane_change
            for direction, name in (("left", "begin_left"), ("right", "begin_right")):
                if direction not in per.lane_options or name not in space.laterals:
                    continue
                feas, inc = per.lane_options[direction]
                p = (lc.rate if inc else lc.base_rate) if feas else lc.tail_rate
                lat_p[space.laterals.index(name)] = p
            lat_p[0] = 1.0 - lat_p.sum()
        probs = np.outer(lat_p, accel_p).ravel()
        probs /= probs.sum()
        return BehaviorPmf(probs, vid, space.index(space.snap(acc)))


def starts_maneuver(space: ActionSpace, pmf: BehaviorPmf, action: int, kernel=(0.1, 0.8, 0.1)) -> bool:
    """True if ``action`` lies outside the kernel window around the recommendation."""
    if pmf.recommended is None:
        return False
    rec = pmf.recommended % space.n_accel
    return abs(action % space.n_accel - rec) > len(kernel) // 2


def accel_pmf(space: ActionSpace, accel: float, kernel=(0.1, 0.8, 0.1), tail_mass: float = 0.0) -> np.ndarray:
    """Kernel around the grid cell nearest ``accel`` plus a uniform tail floor."""
    n = space.n_accel
    c = space.snap(accel)
    half = len(kernel) // 2
    p = np.zeros(n)
    for k, w in enumerate(kernel):
        j = c + k - half
        if 0 <= j < n:
            p[j] += w
    p /= p.sum()
    if tail_mass > 0:
        p = (1.0 - tail_mass) * p + tail_mass / n
    return p


def _route_lanes(net, veh, limit=6):
    out = []
    i = veh.route_index
    lid = veh.lane
    out.append(lid)
    route = veh.route
    while len(out) < limit:
        i += 1
        if i < len(route):
            lid = route[i]
        else:
            lid = net.default_successor[lid]
            if lid is None:
                break
        out.append(lid)
    return out


def _occupying(state, index, lane_id, s1):
    """True if a vehicle on ``lane_id`` has not yet cleared arc ``s1``."""
    for arc, oid in index.get(lane_id, ()):
        if arc - state.vehicles[oid].length / 2.0 <= s1:
            return True
    return False


def _ahead_in_box(state, index, lane_id, o0, o1, d_entry, vid):
    """True if a vehicle on ``lane_id`` is nearer to the shared zone than we are.

    Ordering by (distance to zone, id) is strict, so two vehicles never wait
    for each other.
    """
    for arc, oid in index.get(lane_id, ()):
        o = state.vehicles[oid]
        if arc - o.length / 2.0 > o1:
            continue
        d = max(o0 - arc - o.length / 2.0, 0.0)
        if (d, oid) < (d_entry, vid):
            return True
    return False


def _priority_conflict(net, state, lane_id, s0, s1, window, index):
    """True if a vehicle on ``lane_id`` (or upstream) is in or reaches [s0, s1] within ``window`` s.

    Upstream vehicles held by a red signal do not count.
    """
    for arc, oid in index.get(lane_id, ()):
        o = state.vehicles[oid]
        front, rear = arc + o.length / 2.0, arc - o.length / 2.0
        if rear <= s1 and front >= s0:
            return True
        if front < s0 and (s0 - front) <= max(o.speed, 0.0) * window:
            return True
    lane = net.lanes[lane_id]
    if lane.movement is not None and signal_state(net, lane.movement, state.time) == "red":
        return False
    reach_back = s0
    for pid in net.predecessors.get(lane_id, ()):
        pl = net.lanes[pid]
        for arc, oid in index.get(pid, ()):
            o = state.vehicles[oid]
            if o.route_index + 1 < len(o.route) and o.route[o.route_index + 1] != lane_id:
                continue
            if o.route_index + 1 >= len(o.route) and net.default_successor[pid] not in (None, lane_id):
                continue
            d = pl.length - arc - o.length / 2.0 + reach_back
            if d <= max(o.speed, 0.0) * window:
                return True
    return False


# ---------------------------------------------------------------- presets I/O


def behavior_from_dict(d: dict | None) -> BehaviorConfig:
    """Build a :class:`BehaviorConfig` from a preset-file mapping.

    Keys: ``populations`` (name -> share), ``params`` (name -> IdmParams
    fields), ``accels``, ``kernel``, ``tail_mass``, ``errors`` (ErrorModel
    fields), ``lane_change`` (LaneChangeConfig fields), plus scalar fields of
    :class:`BehaviorConfig`.
    """
    d = dict(d or {})
    kw = {}
    if "params" in d:
        params = dict(PRESETS)
        for name, p in d.pop("params").items():
            base = PRESETS.get(name, IdmParams())
            params[name] = replace(base, **p)
        kw["params"] = params
    if "populations" in d:
        kw["populations"] = dict(d.pop("populations"))
    if "accels" in d:
        kw["actions"] = ActionSpace(tuple(float(a) for a in d.pop("accels")))
    if "kernel" in d:
        kw["kernel"] = tuple(float(k) for k in d.pop("kernel"))
    if "errors" in d:
        kw["errors"] = ErrorModel(**d.pop("errors"))
    if "lane_change" in d:
        kw["lane_change"] = LaneChangeConfig(**d.pop("lane_change"))
    kw.update(d)
    return BehaviorConfig(**kw)


def behavior_to_dict(cfg: BehaviorConfig) -> dict:
    from dataclasses import asdict

    return {
        "populations": dict(cfg.populations),
        "params": {k: asdict(v) for k, v in cfg.params.items()},
        "accels": list(cfg.actions.accels),
        "kernel": list(cfg.kernel),
        "tail_mass": cfg.tail_mass,
        "errors": asdict(cfg.errors),
        "lane_change": asdict(cfg.lane_change),
        "b_emergency": cfg.b_emergency,
        "leader_horizon": cfg.leader_horizon,
        "signal_lookahead": cfg.signal_lookahead,
        "yield_lookahead": cfg.yield_lookahead,
        "yield_gap": cfg.yield_gap,
        "speed_jitter": cfg.speed_jitter,
        "maneuver_hold": cfg.maneuver_hold,
        "vehicle_length": cfg.vehicle_length,
        "vehicle_width": cfg.vehicle_width,
    }


def load_behavior(path) -> BehaviorConfig:
    with open(Path(path)) as fh:
        return behavior_from_dict(yaml.safe_load(fh))


def calibrate_error_scale(crash_rate_fn, target: float, lo: float = 0.0, hi: float = 1.0,
                          iters: int = 20, rtol: float = 0.05) -> float:
    """Bisect a multiplier on the error probabilities to hit ``target`` crash rate.

    ``crash_rate_fn(scale)`` must be non-decreasing in ``scale``. This is a
    convenience search, not a calibration procedure against crash records.
    """
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        r = crash_rate_fn(mid)
        if abs(r - target) <= rtol * target:
            return mid
        if r < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
