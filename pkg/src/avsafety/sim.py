"""Discrete-time traffic simulation: kinematics, crash handling and episodes.

An episode places the AV at the start of a route, spawns background traffic,
and advances in fixed steps. Each step the policy under test returns a
command, every background vehicle draws an action from its naturalistic pmf
(or, for the principal other vehicle in NADE mode, from the importance pmf),
and the world is integrated forward. The trace keeps every quantity needed to
recompute the likelihood ratio and to replay the run bit for bit.
"""

from __future__ import annotations

import bisect
import copy
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .behavior import ATTENTIVE, BehaviorModel, ErrorState, behavior_from_dict, idm_equilibrium_speed, \
    needs_error_draw, starts_maneuver, step_error_state
from .geometry import box_corners, boxes_overlap, overlap_centroid, wrap_angle
from .nade import NadeConfig, importance_pmf, select_pov, vehicle_criticality
from .policies import SENSING_RADIUS, AvCommand, Observation, PolicyError
from .rng import derived_int, stream
from .road import RoadNetwork, lane_index, leader_along_route, resolve_network, signal_state
from .surrogate import PathCache, SurrogateConfig, SurrogateContext

FORMAT_VERSION = 1
MPH_PER_MPS = 2.2369362920544
SEVERITY_EDGES = (5.0, 10.0, 15.0)  # mph, left-closed bins
CRASH_TYPES = ("rear_end", "head_on", "angle", "sideswipe")
TERMINATIONS = ("crash", "lap_complete", "horizon", "ineffective")
LC_DURATION = 3.0


class SimError(RuntimeError):
    pass


# ---------------------------------------------------------------- state


class ScriptPose(NamedTuple):
    x: float
    y: float
    heading: float
    speed: float
    lane: str | None = None
    arc: float = 0.0
    offset: float = 0.0
    lat_rate: float = 0.0


@dataclass(slots=True)
class Vehicle:
    id: str
    kind: str = "bv"  # av | bv | vru
    lane: str | None = None
    arc: float = 0.0
    offset: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    length: float = 4.8
    width: float = 2.0
    route: tuple = ()
    route_index: int = 0
    population: str = "urban-calm"
    error: ErrorState = ATTENTIVE
    lc_dir: int = 0  # +1 left, -1 right, 0 none
    lc_time: float = 0.0
    lc_target: str | None = None
    lc_shift: float = 0.0  # arc on target lane minus arc on current lane
    lc_span: float = 0.0
    lat_rate: float = 0.0
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    odometer: float = 0.0
    script: object = None  # open-loop trajectory with .at(t) -> ScriptPose
    in_crosswalk: bool = False
    maneuver: tuple | None = None  # (accel cell, remaining s) of a held tail acceleration

    def occupied(self):
        """(lane, arc) pairs this vehicle blocks; two while changing lanes."""
        if self.lane is None:
            return ()
        if self.lc_dir:
            return ((self.lane, self.arc), (self.lc_target, self.arc + self.lc_shift))
        return ((self.lane, self.arc),)

    def velocity(self):
        return (self.speed * math.cos(self.heading), self.speed * math.sin(self.heading))

    def corners(self):
        return box_corners(self.x, self.y, self.heading, self.length, self.width)

    def to_dict(self) -> dict:
        return {
            "id": self.id, "kind": self.kind, "lane": self.lane, "arc": self.arc, "offset": self.offset,
            "speed": self.speed, "length": self.length, "width": self.width, "route": list(self.route),
            "route_index": self.route_index, "population": self.population,
            "x": self.x, "y": self.y, "heading": self.heading,
        }


@dataclass
class WorldState:
    network: RoadNetwork
    time: float = 0.0  # also the signal clock
    vehicles: dict = field(default_factory=dict)
    exited: dict = field(default_factory=dict)  # vehicles that left the network in the last step

    def copy(self) -> "WorldState":
        return WorldState(self.network, self.time, {k: copy.copy(v) for k, v in self.vehicles.items()})

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<d", self.time))
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            h.update(vid.encode())
            h.update(struct.pack("<7d", v.x, v.y, v.heading, v.speed, v.arc, v.offset, v.accel))
        return h.hexdigest()


@dataclass(frozen=True)
class JointAction:
    """Background actions ``vid -> (accel, lateral)`` plus the AV command."""

    bv: dict
    av: tuple | None = None


def update_pose(network: RoadNetwork, v: Vehicle) -> None:
    if v.lane is None:
        return
    x, y, h = network.lanes[v.lane].polyline.pose(v.arc, v.offset)
    if v.lat_rate:
        h += math.atan2(v.lat_rate, max(v.speed, 1.0))
    v.x, v.y, v.heading = x, y, h


def lateral_offset(t: float, span: float, tau: float = LC_DURATION) -> float:
    """Sine lane-change profile: offset after ``t`` s of a ``span`` m change."""
    te = min(max(t, 0.0), tau)
    return span * 0.5 * (1.0 - math.cos(math.pi * te / tau))


def _lateral_rate(t, span, tau):
    if t >= tau:
        return 0.0
    return span * math.pi / (2 * tau) * math.sin(math.pi * t / tau)


def advance(v: float, a: float, dt: float):
    """(distance, new speed) of one step; a vehicle never reverses."""
    vn = v + a * dt
    if vn < 0.0:
        return (v * v / (2.0 * -a) if a < 0 else 0.0), 0.0
    return v * dt + 0.5 * a * dt * dt, vn


def _lc_allowed(network, v, target):
    if v.kind != "av":
        return True
    # the AV keeps its route: a change is honored only where it rejoins it
    nxt = v.route_index + 1
    return nxt >= len(v.route) or v.route[nxt] in network.lanes[target].successors


def _begin_lane_change(network, v, lateral) -> bool:
    lane = network.lanes[v.lane]
    target = lane.left_neighbor if lateral == "begin_left" else lane.right_neighbor
    if target is None or not _lc_allowed(network, v, target):
        return False
    tl = network.lanes[target]
    arc_t, _ = tl.polyline.project(lane.polyline.pose(v.arc)[:2])
    v.lc_dir = 1 if lateral == "begin_left" else -1
    v.lc_time = 0.0
    v.lc_target = target
    v.lc_shift = arc_t - v.arc
    v.lc_span = 0.5 * (lane.width + tl.width)
    return True


def _finish_lane_change(network, v) -> None:
    target = v.lc_target
    v.arc = min(max(v.arc + v.lc_shift, 0.0), network.lanes[target].length)
    if v.kind == "av":
        route = list(v.route)
        route[v.route_index] = target
        v.route = tuple(route)
    else:
        v.route, v.route_index = (target,), 0
    v.lane = target
    v.offset = 0.0
    v.lat_rate = 0.0
    v.lc_dir, v.lc_time, v.lc_target, v.lc_shift, v.lc_span = 0, 0.0, None, 0.0, 0.0


def step(state: WorldState, joint: JointAction, dt: float = 0.1, lc_duration: float = LC_DURATION) -> WorldState:
    """Advance the world by ``dt``.

    Longitudinal: ``v' = max(0, v + a dt)`` with the arc advanced by
    ``v dt + a dt^2 / 2`` (or the stopping distance if the vehicle stops within
    the step). Lateral: sine offset profile over ``lc_duration``. Vehicles that
    run off a lane without successor leave the network (listed in ``exited``).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    net = state.network
    new = state.copy()
    t1 = state.time + dt
    exited = []
    for vid in sorted(new.vehicles):
        v = new.vehicles[vid]
        if v.script is not None:
            p = v.script.at(t1)
            v.accel = (p.speed - v.speed) / dt
            v.odometer += math.hypot(p.x - v.x, p.y - v.y)
            v.x, v.y, v.heading, v.speed = p.x, p.y, p.heading, p.speed
            v.lane, v.arc, v.offset, v.lat_rate = p.lane, p.arc, p.offset, p.lat_rate
            continue
        if v.kind == "av":
            a, lateral = joint.av if joint.av is not None else (0.0, "keep")
        else:
            a, lateral = joint.bv.get(vid, (0.0, "keep"))
        ds, vn = advance(v.speed, a, dt)
        v.accel = (vn - v.speed) / dt
        v.speed = vn
        v.odometer += ds
        if lateral != "keep" and not v.lc_dir:
            _begin_lane_change(net, v, lateral)
        if v.lc_dir:
            v.lc_time += dt
            if v.lc_time >= lc_duration - 1e-9:
                _finish_lane_change(net, v)
            else:
                v.offset = v.lc_dir * lateral_offset(v.lc_time, v.lc_span, lc_duration)
                v.lat_rate = v.lc_dir * _lateral_rate(v.lc_time, v.lc_span, lc_duration)
        v.arc += ds
        gone = False
        while v.arc > net.lanes[v.lane].length:
            if v.lc_dir:
                v.arc -= ds  # settle the change where it was, then move on
                _finish_lane_change(net, v)
                v.arc += ds
                continue
            excess = v.arc - net.lanes[v.lane].length
            if v.route_index + 1 < len(v.route):
                v.route_index += 1
                v.lane = v.route[v.route_index]
            else:
                nxt = net.default_successor[v.lane]
                if v.kind == "av" or nxt is None:
                    gone = True
                    break
                v.lane = nxt
                v.route, v.route_index = (v.lane,), 0
            v.arc = excess
        if gone:
            exited.append(vid)
            continue
        update_pose(net, v)
    new.exited = {vid: new.vehicles.pop(vid) for vid in exited}
    new.time = t1
    return new


# ---------------------------------------------------------------- crashes


@dataclass(frozen=True)
class CrashConfig:
    rear_end_max: float = 30.0  # deg
    head_on_min: float = 150.0
    angle_min: float = 45.0
    angle_max: float = 135.0


@dataclass
class CrashEvent:
    time: float
    pair: tuple
    dv_mph: float
    type: str
    severity: int
    location_class: str
    impact: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair"] = list(self.pair)
        d["impact"] = list(self.impact)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CrashEvent":
        return cls(d["time"], tuple(d["pair"]), d["dv_mph"], d["type"], d["severity"], d["location_class"],
                   tuple(d.get("impact", (0.0, 0.0))))


def severity_level(dv_mph: float) -> int:
    if dv_mph < 0:
        raise ValueError("speed difference must be non-negative")
    return bisect.bisect_right(SEVERITY_EDGES, dv_mph) + 1


def detect_crash(state: WorldState):
    """Sorted list of overlapping vehicle-id pairs (oriented-box separating-axis test)."""
    ids = sorted(state.vehicles)
    n = len(ids)
    if n < 2:
        return []
    vs = [state.vehicles[i] for i in ids]
    xy = np.array([(v.x, v.y) for v in vs])
    rad = np.array([0.5 * math.hypot(v.length, v.width) for v in vs])
    ia, ib = np.triu_indices(n, 1)
    d = np.hypot(*(xy[ia] - xy[ib]).T)
    near = d < rad[ia] + rad[ib]
    if not near.any():
        return []
    ia, ib = ia[near], ib[near]
    corners = np.stack([v.corners() for v in vs])
    hit = np.atleast_1d(boxes_overlap(corners[ia], corners[ib]))
    return [(ids[a], ids[b]) for a, b, h in zip(ia, ib, hit) if h]


def _face(v: Vehicle, point) -> str:
    """Which face of ``v``'s box the point lies toward: front, rear or side."""
    c, s = math.cos(v.heading), math.sin(v.heading)
    dx, dy = point[0] - v.x, point[1] - v.y
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    if abs(lx) / (v.length / 2.0) >= abs(ly) / (v.width / 2.0):
        return "front" if lx >= 0 else "rear"
    return "side"


def classify_crash(a: Vehicle, b: Vehicle, cfg: CrashConfig | None = None, time: float = 0.0,
                   location_class: str = "other") -> CrashEvent:
    """Type, severity and impact speed difference of a first-overlap pair."""
    cfg = cfg or CrashConfig()
    ca, cb = a.corners(), b.corners()
    if not boxes_overlap(ca, cb):
        raise SimError(f"{a.id} and {b.id} do not overlap")
    va, vb = a.velocity(), b.velocity()
    dv = math.hypot(va[0] - vb[0], va[1] - vb[1]) * MPH_PER_MPS
    dtheta = abs(math.degrees(wrap_angle(a.heading - b.heading)))
    impact = overlap_centroid(ca, cb) or ((a.x + b.x) / 2, (a.y + b.y) / 2)
    fa, fb = _face(a, impact), _face(b, impact)
    if dtheta < cfg.rear_end_max and ({fa, fb} & {"front", "rear"}):
        kind = "rear_end"
    elif dtheta > cfg.head_on_min:
        kind = "head_on"
    elif cfg.angle_min <= dtheta <= cfg.angle_max and "front" in (fa, fb):
        kind = "angle"
    else:
        kind = "sideswipe"
    pair = tuple(sorted((a.id, b.id)))
    return CrashEvent(time, pair, dv, kind, severity_level(dv), location_class, tuple(map(float, impact)))


def location_class_of(network: RoadNetwork, *vehicles) -> str:
    """``intersection`` if any vehicle is on an intersection lane, else the first one's lane class."""
    classes = [network.lanes[v.lane].location_class for v in vehicles if v.lane is not None]
    if "intersection" in classes:
        return "intersection"
    return classes[0] if classes else "other"


def make_observation(network: RoadNetwork, state: WorldState, sensing_radius: float = 100.0) -> Observation:
    """What the AV may see: agents within ``sensing_radius``, signal states, its own route."""
    av = state.vehicles["av"]
    agents = []
    r2 = sensing_radius ** 2
    for vid in sorted(state.vehicles):
        if vid == "av":
            continue
        o = state.vehicles[vid]
        if (o.x - av.x) ** 2 + (o.y - av.y) ** 2 > r2:
            continue
        agents.append({"id": o.id, "kind": o.kind, "x": o.x, "y": o.y, "heading": o.heading,
                       "speed": o.speed, "length": o.length, "width": o.width, "lane": o.lane,
                       "arc": o.arc, "in_crosswalk": o.in_crosswalk})
    signals = {}
    for plan in network.signals.values():
        for m in sorted(plan.movements):
            signals[m] = signal_state(network, m, state.time)
    avd = {"x": av.x, "y": av.y, "heading": av.heading, "speed": av.speed, "accel": av.accel,
           "lane": av.lane, "arc": av.arc, "offset": av.offset, "route_index": av.route_index,
           "length": av.length, "width": av.width}
    return Observation(state.time, avd, agents, signals, tuple(av.route), av.route[-1])


# ---------------------------------------------------------------- traces


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class EpisodeTrace:
    """Header, per-step records and footer of one episode (JSON Lines).

    Step record fields: ``k`` step index, ``t`` time at the start of the step,
    ``av`` the AV command ``[accel, lateral]``, ``a`` background actions
    (flat action index), ``p`` naturalistic probability of each chosen action,
    ``q`` importance probability of the principal vehicle's action (other
    vehicles have q = p), ``pov`` principal vehicle id or null, ``C`` its
    criticality, ``err`` error-state draws ``[state, probability]``, ``env``
    summed log-probability of environment draws (errors, arrivals), ``spawn``
    vehicles that entered, ``digest`` hash of the state after the step.
    """

    header: dict
    steps: list = field(default_factory=list)
    footer: dict = field(default_factory=dict)

    def lines(self):
        yield _dumps({"type": "header", **self.header})
        for s in self.steps:
            yield _dumps({"type": "step", **s})
        yield _dumps({"type": "footer", **self.footer})

    def to_jsonl(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeTrace":
        header, steps, footer = None, [], None
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type", None)
            if kind == "header":
                header = rec
            elif kind == "step":
                steps.append(rec)
            elif kind == "footer":
                footer = rec
            else:
                raise SimError(f"unknown trace record type {kind!r}")
        if header is None or footer is None:
            raise SimError("trace needs a header and a footer record")
        if header.get("format_version") != FORMAT_VERSION:
            raise SimError(f"unsupported trace format_version {header.get('format_version')!r}")
        return cls(header, steps, footer)

    @classmethod
    def load(cls, path) -> "EpisodeTrace":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())

    # -- convenience views ----------------------------------------------
    @property
    def seed(self) -> int:
        return self.header["seed"]

    @property
    def termination(self) -> str:
        return self.footer["termination"]

    @property
    def crash(self) -> CrashEvent | None:
        c = self.footer.get("crash")
        return CrashEvent.from_dict(c) if c else None

    @property
    def log_p(self) -> float:
        return self.footer["log_p"]

    @property
    def log_q(self) -> float:
        return self.footer["log_q"]

    @property
    def log_weight(self) -> float:
        return self.footer["log_w"]

    @property
    def weight(self) -> float:
        return math.exp(self.footer["log_w"])

    @property
    def distance(self) -> float:
        return self.footer["distance"]

    @property
    def effective(self) -> bool:
        return self.footer["effective"]

    def step_ratios(self):
        """Per-step, per-vehicle (p, q) of the chosen actions."""
        for s in self.steps:
            for vid, p in s["p"].items():
                yield p, s["q"].get(vid, p)


# ---------------------------------------------------------------- episodes


@dataclass(frozen=True)
class EpisodeSetup:
    """Everything that determines an episode apart from the seed and the policy.

    ``behavior``, ``nade``, ``surrogate`` and ``crash`` are plain mappings (as
    read from the run config) so the setup serializes into trace headers.
    """

    network: str = "builtin:desk"
    route: str = "lap"
    mode: str = "nade"  # nde | nade
    horizon: float = 300.0  # s
    dt: float = 0.1
    behavior: dict = field(default_factory=dict)
    nade: dict = field(default_factory=dict)
    surrogate: dict = field(default_factory=dict)
    crash: dict = field(default_factory=dict)
    density_scale: float = 1.0
    inflow_scale: float = 1.0
    av_arc: float = 5.0
    av_speed: float = 8.0
    av_clearance: float = 20.0  # background vehicles are not spawned this close to the AV
    stuck_speed: float = 0.1
    stuck_time: float = 120.0
    sensing_radius: float = SENSING_RADIUS

    def __post_init__(self):
        if self.mode not in ("nde", "nade"):
            raise ValueError(f"mode must be nde or nade, got {self.mode!r}")
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSetup":
        return cls(**d)


def nade_from_dict(d: dict | None) -> NadeConfig:
    d = dict(d or {})
    if "caps" in d:
        d["caps"] = dict(d["caps"])
    return NadeConfig(**d)


def surrogate_from_dict(d: dict | None) -> SurrogateConfig:
    from .behavior import IdmParams

    d = dict(d or {})
    if "reaction" in d:
        r = d["reaction"]
        d["reaction"] = tuple((float(k), float(v)) for k, v in (r.items() if isinstance(r, dict) else r))
    if "decels" in d:
        d["decels"] = tuple(float(x) for x in d["decels"])
    if d.get("decel_weights") is not None:
        d["decel_weights"] = tuple(float(x) for x in d["decel_weights"])
    if "av_params" in d:
        d["av_params"] = IdmParams(**d["av_params"])
    return SurrogateConfig(**d)


class Simulator:
    """Resolved configuration shared by all episodes of a run."""

    def __init__(self, setup: EpisodeSetup, network: RoadNetwork | None = None):
        self.setup = setup
        self.network = network or resolve_network(setup.network)
        if setup.route not in self.network.routes:
            raise SimError(f"unknown route {setup.route!r}")
        self.route = self.network.routes[setup.route]
        self.behavior = BehaviorModel(self.network, behavior_from_dict(setup.behavior))
        self.nade = nade_from_dict(setup.nade)
        self.surrogate = surrogate_from_dict(setup.surrogate)
        self.crash_cfg = CrashConfig(**setup.crash)
        self.paths = PathCache(self.network)
        self.space = self.behavior.cfg.actions
        self._pops = sorted(self.behavior.cfg.populations.items())

    # -- spawning ----------------------------------------------------------
    def _population(self, u: float):
        acc = 0.0
        for name, share in self._pops:
            acc += share
            if u < acc:
                return name, share
        return self._pops[-1]

    def _free_speed(self, lane_id, population):
        p = self.behavior.cfg.idm(population)
        return min(p.v0, self.network.lanes[lane_id].speed_limit * 1.1)

    def _initial_state(self, rng, logp):
        net, cfg, st = self.network, self.behavior.cfg, self.setup
        av = Vehicle("av", "av", self.route[0], st.av_arc, 0.0, st.av_speed, 0.0,
                     cfg.vehicle_length, cfg.vehicle_width, tuple(self.route), 0)
        update_pose(net, av)
        vehicles = {"av": av}
        L = cfg.vehicle_length
        min_spacing = L + 4.0
        n = 0
        for src in net.sources:
            lane = net.lanes[src.lane]
            density = src.density * st.density_scale
            if density <= 0:
                continue
            mean_extra = max(1000.0 / density - min_spacing, 1.0)
            arc = lane.length - L / 2.0
            ahead = None  # (arc, speed) of the previous (downstream) vehicle
            while True:
                e = rng.exponential(mean_extra)
                logp.append(-math.log(mean_extra) - e / mean_extra)
                arc -= e if ahead is None else min_spacing + e
                if arc < L / 2.0:
                    break
                pop, share = self._population(rng.random())
                logp.append(math.log(share))
                v_free = self._free_speed(src.lane, pop)
                if ahead is None:
                    v = v_free
                else:
                    gap = ahead[0] - arc - L
                    v = min(idm_equilibrium_speed(gap, cfg.idm(pop), v_free), ahead[1] + 1.0)
                j = cfg.speed_jitter
                if j > 0:
                    v = max(v - j * rng.random(), 0.0)
                    logp.append(-math.log(j))
                ahead = (arc, v)
                if src.lane == av.lane and -st.av_clearance < arc - av.arc < st.av_clearance:
                    continue
                n += 1
                vid = f"bv{n:04d}"
                route = src.route or (src.lane,)
                veh = Vehicle(vid, "bv", src.lane, arc, 0.0, v, 0.0, L, cfg.vehicle_width, route, 0, pop)
                update_pose(net, veh)
                vehicles[vid] = veh
        state = WorldState(net, 0.0, vehicles)
        # nobody starts unable to stop for a red light or a yield ahead
        index = lane_index(vehicles)
        for vid in sorted(vehicles):
            veh = vehicles[vid]
            if veh.kind != "bv":
                continue
            v = veh.speed
            veh.speed = 0.0
            gaps = [g for g in (self.behavior._signal_stop(state, veh),
                                self.behavior._yield_stop(state, veh, index)) if g is not None]
            veh.speed = v
            if gaps:
                p = cfg.idm(veh.population)
                veh.speed = min(v, math.sqrt(2.0 * p.b_comf * max(min(gaps) - p.s0, 0.0)))
        return state, n

    def _inflow(self, state, rng, logp, counter, spawns):
        net, cfg, st = self.network, self.behavior.cfg, self.setup
        L = cfg.vehicle_length
        for src in net.sources:
            u_arrive, u_pop = rng.random(2)
            p = min(src.inflow * st.inflow_scale / 3600.0 * st.dt, 1.0)
            if p <= 0:
                continue
            if u_arrive >= p:
                logp.append(math.log1p(-p))
                continue
            logp.append(math.log(p))
            pop, share = self._population(u_pop)
            logp.append(math.log(share))
            arc = L / 2.0
            first = None
            for a, vid in lane_index(state.vehicles).get(src.lane, ()):
                first = (a, state.vehicles[vid])
                break
            v = self._free_speed(src.lane, pop)
            if first is not None:
                gap = first[0] - arc - L
                if gap < 2.0 * L:
                    continue  # entrance blocked
                v = min(v, idm_equilibrium_speed(gap, cfg.idm(pop), v), first[1].speed + 1.0)
            if self._follower_too_close(state, src.lane, arc - L / 2.0):
                continue  # somebody is arriving from upstream
            counter[0] += 1
            vid = f"bv{counter[0]:04d}"
            veh = Vehicle(vid, "bv", src.lane, arc, 0.0, v, 0.0, L, cfg.vehicle_width, src.route or (src.lane,),
                          0, pop)
            update_pose(net, veh)
            state.vehicles[vid] = veh
            spawns.append([vid, src.lane, v, pop])

    def _follower_too_close(self, state, lane_id, rear):
        """True if a vehicle on a predecessor lane would arrive within 2 s or 2 lengths."""
        net = self.network
        for pid in net.predecessors.get(lane_id, ()):
            plen = net.lanes[pid].length
            for vid, o in state.vehicles.items():
                if o.lane != pid:
                    continue
                gap = plen - o.arc - o.length / 2.0 + rear
                if gap < max(2.0 * o.length, 2.0 * o.speed):
                    return True
        return False

    # -- observation -------------------------------------------------------
    def observation(self, state: WorldState) -> Observation:
        return make_observation(self.network, state, self.setup.sensing_radius)

    def _queued(self, state) -> bool:
        av = state.vehicles["av"]
        found = leader_along_route(self.network, state.vehicles, "av", 15.0, extend=False)
        if found is not None and found[1] < 10.0:
            return True
        dist = self.network.lanes[av.lane].length - av.arc
        for lid in av.route[av.route_index + 1:]:
            if dist > 30.0:
                break
            lane = self.network.lanes[lid]
            if lane.movement is not None:
                return signal_state(self.network, lane.movement, state.time) != "green"
            dist += lane.length
        return False

    # -- main loop -----------------------------------------------------------
    def run(self, policy, seed: int, forced_av=None, policy_name: str | None = None) -> EpisodeTrace:
        """Simulate one episode.

        ``forced_av`` (a list of ``(accel, lateral)``) replaces the policy for
        open-loop replay.
        """
        st, net, space = self.setup, self.network, self.space
        rng = stream(seed, "episode")
        env_logp = []
        state, n_spawned = self._initial_state(rng, env_logp)
        counter = [n_spawned]
        header = {
            "format_version": FORMAT_VERSION, "seed": int(seed), "setup": st.to_dict(),
            "policy": policy_name or getattr(policy, "name", type(policy).__name__),
            "route": list(self.route),
            "initial_state": [state.vehicles[v].to_dict() for v in sorted(state.vehicles)],
            "log_p0": math.fsum(env_logp),
        }
        trace = EpisodeTrace(header)
        logp_terms = list(env_logp)
        logq_terms = list(env_logp)
        logw_terms = []
        termination, crash, diagnostic = None, None, None
        bg_crashes = []
        stuck = 0.0
        nade_on = st.mode == "nade" and self.nade.enabled
        n_steps = int(round(st.horizon / st.dt))
        if forced_av is None:
            try:
                policy.reset(net, self.route, derived_int(seed, "policy"))
            except (PolicyError, OSError) as exc:
                termination, diagnostic = "ineffective", f"policy reset failed: {exc}"
                n_steps = 0
        for k in range(n_steps):
            t = state.time
            av = state.vehicles["av"]
            # 1. policy command
            if forced_av is not None:
                if k >= len(forced_av):
                    termination, diagnostic = "ineffective", "open-loop command record exhausted"
                    break
                cmd = AvCommand(*forced_av[k])
            else:
                try:
                    cmd = policy.observe(self.observation(state))
                    if not isinstance(cmd, AvCommand):
                        raise PolicyError(f"policy returned {type(cmd).__name__}, not AvCommand")
                except (PolicyError, OSError) as exc:
                    termination, diagnostic = "ineffective", f"policy failure at t={t:.1f}: {exc}"
                    break
            bvs = [vid for vid in sorted(state.vehicles) if state.vehicles[vid].kind == "bv"
                   and state.vehicles[vid].script is None]
            step_env = []
            # 2. error-state transitions
            err = {}
            em = self.behavior.cfg.errors
            for vid in bvs:
                v = state.vehicles[vid]
                u = rng.random() if needs_error_draw(v.error, em) else None
                new_err, prob = step_error_state(v.error, u, em, st.dt)
                if u is not None:
                    err[vid] = [new_err.neglecting, prob]
                    step_env.append(math.log(prob))
                v.error = new_err
            # 3. naturalistic pmfs
            index = lane_index(state.vehicles)
            pmf_objs = {vid: self.behavior.pmf(state, vid, index) for vid in bvs}
            pmfs = {vid: pm.probs for vid, pm in pmf_objs.items()}
            # 4. criticality and principal other vehicle
            pov, q_pov, c_pov = None, None, 0.0
            if nade_on and bvs:
                ctx = SurrogateContext(net, state, "av", self.surrogate, self.paths)
                rows = {}
                for vid in bvs:
                    P = pmfs[vid]
                    if self.nade.radius is not None:
                        o = state.vehicles[vid]
                        if math.hypot(o.x - av.x, o.y - av.y) > self.nade.radius:
                            continue
                    sup = np.flatnonzero(P > 0)
                    if len(sup) < 2:
                        continue  # nothing to amplify while a maneuver is held
                    o = state.vehicles[vid]
                    ch = np.zeros(len(P))
                    ch[sup] = ctx.challenge_all(vid, sup, space, self.behavior.cfg.idm(o.population),
                                                self.behavior._v0(o))
                    if ch.any():
                        rows[vid] = vehicle_criticality(vid, P, ch, location_class_of(net, av, state.vehicles[vid]))
                pov = select_pov(rows)
                if pov is not None:
                    row = rows[pov]
                    q_pov = importance_pmf(pmfs[pov], row.V, self.nade.cap(row.location_class), self.nade)
                    c_pov = row.C
            # 5. sample background actions
            us = rng.random(len(bvs))
            hold, kernel = self.behavior.cfg.maneuver_hold, self.behavior.cfg.kernel
            actions, rec_a, rec_p, rec_q = {}, {}, {}, {}
            for vid, u in zip(bvs, us):
                P = pmfs[vid]
                Q = q_pov if vid == pov else P
                a = _sample(Q, u)
                actions[vid] = space.decode(a)
                o = state.vehicles[vid]
                if o.maneuver is not None:
                    rem = o.maneuver[1] - st.dt
                    o.maneuver = (o.maneuver[0], rem) if rem > 1e-9 else None
                elif hold > 0 and starts_maneuver(space, pmf_objs[vid], a, kernel):
                    rem = hold - st.dt
                    o.maneuver = (a % space.n_accel, rem) if rem > 1e-9 else None
                rec_a[vid] = a
                rec_p[vid] = float(P[a])
                logp_terms.append(math.log(P[a]))
                if vid == pov:
                    rec_q[vid] = float(Q[a])
                    logq_terms.append(math.log(Q[a]))
                    logw_terms.append(math.log(P[a]) - math.log(Q[a]))
                else:
                    logq_terms.append(math.log(P[a]))
            # 6. integrate
            state = step(state, JointAction(actions, (cmd.accel, cmd.lateral)), st.dt)
            # 7. arrivals
            spawns = []
            self._inflow(state, rng, step_env, counter, spawns)
            logp_terms.extend(step_env)
            logq_terms.extend(step_env)
            rec = {"k": k, "t": t, "av": [cmd.accel, cmd.lateral], "a": rec_a, "p": rec_p, "q": rec_q,
                   "pov": pov, "C": c_pov, "err": err, "env": math.fsum(step_env)}
            if spawns:
                rec["spawn"] = spawns
            # 8. crashes
            if "av" in state.exited:
                rec["digest"] = state.digest()
                trace.steps.append(rec)
                termination = "lap_complete"
                break
            pairs = detect_crash(state)
            av_pairs = [p for p in pairs if "av" in p]
            if av_pairs:
                a_id, b_id = av_pairs[0]
                A, B = state.vehicles[a_id], state.vehicles[b_id]
                crash = classify_crash(A, B, self.crash_cfg, state.time, location_class_of(net, A, B))
            removed = set()
            for a_id, b_id in pairs:
                if "av" in (a_id, b_id) or a_id in removed or b_id in removed:
                    continue
                A, B = state.vehicles[a_id], state.vehicles[b_id]
                ev = classify_crash(A, B, self.crash_cfg, state.time, location_class_of(net, A, B))
                bg_crashes.append(ev.to_dict())
                removed.update((a_id, b_id))
            for vid in sorted(removed):
                del state.vehicles[vid]
            if removed:
                rec["removed"] = sorted(removed)
            rec["digest"] = state.digest()
            trace.steps.append(rec)
            if crash is not None:
                termination = "crash"
                break
            # 9. stuck AV
            if state.vehicles["av"].speed < st.stuck_speed and not self._queued(state):
                stuck += st.dt
                if stuck > st.stuck_time:
                    termination, diagnostic = "ineffective", f"AV stuck for more than {st.stuck_time:g} s"
                    break
            else:
                stuck = 0.0
        if termination is None:
            termination = "horizon"
        av = state.vehicles.get("av") or state.exited["av"]
        trace.footer = {
            "termination": termination,
            "crash": crash.to_dict() if crash else None,
            "background_crashes": bg_crashes,
            "log_p": math.fsum(logp_terms),
            "log_q": math.fsum(logq_terms),
            "log_w": math.fsum(logw_terms),
            "distance": float(av.odometer),
            "effective": termination != "ineffective",
            "diagnostic": diagnostic,
            "n_steps": len(trace.steps),
            "pov_steps": sum(1 for s in trace.steps if s["pov"] is not None),
        }
        return trace


def _sample(probs, u: float) -> int:
    c = np.cumsum(probs)
    i = int(np.searchsorted(c, u * c[-1], side="right"))
    i = min(i, len(c) - 1)
    while probs[i] <= 0:
        i -= 1
    return i


def run_episode(network, behavior, av_policy, mode: str, seed: int, route: str = "lap", horizon: float = 300.0,
                **options) -> EpisodeTrace:
    """Run one episode; ``network`` is a spec string or a :class:`RoadNetwork`."""
    net_spec = network if isinstance(network, str) else f"builtin:{network.name}"
    setup = EpisodeSetup(network=net_spec, route=route, mode=mode, horizon=horizon, behavior=behavior or {},
                         **options)
    sim = Simulator(setup, network if isinstance(network, RoadNetwork) else None)
    return sim.run(av_policy, seed)


def diff_traces(a: EpisodeTrace, b: EpisodeTrace, limit: int = 5):
    """Line-level differences ``(line number, expected, actual)``; empty when identical."""
    la, lb = list(a.lines()), list(b.lines())
    out = []
    for i in range(max(len(la), len(lb))):
        x = la[i] if i < len(la) else None
        y = lb[i] if i < len(lb) else None
        if x != y:
            out.append((i, x, y))
            if len(out) >= limit:
                break
    return out
