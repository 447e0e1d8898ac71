"""Lane-graph road network: lanes, conflict zones, signal plans, routes.

Networks are immutable after construction and can be loaded from a YAML/JSON
definition file (``format_version: 1``). See :func:`network_from_dict` for the
schema.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .geometry import Polyline, arc_points

FORMAT_VERSION = 1
LOCATION_CLASSES = ("arterial", "intersection", "roundabout", "crosswalk")
SIGNAL_STATES = ("green", "yellow", "red")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple
    width: float = 3.5
    speed_limit: float = 11.2
    successors: tuple = ()
    left_neighbor: str | None = None
    right_neighbor: str | None = None
    location_class: str = "arterial"
    movement: str | None = None  # signal movement controlling entry to this lane

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.centerline)

    @property
    def length(self) -> float:
        return self.polyline.length


@dataclass(frozen=True)
class ConflictZone:
    lane_a: str
    interval_a: tuple
    lane_b: str
    interval_b: tuple
    priority: str = "signal"  # "lane_a", "lane_b" or "signal"
    location_class: str = "intersection"

    def priority_lane(self) -> str | None:
        if self.priority == "lane_a":
            return self.lane_a
        if self.priority == "lane_b":
            return self.lane_b
        return None

    def side(self, lane_id: str):
        """(own interval, other lane, other interval) for ``lane_id``."""
        if lane_id == self.lane_a:
            return self.interval_a, self.lane_b, self.interval_b
        return self.interval_b, self.lane_a, self.interval_a


@dataclass(frozen=True)
class SignalPhase:
    duration: float
    states: dict


@dataclass(frozen=True)
class SignalPlan:
    id: str
    phases: tuple
    offset: float = 0.0

    @property
    def cycle(self) -> float:
        return sum(p.duration for p in self.phases)

    @property
    def movements(self) -> frozenset:
        return frozenset(m for p in self.phases for m in p.states)

    def state(self, movement: str, t: float) -> str:
        tc = (t - self.offset) % self.cycle
        for p in self.phases:
            if tc < p.duration:
                return p.states[movement]
            tc -= p.duration
        return self.phases[-1].states[movement]


@dataclass(frozen=True)
class Source:
    """Where background vehicles enter: initial density and inflow rate."""

    lane: str
    density: float = 20.0  # veh/km at t=0
    inflow: float = 300.0  # veh/h
    route: tuple = ()  # lane sequence spawned vehicles follow; default: first successors


@dataclass(frozen=True)
class RoadNetwork:
    name: str
    lanes: dict
    conflict_zones: tuple = ()
    signals: dict = field(default_factory=dict)
    routes: dict = field(default_factory=dict)
    sources: tuple = ()

    def __post_init__(self):
        self.validate()

    def __hash__(self):
        return hash(self.name)

    def __eq__(self, other):
        return isinstance(other, RoadNetwork) and network_to_dict(self) == network_to_dict(other)

    def validate(self) -> None:
        lanes = self.lanes
        for lane in lanes.values():
            if lane.width <= 0:
                raise NetworkError(f"lane {lane.id}: width must be positive")
            if len(lane.centerline) < 2:
                raise NetworkError(f"lane {lane.id}: centerline needs >= 2 points")
            try:
                lane.polyline
            except ValueError as exc:
                raise NetworkError(f"lane {lane.id}: {exc}") from None
            if lane.location_class not in LOCATION_CLASSES:
                raise NetworkError(f"lane {lane.id}: unknown location class {lane.location_class!r}")
            for s in lane.successors:
                if s not in lanes:
                    raise NetworkError(f"lane {lane.id}: unknown successor {s}")
            if lane.left_neighbor is not None:
                other = lanes.get(lane.left_neighbor)
                if other is None or other.right_neighbor != lane.id:
                    raise NetworkError(f"lane {lane.id}: left neighbor relation not symmetric")
            if lane.right_neighbor is not None:
                other = lanes.get(lane.right_neighbor)
                if other is None or other.left_neighbor != lane.id:
                    raise NetworkError(f"lane {lane.id}: right neighbor relation not symmetric")
        for z in self.conflict_zones:
            if z.lane_a == z.lane_b:
                raise NetworkError("conflict zone pairs a lane with itself")
            for lid, (s0, s1) in ((z.lane_a, z.interval_a), (z.lane_b, z.interval_b)):
                if lid not in lanes:
                    raise NetworkError(f"conflict zone references unknown lane {lid}")
                if not (0.0 <= s0 <= s1 <= lanes[lid].length + 1e-9):
                    raise NetworkError(f"conflict zone interval {s0, s1} outside lane {lid}")
        for plan in self.signals.values():
            movements = plan.movements
            for p in plan.phases:
                if p.duration <= 0:
                    raise NetworkError(f"signal {plan.id}: non-positive phase duration")
                if set(p.states) != movements:
                    raise NetworkError(f"signal {plan.id}: every phase must set every movement")
                if any(v not in SIGNAL_STATES for v in p.states.values()):
                    raise NetworkError(f"signal {plan.id}: bad state")
        for lane in lanes.values():
            if lane.movement is not None and lane.movement not in self._movement_plan:
                raise NetworkError(f"lane {lane.id}: movement {lane.movement} not in any signal plan")
        for name, route in self.routes.items():
            for a, b in zip(route, route[1:]):
                if a not in lanes or b not in lanes[a].successors:
                    raise NetworkError(f"route {name}: {a} -> {b} is not a successor link")
            if route and route[-1] not in lanes:
                raise NetworkError(f"route {name}: unknown lane {route[-1]}")
        for src in self.sources:
            if src.lane not in lanes:
                raise NetworkError(f"source on unknown lane {src.lane}")
            if src.route:
                if src.route[0] != src.lane:
                    raise NetworkError(f"source route must start on its lane {src.lane}")
                for a, b in zip(src.route, src.route[1:]):
                    if b not in lanes or b not in lanes[a].successors:
                        raise NetworkError(f"source route {a} -> {b} is not a successor link")

    @cached_property
    def _movement_plan(self) -> dict:
        out = {}
        for plan in self.signals.values():
            for m in plan.movements:
                out[m] = plan
        return out

    @cached_property
    def zones_by_lane(self) -> dict:
        out = {lid: [] for lid in self.lanes}
        for z in self.conflict_zones:
            out[z.lane_a].append(z)
            out[z.lane_b].append(z)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def predecessors(self) -> dict:
        out = {lid: [] for lid in self.lanes}
        for lane in self.lanes.values():
            for s in lane.successors:
                out[s].append(lane.id)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def default_successor(self) -> dict:
        """Successor taken once a route runs out: the first one that cannot lead back.

        Keeps unrouted vehicles from circling a roundabout forever.
        """
        def reaches(start, target):
            stack, seen = [start], set()
            while stack:
                lid = stack.pop()
                if lid == target:
                    return True
                if lid in seen:
                    continue
                seen.add(lid)
                stack.extend(self.lanes[lid].successors)
            return False

        out = {}
        for lid, lane in self.lanes.items():
            if not lane.successors:
                out[lid] = None
                continue
            acyclic = [s for s in lane.successors if not reaches(s, lid)]
            out[lid] = (acyclic or list(lane.successors))[0]
        return out

    def route_length(self, route) -> float:
        return sum(self.lanes[l].length for l in route)

    def max_speed_limit(self) -> float:
        return max(l.speed_limit for l in self.lanes.values())


def project_to_lane(point, lane: Lane) -> tuple[float, float]:
    """Arc position (clamped to the lane) and left-positive lateral offset."""
    return lane.polyline.project(point)


def pose_at(lane: Lane, arc: float, offset: float = 0.0) -> tuple[float, float, float]:
    if not (-1e-9 <= arc <= lane.length + 1e-9):
        raise ValueError(f"arc {arc} outside lane {lane.id} of length {lane.length}")
    return lane.polyline.pose(arc, offset)


def signal_state(network: RoadNetwork, movement: str, t: float) -> str:
    plan = network._movement_plan.get(movement)
    if plan is None:
        raise KeyError(f"unknown movement {movement!r}")
    return plan.state(movement, t)


def lane_index(vehicles) -> dict:
    """lane id -> sorted list of (center arc, vehicle id).

    Vehicles mid lane-change are listed in both origin and target lane.
    """
    idx: dict = {}
    for v in vehicles.values():
        for lane, arc in v.occupied():
            idx.setdefault(lane, []).append((arc, v.id))
    for lst in idx.values():
        lst.sort()
    return idx


def iter_route_ahead(network: RoadNetwork, route, route_index: int, extend: bool = True):
    """Yield lane ids from the current one onward; past the route end follow default successors."""
    i = route_index
    seen = 0
    while True:
        if i < len(route):
            lid = route[i]
        elif extend and seen < 64:
            lid = network.default_successor[lid]
            if lid is None:
                return
        else:
            return
        yield lid
        i += 1
        seen += 1


def leader_along_route(network: RoadNetwork, vehicles, vehicle_id, horizon: float = 200.0,
                       index=None, lanes=None, extend: bool = True):
    """Nearest vehicle ahead along the route: ``(leader id, bumper gap)`` or None.

    ``vehicles`` maps id to objects exposing ``lane``, ``arc``, ``route``,
    ``route_index``, ``length`` and ``occupied()``. The gap is clamped at 0.
    """
    if index is None:
        index = lane_index(vehicles)
    me = vehicles[vehicle_id]
    if lanes is None:
        lanes = [(me.lane, me.arc)]
    best = None
    for start_lane, start_arc in lanes:
        found = _scan(network, vehicles, me, start_lane, start_arc, index, horizon, extend)
        if found is not None and (best is None or found[1] < best[1]):
            best = found
    return best


def _scan(network, vehicles, me, start_lane, start_arc, index, horizon, extend):
    offset = 0.0  # distance from my center to the start of the current lane
    route = me.route
    if start_lane == me.lane:
        lanes_iter = iter_route_ahead(network, route, me.route_index, extend)
    else:
        lanes_iter = _successor_chain(network, start_lane, extend)
    first = True
    for lid in lanes_iter:
        lst = index.get(lid, ())
        if first:
            pos = bisect.bisect_right(lst, (start_arc, chr(0x10FFFF)))
            cands = lst[pos:]
            base = -start_arc
            # vehicles with same center arc but different id are ahead only by id order; treat equal arcs
            same = [c for c in lst[:pos] if c[0] == start_arc and c[1] != me.id]
            cands = same + list(cands)
        else:
            cands = lst
            base = offset
        for arc, vid in cands:
            if vid == me.id:
                continue
            other = vehicles[vid]
            dist = base + arc
            if dist > horizon + other.length:
                return None
            gap = dist - other.length / 2.0 - me.length / 2.0
            return vid, max(gap, 0.0)
        lane_len = network.lanes[lid].length
        offset = (lane_len - start_arc) if first else offset + lane_len
        first = False
        if offset > horizon:
            return None
    return None


def _successor_chain(network, lane_id, extend):
    lid = lane_id
    for _ in range(64):
        yield lid
        nxt = network.default_successor[lid]
        if nxt is None or not extend:
            return
        lid = nxt


# ---------------------------------------------------------------- file format


def network_from_dict(d: dict) -> RoadNetwork:
    """Build a network from its declarative definition.

    Schema (YAML or JSON)::

        format_version: 1
        name: str
        lanes:
          - {id, centerline: [[x, y], ...], width, speed_limit, successors: [...],
             left_neighbor, right_neighbor, location_class, movement}
        conflict_zones:
          - {lane_a, interval_a: [s0, s1], lane_b, interval_b: [s0, s1],
             priority: lane_a | lane_b | signal, location_class}
        signals:
          - {id, offset, phases: [{duration, states: {movement: green|yellow|red}}]}
        routes: {name: [lane ids]}
        sources: [{lane, density, inflow, route: [lane ids]}]
    """
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise NetworkError(f"unsupported network format_version {version!r}")
    lanes = {}
    for ld in d.get("lanes", []):
        lane = Lane(
            id=str(ld["id"]),
            centerline=tuple(tuple(float(c) for c in p) for p in ld["centerline"]),
            width=float(ld.get("width", 3.5)),
            speed_limit=float(ld.get("speed_limit", 11.2)),
            successors=tuple(ld.get("successors", ())),
            left_neighbor=ld.get("left_neighbor"),
            right_neighbor=ld.get("right_neighbor"),
            location_class=ld.get("location_class", "arterial"),
            movement=ld.get("movement"),
        )
        if lane.id in lanes:
            raise NetworkError(f"duplicate lane id {lane.id}")
        lanes[lane.id] = lane
    zones = tuple(
        ConflictZone(
            lane_a=z["lane_a"], interval_a=tuple(map(float, z["interval_a"])),
            lane_b=z["lane_b"], interval_b=tuple(map(float, z["interval_b"])),
            priority=z.get("priority", "signal"), location_class=z.get("location_class", "intersection"),
        )
        for z in d.get("conflict_zones", [])
    )
    signals = {}
    for s in d.get("signals", []):
        phases = tuple(SignalPhase(float(p["duration"]), dict(p["states"])) for p in s["phases"])
        signals[s["id"]] = SignalPlan(s["id"], phases, float(s.get("offset", 0.0)))
    routes = {k: tuple(v) for k, v in (d.get("routes") or {}).items()}
    sources = tuple(Source(s["lane"], float(s.get("density", 20.0)), float(s.get("inflow", 300.0)),
                           tuple(s.get("route", ())))
                    for s in d.get("sources", []))
    return RoadNetwork(d.get("name", "unnamed"), lanes, zones, signals, routes, sources)


def network_to_dict(net: RoadNetwork) -> dict:
    lanes = []
    for lane in net.lanes.values():
        ld = {"id": lane.id, "centerline": [list(p) for p in lane.centerline], "width": lane.width,
              "speed_limit": lane.speed_limit, "successors": list(lane.successors),
              "location_class": lane.location_class}
        for k in ("left_neighbor", "right_neighbor", "movement"):
            if getattr(lane, k) is not None:
                ld[k] = getattr(lane, k)
        lanes.append(ld)
    return {
        "format_version": FORMAT_VERSION,
        "name": net.name,
        "lanes": lanes,
        "conflict_zones": [
            {"lane_a": z.lane_a, "interval_a": list(z.interval_a), "lane_b": z.lane_b,
             "interval_b": list(z.interval_b), "priority": z.priority, "location_class": z.location_class}
            for z in net.conflict_zones
        ],
        "signals": [
            {"id": p.id, "offset": p.offset,
             "phases": [{"duration": ph.duration, "states": dict(ph.states)} for ph in p.phases]}
            for p in net.signals.values()
        ],
        "routes": {k: list(v) for k, v in net.routes.items()},
        "sources": [{"lane": s.lane, "density": s.density, "inflow": s.inflow, "route": list(s.route)}
                    for s in net.sources],
    }


def load_network(path) -> RoadNetwork:
    path = Path(path)
    with open(path) as fh:
        return network_from_dict(yaml.safe_load(fh))


def save_network(net: RoadNetwork, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(network_to_dict(net), fh, sort_keys=False)


# ------------------------------------------------------------ built-in networks


def _round(points):
    return tuple((round(float(x), 4), round(float(y), 4)) for x, y in points)


def _seg_intersection(p1, p2, q1, q2):
    d1 = p2 - p1
    d2 = q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12:
        return None
    r = q1 - p1
    t = (r[0] * d2[1] - r[1] * d2[0]) / den
    u = (r[0] * d1[1] - r[1] * d1[0]) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return t, u
    return None


def crossing_arcs(a: Lane, b: Lane):
    """Arc positions on ``a`` and ``b`` where their centerlines cross, or None."""
    pa, pb = a.polyline, b.polyline
    for i in range(len(pa.seglen)):
        for j in range(len(pb.seglen)):
            hit = _seg_intersection(pa.points[i], pa.points[i + 1], pb.points[j], pb.points[j + 1])
            if hit is not None:
                t, u = hit
                return pa.cum[i] + t * pa.seglen[i], pb.cum[j] + u * pb.seglen[j]
    return None


def crossing_zone(a: Lane, b: Lane, priority="signal", half_extent=4.5, location_class="intersection"):
    hit = crossing_arcs(a, b)
    if hit is None:
        raise NetworkError(f"lanes {a.id} and {b.id} do not cross")
    sa, sb = float(hit[0]), float(hit[1])
    ia = (max(0.0, sa - half_extent), min(a.length, sa + half_extent))
    ib = (max(0.0, sb - half_extent), min(b.length, sb + half_extent))
    return ConflictZone(a.id, ia, b.id, ib, priority, location_class)


def merge_zone(a: Lane, b: Lane, priority, extent=6.0, location_class="roundabout"):
    """Zone at the downstream ends of two lanes feeding the same successor."""
    return ConflictZone(a.id, (max(0.0, a.length - extent), float(a.length)),
                        b.id, (max(0.0, b.length - extent), float(b.length)), priority, location_class)


def ring_network(length: float = 300.0, width: float = 3.5, speed_limit: float = 15.0) -> RoadNetwork:
    """Single-lane closed loop (its own successor)."""
    r = length / (2 * math.pi)
    pts = arc_points((0.0, 0.0), r, -math.pi / 2, 1.5 * math.pi, 241)
    lane = Lane("ring", _round(pts), width, speed_limit, ("ring",), location_class="arterial")
    return RoadNetwork("ring", {"ring": lane}, routes={"loop": ("ring",)})


def corridor_network(length: float = 1000.0, lanes: int = 1, width: float = 3.5,
                     speed_limit: float = 15.0, location_class: str = "arterial") -> RoadNetwork:
    """Straight eastbound corridor with ``lanes`` parallel lanes (``c0`` rightmost)."""
    out = {}
    for k in range(lanes):
        y = k * width
        out[f"c{k}"] = Lane(
            f"c{k}", ((0.0, y), (length, y)), width, speed_limit, (),
            left_neighbor=f"c{k + 1}" if k + 1 < lanes else None,
            right_neighbor=f"c{k - 1}" if k > 0 else None,
            location_class=location_class,
        )
    return RoadNetwork("corridor", out, routes={f"c{k}": (f"c{k}",) for k in range(lanes)})


def desk_network() -> RoadNetwork:
    """The built-in desk-scale network.

    * a two-lane-per-direction arterial (x 0..200) feeding a signalized
      4-way intersection (x 200..230) with a permissive westbound left turn,
    * a one-lane-per-direction link (x 230..330),
    * a single-lane roundabout (center (355, 0), radius 18) with west, north
      and east legs, circulating counter-clockwise.

    The AV route ``lap`` runs eastbound through the intersection, around the
    roundabout, and out of the east leg.
    """
    W = 3.5
    V_ART = 11.2  # 25 mph
    V_INT = 8.0
    V_RB = 7.0
    lanes: dict = {}

    def add(lid, pts, succ=(), cls="arterial", v=V_ART, left=None, right=None, movement=None):
        lanes[lid] = Lane(lid, _round(pts), W, v, tuple(succ), left, right, cls, movement)

    # arterial west of the intersection
    add("art_eb_r", [(0, -5.25), (200, -5.25)], ["int_eb_thru"], left="art_eb_l")
    add("art_eb_l", [(0, -1.75), (200, -1.75)], ["int_eb_left"], right="art_eb_r")
    add("art_wb_l", [(200, 1.75), (0, 1.75)], [], right="art_wb_r")
    add("art_wb_r", [(200, 5.25), (0, 5.25)], [], left="art_wb_l")
    # cross street
    add("ns_nb_in", [(216.75, -115), (216.75, -15)], ["int_nb_thru"])
    add("ns_nb_out", [(216.75, 15), (216.75, 115)], [])
    add("ns_sb_in", [(213.25, 115), (213.25, 15)], ["int_sb_thru"])
    add("ns_sb_out", [(213.25, -15), (213.25, -115)], [])
    # intersection movements
    add("int_eb_thru", [(200, -5.25), (212, -5.25), (222, -1.75), (230, -1.75)], ["link_eb"], "intersection", V_INT, movement="ew")
    c = (200.0, 15.0)
    add("int_eb_left", arc_points(c, 16.75, -math.pi / 2, 0.0, 14), ["ns_nb_out"], "intersection", V_INT, movement="ew")
    add("int_wb_thru", [(230, 1.75), (215, 1.75), (200, 5.25)], ["art_wb_r"], "intersection", V_INT, movement="ew")
    c = (230.0, -15.0)
    add("int_wb_left", arc_points(c, 16.75, math.pi / 2, math.pi, 14), ["ns_sb_out"], "intersection", V_INT, movement="ew")
    add("int_nb_thru", [(216.75, -15), (216.75, 15)], ["ns_nb_out"], "intersection", V_INT, movement="ns")
    add("int_sb_thru", [(213.25, 15), (213.25, -15)], ["ns_sb_out"], "intersection", V_INT, movement="ns")
    # link to the roundabout
    add("link_eb", [(230, -1.75), (330, -1.75)], ["rb_in_w"])
    add("link_wb", [(330, 1.75), (230, 1.75)], ["int_wb_thru", "int_wb_left"])
    # roundabout
    O = np.array([355.0, 0.0])
    R = 18.0
    ang = {"w": math.pi, "s": 1.5 * math.pi, "e": 2 * math.pi, "n": 2.5 * math.pi}

    def circ(a0, a1):
        return arc_points(O, R, a0, a1)

    # circulating arcs between leg nodes (counter-clockwise: w -> s -> e -> n -> w)
    add("rb_ws", circ(ang["w"], ang["s"]), ["rb_se"], "roundabout", V_RB)
    add("rb_se", circ(ang["s"], ang["e"]), ["rb_en", "rb_out_e"], "roundabout", V_RB)
    add("rb_en", circ(ang["e"], ang["n"]), ["rb_nw", "rb_out_n"], "roundabout", V_RB)
    add("rb_nw", circ(ang["n"], ang["w"] + 2 * math.pi), ["rb_ws", "rb_out_w"], "roundabout", V_RB)
    p_w = O + R * np.array([math.cos(ang["w"]), math.sin(ang["w"])])
    p_e = O + R * np.array([math.cos(ang["e"]), math.sin(ang["e"])])
    p_n = O + R * np.array([math.cos(ang["n"]), math.sin(ang["n"])])
    add("rb_in_w", [(330, -1.75), (p_w[0] - 2.0, -1.2), tuple(p_w)], ["rb_ws"], "roundabout", V_RB)
    add("rb_out_w", [tuple(p_w), (p_w[0] - 2.0, 1.2), (330, 1.75)], ["link_wb"], "roundabout", V_RB)
    add("rb_in_e", [(420, 1.75), (p_e[0] + 2.0, 1.2), tuple(p_e)], ["rb_en"], "roundabout", V_RB)
    add("rb_out_e", [tuple(p_e), (p_e[0] + 2.0, -1.2), (420, -1.75)], ["east_eb"], "roundabout", V_RB)
    add("rb_in_n", [(356.75, 80), (356.75, p_n[1] + 4.0), tuple(p_n)], ["rb_nw"], "roundabout", V_RB)
    add("rb_out_n", [tuple(p_n), (353.25, p_n[1] + 4.0), (353.25, 80)], [], "roundabout", V_RB)
    add("east_eb", [(420, -1.75), (480, -1.75)], [])

    zones = []
    L = lanes
    for a, b in (("int_eb_thru", "int_nb_thru"), ("int_eb_thru", "int_sb_thru"),
                 ("int_wb_thru", "int_nb_thru"), ("int_wb_thru", "int_sb_thru"),
                 ("int_eb_left", "int_sb_thru"), ("int_wb_left", "int_nb_thru")):
        zones.append(crossing_zone(L[a], L[b], "signal"))
    # left turns end on the cross street's through lane
    zones.append(merge_zone(L["int_eb_left"], L["int_nb_thru"], "signal", location_class="intersection"))
    zones.append(merge_zone(L["int_wb_left"], L["int_sb_thru"], "signal", location_class="intersection"))
    # permissive lefts yield to opposing through traffic
    zones.append(crossing_zone(L["int_eb_thru"], L["int_wb_left"], "lane_a"))
    zones.append(crossing_zone(L["int_wb_thru"], L["int_eb_left"], "lane_a"))
    # roundabout entries yield to circulating traffic
    zones.append(merge_zone(L["rb_nw"], L["rb_in_w"], "lane_a"))
    zones.append(merge_zone(L["rb_se"], L["rb_in_e"], "lane_a"))
    zones.append(merge_zone(L["rb_en"], L["rb_in_n"], "lane_a"))

    signals = {
        "main": SignalPlan("main", (
            SignalPhase(25.0, {"ew": "green", "ns": "red"}),
            SignalPhase(3.0, {"ew": "yellow", "ns": "red"}),
            SignalPhase(2.0, {"ew": "red", "ns": "red"}),
            SignalPhase(20.0, {"ew": "red", "ns": "green"}),
            SignalPhase(3.0, {"ew": "red", "ns": "yellow"}),
            SignalPhase(2.0, {"ew": "red", "ns": "red"}),
        ))
    }
    lap = ("art_eb_r", "int_eb_thru", "link_eb", "rb_in_w", "rb_ws", "rb_se", "rb_out_e", "east_eb")
    routes = {"lap": lap}
    sources = (
        Source("art_eb_r", 18.0, 250.0, lap),
        Source("art_eb_l", 12.0, 150.0, ("art_eb_l", "int_eb_left", "ns_nb_out")),
        Source("link_wb", 15.0, 300.0, ("link_wb", "int_wb_thru", "art_wb_r")),
        Source("ns_nb_in", 10.0, 200.0, ("ns_nb_in", "int_nb_thru", "ns_nb_out")),
        Source("ns_sb_in", 10.0, 200.0, ("ns_sb_in", "int_sb_thru", "ns_sb_out")),
        Source("rb_in_e", 10.0, 200.0, ("rb_in_e", "rb_en", "rb_nw", "rb_out_w", "link_wb", "int_wb_thru", "art_wb_r")),
        Source("rb_in_n", 10.0, 150.0, ("rb_in_n", "rb_nw", "rb_ws", "rb_se", "rb_out_e", "east_eb")),
    )
    return RoadNetwork("desk", lanes, tuple(zones), signals, routes, sources)


def builtin_network(name: str = "desk", **kwargs) -> RoadNetwork:
    if name == "desk":
        return desk_network()
    if name == "ring":
        return ring_network(**kwargs)
    if name == "corridor":
        return corridor_network(**kwargs)
    raise KeyError(f"unknown built-in network {name!r}")


def resolve_network(spec) -> RoadNetwork:
    """A network from a built-in name (``builtin:desk``) or a file path."""
    if isinstance(spec, RoadNetwork):
        return spec
    spec = str(spec)
    if spec.startswith("builtin:"):
        return builtin_network(spec.split(":", 1)[1])
    return load_network(spec)
