"""Driver licensing test: calibrated scenario cases with scripted challengers.

Each scenario places the AV on a small purpose-built layout and scripts one
open-loop challenger (constant speed, optional sine lateral profile) on a
collision course. Two axes span the case space: a relative speed and a
distance. The AV's required deceleration at every point is ranked against a
calibrated distribution of human decelerations to bin the point into a risk
level; the test cases are the centers of grid cells of the low, mid and high
levels.

Required-action formulas:

* ``longitudinal``: the challenger ends up ahead on the AV's path at constant
  speed. With closing speed ``dv`` and (virtual) bumper gap ``g`` the AV needs
  ``a = -dv**2 / (2 g)``. For merges the gap is virtual: AV distance to the
  merge point minus the challenger's.
* ``crossing``: the challenger occupies the AV's corridor during a window; the
  AV must not reach the first occupied arc before the window closes.
* ``signal``: the light turns yellow at t = 0; the AV needs no action if it
  crosses the stop line before red at its current speed, else ``-v**2 / 2D``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .geometry import Polyline, arc_points, box_corners, box_distance
from .policies import PolicyError
from .rng import derived_int
from .road import Lane, RoadNetwork, SignalPhase, SignalPlan, crossing_zone, signal_state
from .sim import (JointAction, ScriptPose, Vehicle, WorldState, classify_crash, detect_crash,
                  make_observation, step, update_pose)

SCENARIO_IDS = (
    "cut_in", "car_following", "lane_departure_same", "lane_departure_opposite",
    "left_turn_av_straight", "left_turn_av_turns", "right_turn_av_straight", "right_turn_av_turns",
    "vru_jaywalk", "vru_crosswalk", "av_roundabout_merge", "bv_roundabout_merge",
    "vehicle_encroachment", "traffic_signal",
)
FORMULAS = ("longitudinal", "crossing", "signal")
INFEASIBLE = None  # required_decel's marker for an unavoidable or out-of-bound case


class DltError(ValueError):
    pass


# ---------------------------------------------------------------- calibration
class EmpiricalCdf:
    """Distribution of observed human decelerations (m/s^2, negative = braking).

    Built from raw samples or from a pre-binned CDF (knot values with
    cumulative fractions, linearly interpolated).
    """

    def __init__(self, samples=None, *, knots=None, fractions=None):
        if samples is not None:
            x = np.sort(np.asarray(samples, float).ravel())
            if x.size == 0:
                raise DltError("empty calibration sample")
            self.values = x
            self._binned = None
        else:
            x = np.asarray(knots, float)
            f = np.asarray(fractions, float)
            if x.size < 2 or x.shape != f.shape:
                raise DltError("binned CDF needs matching knots and fractions")
            if np.any(np.diff(x) <= 0) or np.any(np.diff(f) < 0) or f[0] < 0 or f[-1] != 1.0:
                raise DltError("binned CDF must be increasing in value and end at 1")
            self.values = x
            self._binned = f

    @property
    def n(self) -> int:
        return int(self.values.size)

    def fraction_at_or_below(self, a):
        """Share of observed decelerations at least as strong as ``a`` (value <= a)."""
        a = np.asarray(a, float)
        if self._binned is None:
            out = np.searchsorted(self.values, a, side="right") / self.values.size
        else:
            out = np.interp(a, self.values, self._binned, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def _positions(self) -> np.ndarray:
        n = self.values.size
        if n <= 2:
            return np.linspace(0.0, 1.0, n)
        return np.concatenate([[0.0], (np.arange(2, n) - 0.5) / n, [1.0]])

    def percentile(self, x):
        """Hazen plotting-position percentile, pinned to 0 at the sample minimum and 1 at its maximum."""
        x = np.asarray(x, float)
        if self._binned is not None:
            out = np.interp(x, self.values, self._binned, left=0.0, right=1.0)
        elif self.values.size == 1:
            out = np.where(x < self.values[0], 0.0, 1.0)
        else:
            out = np.interp(x, self.values, self._positions())
        return out if np.ndim(out) else float(out)

    def quantile(self, p: float) -> float:
        """Inverse of :meth:`percentile`."""
        if self._binned is not None:
            return float(np.interp(p, self._binned, self.values))
        if self.values.size == 1:
            return float(self.values[0])
        return float(np.interp(p, self._positions(), self.values))

    def to_dict(self) -> dict:
        if self._binned is None:
            return {"samples": self.values.tolist()}
        return {"knots": self.values.tolist(), "fractions": self._binned.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalCdf":
        if "samples" in d:
            return cls(d["samples"])
        if "knots" in d:
            return cls(knots=d["knots"], fractions=d["fractions"])
        raise DltError("calibration entry needs 'samples' or 'knots'/'fractions'")


def load_calibration(path) -> dict:
    """Scenario id -> EmpiricalCdf from a YAML calibration file."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    return {k: EmpiricalCdf.from_dict(v) for k, v in raw.items()}


class RiskLevel(enum.IntEnum):
    TRIVIAL = 0
    LOW = 1
    MID = 2
    HIGH = 3
    INFEASIBLE = 4

    def __str__(self):
        return self.name.lower()


TESTED_LEVELS = (RiskLevel.LOW, RiskLevel.MID, RiskLevel.HIGH)


def risk_level(a_req, cdf: EmpiricalCdf, physical_bound: float) -> RiskLevel:
    """Bin a required deceleration by how many humans brake at least that hard."""
    if a_req is INFEASIBLE or -a_req > physical_bound:
        return RiskLevel.INFEASIBLE
    p = cdf.fraction_at_or_below(a_req)
    if p > 0.80:
        return RiskLevel.TRIVIAL
    if p > 0.10:
        return RiskLevel.LOW
    if p > 0.01:
        return RiskLevel.MID
    return RiskLevel.HIGH


# ---------------------------------------------------------------- scenario specs
@dataclass(frozen=True)
class Axis:
    name: str
    unit: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DltError(f"axis {self.name}: range [{self.lo}, {self.hi}] is degenerate")


@dataclass(frozen=True)
class GridConfig:
    """Cell size per axis for each tested risk level."""

    low: tuple = (2.0, 4.0)
    mid: tuple = (1.0, 2.0)
    high: tuple = (0.5, 1.0)

    def __post_init__(self):
        for a, b in ((self.high, self.mid), (self.mid, self.low)):
            if any(x <= 0 or y <= 0 or x > y for x, y in zip(a, b)):
                raise DltError("cell sizes must be positive and satisfy high <= mid <= low")

    def size(self, level: RiskLevel) -> tuple:
        return {RiskLevel.LOW: self.low, RiskLevel.MID: self.mid, RiskLevel.HIGH: self.high}[level]


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    layout: str
    challenger: str
    formula: str
    axes: tuple  # (relative speed axis, distance axis)
    grid: GridConfig = field(default_factory=GridConfig)
    physical_bound: float = 6.0
    av_speed: float = 12.0  # AV speed for longitudinal scenarios
    challenger_speed: float = 8.0  # challenger speed for crossing scenarios
    runs: int = 3
    horizon: float = 8.0
    dt: float = 0.1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise DltError(f"unknown scenario id {self.id!r}")
        if self.layout not in LAYOUTS:
            raise DltError(f"unknown layout {self.layout!r}")
        if self.challenger not in CHALLENGERS:
            raise DltError(f"unknown challenger {self.challenger!r}")
        if self.formula not in FORMULAS:
            raise DltError(f"unknown required-action formula {self.formula!r}")
        if len(self.axes) != 2:
            raise DltError("a scenario has exactly two axes")
        if self.runs < 1:
            raise DltError("runs must be >= 1")

    def to_dict(self) -> dict:
        return {"id": self.id, "layout": self.layout, "challenger": self.challenger, "formula": self.formula,
                "axes": [[a.name, a.unit, a.lo, a.hi] for a in self.axes],
                "grid": {"low": list(self.grid.low), "mid": list(self.grid.mid), "high": list(self.grid.high)},
                "physical_bound": self.physical_bound, "av_speed": self.av_speed,
                "challenger_speed": self.challenger_speed, "runs": self.runs, "horizon": self.horizon,
                "dt": self.dt, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["axes"] = tuple(Axis(*a) if isinstance(a, (list, tuple)) else Axis(**a) for a in d["axes"])
        if "grid" in d:
            d["grid"] = GridConfig(**{k: tuple(v) for k, v in d["grid"].items()})
        return cls(**d)


def load_suite(path) -> list[ScenarioSpec]:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "scenarios" not in raw:
        raise DltError("suite file needs a 'scenarios' list")
    return [ScenarioSpec.from_dict(s) for s in raw["scenarios"]]


def default_suite_path() -> Path:
    return Path(__file__).parent / "data" / "dlt_suite.yaml"


def default_calibration_path() -> Path:
    return Path(__file__).parent / "data" / "dlt_calibration.yaml"


# ---------------------------------------------------------------- layouts
W = 3.5
AV_LENGTH, AV_WIDTH = 4.8, 2.0


def _lane(lid, pts, succ=(), v=15.0, cls="arterial", left=None, right=None, movement=None):
    return Lane(lid, tuple(tuple(map(float, p)) for p in np.asarray(pts, float)), W, v, tuple(succ),
                left, right, cls, movement)


def _layout_straight():
    lanes = {
        "a0": _lane("a0", [(-100, 0), (700, 0)], left="a1"),
        "a1": _lane("a1", [(-100, W), (700, W)], right="a0"),
        "o0": _lane("o0", [(700, 2 * W), (-100, 2 * W)]),
    }
    return RoadNetwork("dlt-straight", lanes, routes={"av": ("a0",)})


def _layout_two_way():
    lanes = {
        "a0": _lane("a0", [(-100, 0), (700, 0)], cls="intersection"),
        "o0": _lane("o0", [(700, W), (-100, W)], cls="intersection"),
    }
    return RoadNetwork("dlt-two-way", lanes, routes={"av": ("a0",)})


def _layout_turn_left():
    lanes = {
        "ap": _lane("ap", [(-100, 0), (100, 0)], ["tl"]),
        "tl": _lane("tl", arc_points((100.0, 20.0), 20.0, -math.pi / 2, 0.0, 24), ["nb"], 8.0, "intersection"),
        "nb": _lane("nb", [(120, 20), (120, 400)]),
        "o0": _lane("o0", [(700, W), (-100, W)], cls="intersection"),
    }
    # oncoming traffic has priority over the left turn
    zone = crossing_zone(lanes["tl"], lanes["o0"], priority="lane_b")
    return RoadNetwork("dlt-turn-left", lanes, (zone,), routes={"av": ("ap", "tl", "nb")})


def _layout_turn_right():
    lanes = {
        "ap": _lane("ap", [(-100, 0), (100, 0)], ["tr"]),
        "tr": _lane("tr", arc_points((100.0, -15.0), 15.0, math.pi / 2, 0.0, 20), ["sb"], 8.0, "intersection"),
        "sb": _lane("sb", [(115, -15), (115, -400)]),
    }
    return RoadNetwork("dlt-turn-right", lanes, routes={"av": ("ap", "tr", "sb")})


RB_CENTER, RB_RADIUS = (0.0, 0.0), 25.0
RB_JOIN = 1.5 * math.pi  # entry leg meets the ring tangentially at its south point


def _ring(a0, a1):
    return arc_points(RB_CENTER, RB_RADIUS, a0, a1, max(8, int(abs(a1 - a0) * RB_RADIUS / 1.5)))


def _rb_join_point():
    return (RB_RADIUS * math.cos(RB_JOIN), RB_RADIUS * math.sin(RB_JOIN))


def _rb_entry_points():
    jx, jy = _rb_join_point()
    return [(jx - 200.0, jy), (jx, jy)]


def _layout_roundabout_entry():
    lanes = {
        "rb_ap": _lane("rb_ap", _rb_entry_points(), ["rb_ring"], 8.0, "roundabout"),
        "rb_ring": _lane("rb_ring", _ring(RB_JOIN, RB_JOIN + 1.5 * math.pi), [], 8.0, "roundabout"),
    }
    return RoadNetwork("dlt-roundabout-entry", lanes, routes={"av": ("rb_ap", "rb_ring")})


def _layout_roundabout_ring():
    lanes = {
        "rb_ring": _lane("rb_ring", _ring(RB_JOIN - 1.5 * math.pi, RB_JOIN + 1.5 * math.pi), [], 8.0, "roundabout"),
    }
    return RoadNetwork("dlt-roundabout-ring", lanes, routes={"av": ("rb_ring",)})


STOP_LINE_X = 200.0


def _layout_signal(yellow: float = 3.0):
    plan = SignalPlan("dlt", (SignalPhase(yellow, {"ew": "yellow"}), SignalPhase(600.0, {"ew": "red"})))
    lanes = {
        "ap": _lane("ap", [(-100, 0), (STOP_LINE_X, 0)], ["box"]),
        "box": _lane("box", [(STOP_LINE_X, 0), (STOP_LINE_X + 30, 0)], ["ex"], 15.0, "intersection", movement="ew"),
        "ex": _lane("ex", [(STOP_LINE_X + 30, 0), (700, 0)]),
    }
    return RoadNetwork("dlt-signal", lanes, signals={"dlt": plan}, routes={"av": ("ap", "box", "ex")})


def _with_speed_limit(net: RoadNetwork, v: float) -> RoadNetwork:
    """Same layout with every lane limited to ``v`` so the AV starts at its free speed."""
    lanes = {k: replace(l, speed_limit=v) for k, l in net.lanes.items()}
    return RoadNetwork(net.name, lanes, net.conflict_zones, net.signals, net.routes, net.sources)


LAYOUTS = {
    "straight": _layout_straight,
    "two_way": _layout_two_way,
    "turn_left": _layout_turn_left,
    "turn_right": _layout_turn_right,
    "roundabout_entry": _layout_roundabout_entry,
    "roundabout_ring": _layout_roundabout_ring,
    "signal": _layout_signal,
}


# ---------------------------------------------------------------- scripts
@dataclass
class PathScript:
    """Constant-speed motion along a polyline with an optional lateral profile.

    ``lateral`` is ``(kind, t_start, tau, span, base)``: ``step`` moves from
    ``base`` to ``base + span`` along ``(1 - cos)/2``; ``pulse`` goes out to
    ``base + span`` and back along ``sin^2``.
    """

    path: Polyline
    speed: float
    s0: float
    lateral: tuple | None = None
    lane: str | None = None  # network lane the path runs along, reported while on it
    lane_length: float = 0.0

    def offset(self, t: float) -> tuple[float, float]:
        if self.lateral is None:
            return 0.0, 0.0
        kind, t0, tau, span, base = self.lateral
        u = min(max((t - t0) / tau, 0.0), 1.0)
        inside = 0.0 < (t - t0) / tau < 1.0
        if kind == "step":
            return base + span * 0.5 * (1 - math.cos(math.pi * u)), (
                span * math.pi / (2 * tau) * math.sin(math.pi * u) if inside else 0.0)
        return base + span * math.sin(math.pi * u) ** 2, (
            span * math.pi / tau * math.sin(2 * math.pi * u) if inside else 0.0)

    def at(self, t: float) -> ScriptPose:
        s = self.s0 + self.speed * t
        off, rate = self.offset(t)
        x, y, h = self.path.pose(s, off)
        if rate:
            h += math.atan2(rate, max(self.speed, 1.0))
        lane = self.lane if self.lane is not None and 0.0 <= s <= self.lane_length else None
        return ScriptPose(x, y, h, self.speed, lane, s, off, rate)


@dataclass
class ScenarioInstance:
    spec: ScenarioSpec
    point: tuple
    network: RoadNetwork
    route: tuple
    av: Vehicle
    challenger: Vehicle | None
    inputs: dict  # formula inputs

    @cached_property
    def av_path(self) -> Polyline:
        return Polyline(np.concatenate([self.network.lanes[l].polyline.points for l in self.route]))

    def av_front_arc(self, veh: Vehicle | None = None) -> float:
        v = veh or self.av
        s, _ = self.av_path.project((v.x, v.y))
        return s + v.length / 2.0


def _scripted(vid, kind, script: PathScript, length=AV_LENGTH, width=AV_WIDTH, in_crosswalk=False):
    p = script.at(0.0)
    return Vehicle(vid, kind, None, p.arc, p.offset, p.speed, 0.0, length, width, x=p.x, y=p.y,
                   heading=p.heading, lat_rate=p.lat_rate, script=script, in_crosswalk=in_crosswalk)


def _path_arc_of(path: Polyline, point) -> float:
    s, _ = path.project(point)
    return s


AV_START_X = 0.0


def _place_av(network, route, speed, arc=None):
    lane = route[0]
    if arc is None:
        arc, _ = network.lanes[lane].polyline.project((AV_START_X, network.lanes[lane].polyline.points[0][1]))
    av = Vehicle("av", "av", lane, arc, 0.0, speed, 0.0, AV_LENGTH, AV_WIDTH, tuple(route), 0)
    update_pose(network, av)
    return av


def _longitudinal_point(spec, point):
    dv, g = point
    v_av = spec.av_speed
    return dv, g, v_av, max(v_av - dv, 0.0)


# each challenger builder returns (challenger vehicle or None, formula inputs)
def _ch_lead(spec, point, net, av, mode):
    """Same-direction challenger ahead; ``mode`` sets its lateral behavior."""
    dv, g, v_av, v_ch = _longitudinal_point(spec, point)
    path = net.lanes["a0"].polyline
    s = av.arc + av.length / 2 + g + AV_LENGTH / 2
    if mode == "lead":
        lat = None
    elif mode == "cut_in":
        # at t = 0 the challenger straddles the lane line, half-way through a 3 s change
        tau = spec.params.get("tau", 3.0)
        lat = ("step", -tau / 2, tau, -W, W)
    else:  # partial departure from the adjacent lane
        edge = W / 2 + AV_WIDTH / 2
        lat = ("step", 0.0, spec.params.get("tau", 1.0), spec.params.get("intrusion_to", 1.5) - edge, edge)
    return _scripted("ch", "bv", PathScript(path, v_ch, s, lat)), {"dv": dv, "g": g}


def _ch_cut_in(spec, point, net, av):
    return _ch_lead(spec, point, net, av, "cut_in")


def _ch_car_following(spec, point, net, av):
    return _ch_lead(spec, point, net, av, "lead")


def _ch_drift_same(spec, point, net, av):
    return _ch_lead(spec, point, net, av, "drift")


def _ch_stationary(spec, point, net, av):
    v, g = point
    av.speed = v
    path = net.lanes["a0"].polyline
    s = av.arc + av.length / 2 + g + AV_LENGTH / 2
    off = -spec.params.get("encroach_offset", 1.2)
    return _scripted("ch", "bv", PathScript(path, 0.0, s, ("step", 0.0, 1.0, 0.0, off))), {"dv": v, "g": g}


def _crossing_point(av_path: Polyline, ch_path: Polyline, s_min: float):
    """First intersection of the challenger's centerline with the AV path beyond ``s_min``."""
    best = None
    P, Q = av_path.points, ch_path.points
    for i in range(len(P) - 1):
        for j in range(len(Q) - 1):
            p, r = P[i], P[i + 1] - P[i]
            q, s = Q[j], Q[j + 1] - Q[j]
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-12:
                continue
            t = ((q - p)[0] * s[1] - (q - p)[1] * s[0]) / den
            u = ((q - p)[0] * r[1] - (q - p)[1] * r[0]) / den
            if 0 <= t <= 1 and 0 <= u <= 1:
                arc = av_path.cum[i] + t * av_path.seglen[i]
                if arc >= s_min and (best is None or arc < best[0]):
                    best = (arc, tuple(p + t * r))
    if best is None:
        raise DltError("challenger path does not cross the AV path")
    return best[1]


def _place_crossing(spec, point, net, av, ch_pts, **kw):
    """Put the AV so the first crossing lies ``d`` ahead of its front, then time the challenger."""
    v_av, d = point
    route = net.routes["av"]
    path = Polyline(np.concatenate([net.lanes[l].polyline.points for l in route]))
    ch_path = Polyline(ch_pts)
    cp = _crossing_point(path, ch_path, 0.0)
    s_cp = _path_arc_of(path, cp)
    s_front = s_cp - d
    # route arc -> (lane, arc)
    rem = s_front - av.length / 2
    lane_i = 0
    while lane_i < len(route) - 1 and rem > net.lanes[route[lane_i]].length:
        rem -= net.lanes[route[lane_i]].length
        lane_i += 1
    if rem < 0:
        raise DltError("distance axis exceeds the approach length")
    av.lane, av.arc, av.route_index, av.speed = route[lane_i], rem, lane_i, v_av
    update_pose(net, av)
    t_c = d / max(v_av, 1e-6)
    s0 = _path_arc_of(ch_path, cp) - spec.challenger_speed * t_c
    lat = kw.pop("lateral", None)
    script = PathScript(ch_path, spec.challenger_speed, s0, lat)
    return _scripted("ch", kw.pop("kind", "bv"), script, kw.pop("length", AV_LENGTH), kw.pop("width", AV_WIDTH),
                     kw.pop("crosswalk", False)), {}


def _ch_left_turn_oncoming(spec, point, net, av):
    xc = 150.0
    pts = np.concatenate([[(xc + 300, W)], arc_points((xc + 10, W - 10), 10.0, math.pi / 2, math.pi, 16),
                          [(xc, -300)]])
    return _place_crossing(spec, point, net, av, pts)


def _ch_straight_oncoming(spec, point, net, av):
    ch, inputs = _place_crossing(spec, point, net, av, net.lanes["o0"].polyline.points)
    ch.script.lane, ch.script.lane_length = "o0", net.lanes["o0"].length
    p = ch.script.at(0.0)
    ch.lane, ch.arc = p.lane, p.arc
    return ch, inputs


def _ch_pedestrian(spec, point, net, av, crosswalk):
    xc = 150.0
    return _place_crossing(spec, point, net, av, [(xc, -40), (xc, 40)], kind="vru", length=0.6, width=0.6,
                           crosswalk=crosswalk)


def _ch_jaywalker(spec, point, net, av):
    return _ch_pedestrian(spec, point, net, av, False)


def _ch_crosswalk(spec, point, net, av):
    return _ch_pedestrian(spec, point, net, av, True)


def _ch_drift_opposite(spec, point, net, av):
    """Oncoming vehicle drifts into the AV lane and back over ``tau`` seconds from t = 0.

    The distance axis is the initial front-to-front gap.
    """
    v_av, d = point
    intrusion = spec.params.get("intrusion_to", 1.0)  # lateral position of its center at the peak
    tau = spec.params.get("tau", 3.0)
    path = net.lanes[net.routes["av"][0]].polyline
    x_front = path.pose(av.arc + av.length / 2 + d)[0]
    ch_path = Polyline([(700, W), (-300, W)])
    s0 = _path_arc_of(ch_path, (x_front, W)) + AV_LENGTH / 2
    # offsets are left-positive in the challenger's (westbound) frame: toward the AV lane is +
    lat = ("pulse", 0.0, tau, W - intrusion, 0.0)
    return _scripted("ch", "bv", PathScript(ch_path, spec.challenger_speed, s0, lat)), {}


def _merge_challenger(spec, point, net, av, ch_path: Polyline, merge_xy, s_av_merge):
    """Virtual-gap placement: challenger rear is ``g`` ahead of the AV front as if on one line."""
    dv, g, v_av, v_ch = _longitudinal_point(spec, point)
    av_path = Polyline(np.concatenate([net.lanes[l].polyline.points for l in net.routes["av"]]))
    s_front = _path_arc_of(av_path, (av.x, av.y)) + av.length / 2
    d_av = s_av_merge - s_front
    s_m = _path_arc_of(ch_path, merge_xy)
    s_center = s_m - (d_av - g) + AV_LENGTH / 2
    return _scripted("ch", "bv", PathScript(ch_path, v_ch, s_center)), {"dv": dv, "g": g}


def _ch_right_turn_merge(spec, point, net, av):
    """Side-street vehicle turns right into the AV lane ahead."""
    xm = AV_START_X + spec.params.get("merge_distance", 45.0)
    pts = np.concatenate([[(xm - 12, -300)], arc_points((xm, -12.0), 12.0, math.pi, math.pi / 2, 14)[:-1],
                          [(xm, 0.0), (700, 0.0)]])
    av_path = net.lanes["a0"].polyline
    return _merge_challenger(spec, point, net, av, Polyline(pts), (xm, 0.0), _path_arc_of(av_path, (xm, 0.0)))


def _ch_cross_street_through(spec, point, net, av):
    """AV turns right behind a through vehicle already on the target street."""
    merge = (115.0, -15.0)
    ch_path = Polyline([(115.0, 300.0), (115.0, -400.0)])
    av_path = Polyline(np.concatenate([net.lanes[l].polyline.points for l in net.routes["av"]]))
    s_m = _path_arc_of(av_path, merge)
    # start the AV so its front is merge_distance from the merge point
    d = spec.params.get("merge_distance", 40.0)
    s_front = s_m - d
    av.arc = s_front - av.length / 2
    update_pose(net, av)
    return _merge_challenger(spec, point, net, av, ch_path, merge, s_m)


def _ch_ring_circulating(spec, point, net, av):
    """Circulating vehicle passes the entry just ahead of the entering AV."""
    jx, jy = _rb_join_point()
    ch_path = Polyline(_ring(RB_JOIN - 1.5 * math.pi, RB_JOIN + 1.5 * math.pi))
    av_path = Polyline(np.concatenate([net.lanes[l].polyline.points for l in net.routes["av"]]))
    s_m = _path_arc_of(av_path, (jx, jy))
    av.arc = s_m - spec.params.get("merge_distance", 40.0) - av.length / 2
    update_pose(net, av)
    return _merge_challenger(spec, point, net, av, ch_path, (jx, jy), s_m)


def _ch_ring_entering(spec, point, net, av):
    """Entering vehicle joins the ring just ahead of the circulating AV."""
    jx, jy = _rb_join_point()
    ch_path = Polyline(np.concatenate([_rb_entry_points()[:1], _ring(RB_JOIN, RB_JOIN + 1.5 * math.pi)]))
    av_path = net.lanes["rb_ring"].polyline
    s_m = _path_arc_of(av_path, (jx, jy))
    av.arc = s_m - spec.params.get("merge_distance", 40.0) - av.length / 2
    update_pose(net, av)
    return _merge_challenger(spec, point, net, av, ch_path, (jx, jy), s_m)


def _ch_none(spec, point, net, av):
    v, d = point
    av.speed = v
    av.arc = net.lanes["ap"].length - d - av.length / 2
    if av.arc < 0:
        raise DltError("distance axis exceeds the approach length")
    update_pose(net, av)
    return None, {"v": v, "D": d, "yellow": spec.params.get("yellow", 3.0)}


CHALLENGERS = {
    "cut_in_sine": _ch_cut_in,
    "lead_constant": _ch_car_following,
    "drift_same": _ch_drift_same,
    "drift_opposite": _ch_drift_opposite,
    "left_turn_oncoming": _ch_left_turn_oncoming,
    "straight_oncoming": _ch_straight_oncoming,
    "right_turn_merge": _ch_right_turn_merge,
    "cross_street_through": _ch_cross_street_through,
    "jaywalker": _ch_jaywalker,
    "crosswalk_pedestrian": _ch_crosswalk,
    "ring_circulating": _ch_ring_circulating,
    "ring_entering": _ch_ring_entering,
    "stationary_obstacle": _ch_stationary,
    "none": _ch_none,
}


def build_instance(spec: ScenarioSpec, point) -> ScenarioInstance:
    """Network, AV and scripted challenger for one parameter point."""
    point = tuple(float(x) for x in point)
    if spec.layout == "signal":
        net = _layout_signal(spec.params.get("yellow", 3.0))
    else:
        net = LAYOUTS[spec.layout]()
    route = net.routes["av"]
    speed = point[0] if spec.formula != "longitudinal" or spec.challenger == "stationary_obstacle" else spec.av_speed
    net = _with_speed_limit(net, max(speed, 1.0))
    av = _place_av(net, route, speed, arc=100.0 if route[0] in ("a0", "ap") else 0.0)
    ch, inputs = CHALLENGERS[spec.challenger](spec, point, net, av)
    return ScenarioInstance(spec, point, net, tuple(route), av, ch, inputs)


# ---------------------------------------------------------------- required action
def longitudinal_decel(dv: float, g: float):
    """``-dv^2 / 2g`` for closing speed ``dv`` over bumper gap ``g``; infeasible if ``g <= 0``."""
    if g <= 0:
        return INFEASIBLE
    if dv <= 0:
        return 0.0
    return -dv * dv / (2.0 * g)


def crossing_decel(D: float, v: float, t_out: float):
    """Weakest constant deceleration keeping the AV front short of ``D`` until ``t_out``."""
    if D <= 0:
        return INFEASIBLE
    if v * t_out <= D:
        return 0.0
    a = 2.0 * (D - v * t_out) / (t_out * t_out)
    if v + a * t_out >= 0:
        return a
    return -v * v / (2.0 * D)  # stop short of the zone


def signal_decel(D: float, v: float, yellow: float):
    if D <= 0:
        return INFEASIBLE
    if v * yellow > D:
        return 0.0
    return -v * v / (2.0 * D)


def _project_many(path: Polyline, pts: np.ndarray):
    """Vectorized :meth:`Polyline.project` for an (M, 2) array: (arcs, signed laterals)."""
    a = path.points[:-1]
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mkj,kj->mk", rel, path.seg) / path.seglen**2, 0.0, 1.0)
    foot = a[None] + t[..., None] * path.seg[None]
    d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=2)
    k = np.argmin(d2, axis=1)
    m = np.arange(len(pts))
    s = path.cum[k] + t[m, k] * path.seglen[k]
    r = rel[m, k]
    cross = path.seg[k, 0] * r[:, 1] - path.seg[k, 1] * r[:, 0]
    return s, np.sign(cross) * np.sqrt(d2[m, k])


def crossing_window(inst: ScenarioInstance, dt: float = 0.01):
    """(D, t_out): distance from the AV front to the first arc the challenger occupies
    in the AV corridor, and the time it last occupies it. None if it never enters."""
    ch = inst.challenger
    path = inst.av_path
    s_front0 = inst.av_front_arc()
    half = inst.av.width / 2.0
    times = np.arange(0.0, inst.spec.horizon + 1e-9, dt)
    poses = np.array([ch.script.at(float(t))[:3] for t in times])
    corners = box_corners(poses[:, 0], poses[:, 1], poses[:, 2], ch.length, ch.width)
    corners = np.asarray(corners).reshape(len(times), 4, 2)
    s, lat = _project_many(path, corners.reshape(-1, 2))
    s, lat = s.reshape(-1, 4), lat.reshape(-1, 4)
    inside = (lat.max(axis=1) >= -half) & (lat.min(axis=1) <= half)
    inside &= s.max(axis=1) >= s_front0 - inst.av.length  # ignore anything behind the AV
    if not inside.any():
        return None
    z0 = float(s[inside].min())
    t_out = float(times[np.flatnonzero(inside)[-1]])
    return z0 - s_front0, t_out + dt


def required_decel(spec: ScenarioSpec, point):
    """Required AV acceleration (<= 0, m/s^2) at ``point``, or ``INFEASIBLE``."""
    inst = point if isinstance(point, ScenarioInstance) else build_instance(spec, point)
    if spec.formula == "longitudinal":
        a = longitudinal_decel(inst.inputs["dv"], inst.inputs["g"])
    elif spec.formula == "signal":
        a = signal_decel(inst.inputs["D"], inst.inputs["v"], inst.inputs["yellow"])
    else:
        win = crossing_window(inst)
        a = 0.0 if win is None else crossing_decel(win[0], inst.av.speed, win[1])
    if a is not INFEASIBLE and -a > spec.physical_bound:
        return INFEASIBLE
    return a


# ---------------------------------------------------------------- case generation
@dataclass
class DltMetrics:
    d_min: float | None = None
    ttc_min: float | None = None
    t_react: float | None = None

    def to_dict(self) -> dict:
        return {"d_min": self.d_min, "ttc_min": self.ttc_min, "t_react": self.t_react}


@dataclass
class RunOutcome:
    seed: int
    crashed: bool
    event: dict | None
    metrics: DltMetrics

    def to_dict(self) -> dict:
        return {"seed": self.seed, "crashed": self.crashed, "event": self.event, "metrics": self.metrics.to_dict()}


@dataclass
class TestCase:
    scenario: str
    index: int
    point: tuple
    risk: RiskLevel
    a_req: float | None
    runs: int = 3
    outcomes: list = field(default_factory=list)
    inconclusive: str | None = None

    __test__ = False  # not a pytest class

    @property
    def failed(self) -> bool:
        return any(o.crashed for o in self.outcomes)

    @property
    def verdict(self) -> str:
        if self.inconclusive:
            return "inconclusive"
        if not self.outcomes:
            return "pending"
        return "fail" if self.failed else "pass"

    def mean_metrics(self) -> DltMetrics:
        def mean(vals):
            vals = [v for v in vals if v is not None]
            return sum(vals) / len(vals) if vals else None

        return DltMetrics(mean(o.metrics.d_min for o in self.outcomes),
                          mean(o.metrics.ttc_min for o in self.outcomes),
                          mean(o.metrics.t_react for o in self.outcomes))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "index": self.index, "point": list(self.point), "risk": str(self.risk),
                "a_req": self.a_req, "runs": self.runs, "verdict": self.verdict,
                "inconclusive": self.inconclusive, "outcomes": [o.to_dict() for o in self.outcomes]}


def _cells(lo, hi, size):
    """Centers of cells of ``size`` tiling [lo, hi]; the last cell is clipped at ``hi``."""
    n = max(1, math.ceil((hi - lo) / size - 1e-9))
    edges = [lo + k * size for k in range(n)] + [hi]
    return [(edges[k] + edges[k + 1]) / 2.0 for k in range(n)]


def generate_cases(spec: ScenarioSpec, cdf: EmpiricalCdf, grid: GridConfig | None = None) -> list[TestCase]:
    """One case per grid cell whose center's risk level matches the cell's resolution.

    Each tested level tiles the rectangle at its own cell size; a cell
    contributes when its center is of that level. Trivial and infeasible
    centers never do.
    """
    grid = grid or spec.grid
    ax, ay = spec.axes
    cases = []
    for level in TESTED_LEVELS:
        sx, sy = grid.size(level)
        for x in _cells(ax.lo, ax.hi, sx):
            for y in _cells(ay.lo, ay.hi, sy):
                a = required_decel(spec, (x, y))
                r = risk_level(a, cdf, spec.physical_bound)
                if r == level:
                    cases.append(TestCase(spec.id, len(cases), (x, y), r, a, spec.runs))
    return cases


# ---------------------------------------------------------------- execution
REACT_ACCEL = 0.5  # m/s^2
REACT_LAT_RATE = 0.1  # m/s


def _agent_record(v: Vehicle) -> dict:
    return {"x": v.x, "y": v.y, "heading": v.heading, "speed": v.speed, "accel": v.accel,
            "lat_rate": v.lat_rate, "length": v.length, "width": v.width}


def execute(inst: ScenarioInstance, policy, seed: int):
    """Run one scripted episode; returns (trace records, crash event dict or None)."""
    spec = inst.spec
    state = WorldState(inst.network, 0.0, {"av": replace(inst.av)})
    if inst.challenger is not None:
        state.vehicles["ch"] = replace(inst.challenger)
    policy.reset(inst.network, inst.route, seed)
    records = []
    event = None
    n = int(round(spec.horizon / spec.dt))
    stop_s = None
    if spec.formula == "signal":
        stop_s = inst.network.lanes[inst.route[0]].length
    for _ in range(n):
        obs = make_observation(inst.network, state)
        cmd = policy.observe(obs)
        av = state.vehicles["av"]
        rec = {"t": state.time, "av": _agent_record(av), "cmd": [cmd.accel, cmd.lateral]}
        rec["av"]["accel"] = cmd.accel
        if "ch" in state.vehicles:
            rec["ch"] = _agent_record(state.vehicles["ch"])
        records.append(rec)
        prev_front = _front_arc(inst, av)
        state = step(state, JointAction({}, (cmd.accel, cmd.lateral)), spec.dt)
        if "av" not in state.vehicles:
            break
        pairs = detect_crash(state)
        if ("av", "ch") in pairs:
            ev = classify_crash(state.vehicles["av"], state.vehicles["ch"], time=state.time)
            event = ev.to_dict()
            break
        if stop_s is not None:
            front = _front_arc(inst, state.vehicles["av"])
            if prev_front <= stop_s < front and signal_state(inst.network, "ew", state.time) == "red":
                event = {"time": state.time, "type": "red_light", "pair": ["av"]}
                break
    if "av" in state.vehicles:
        rec = {"t": state.time, "av": _agent_record(state.vehicles["av"]), "cmd": None}
        if "ch" in state.vehicles:
            rec["ch"] = _agent_record(state.vehicles["ch"])
        records.append(rec)
    return records, event


def _front_arc(inst, v):
    s = sum(inst.network.lanes[l].length for l in inst.route[:v.route_index]) + v.arc
    return s + v.length / 2.0


def case_metrics(records, a_req=None, react_accel: float = REACT_ACCEL,
                 react_lat_rate: float = REACT_LAT_RATE) -> DltMetrics:
    """Minimum distance, minimum TTC and reaction time of one run's records."""
    d_min = ttc_min = t_react = None
    t0 = records[0]["t"] if records else 0.0
    for r in records:
        ch = r.get("ch")
        av = r["av"]
        if ch is not None:
            ca = box_corners(av["x"], av["y"], av["heading"], av["length"], av["width"])
            cb = box_corners(ch["x"], ch["y"], ch["heading"], ch["length"], ch["width"])
            d = box_distance(ca, cb)
            d_min = d if d_min is None else min(d_min, d)
            rx, ry = ch["x"] - av["x"], ch["y"] - av["y"]
            norm = math.hypot(rx, ry)
            if norm > 0 and d > 0:
                vx = ch["speed"] * math.cos(ch["heading"]) - av["speed"] * math.cos(av["heading"])
                vy = ch["speed"] * math.sin(ch["heading"]) - av["speed"] * math.sin(av["heading"])
                closing = -(rx * vx + ry * vy) / norm
                if closing > 0:
                    ttc = d / closing
                    ttc_min = ttc if ttc_min is None else min(ttc_min, ttc)
        if t_react is None and a_req != 0.0:
            if abs(av.get("accel", 0.0)) > react_accel or abs(av.get("lat_rate", 0.0)) > react_lat_rate:
                t_react = r["t"] - t0
    return DltMetrics(d_min, ttc_min, t_react)


def run_seed(base_seed: int, scenario: str, case_index: int, run_index: int) -> int:
    return derived_int(base_seed, f"dlt:{scenario}", case_index, run_index)


def run_case(case: TestCase, spec: ScenarioSpec, policy, base_seed: int = 0) -> TestCase:
    """Execute every run of ``case``; protocol failures mark it inconclusive."""
    inst = build_instance(spec, case.point)
    outcomes = []
    for k in range(case.runs):
        seed = run_seed(base_seed, spec.id, case.index, k)
        try:
            records, event = execute(inst, policy, seed)
        except (PolicyError, OSError) as exc:
            return replace(case, outcomes=[], inconclusive=f"policy failure: {exc}")
        metrics = case_metrics(records, case.a_req)
        if event is not None:
            metrics = replace(metrics, d_min=0.0 if inst.challenger is not None else None)
        outcomes.append(RunOutcome(seed, event is not None, event, metrics))
    return replace(case, outcomes=outcomes, inconclusive=None)


# ---------------------------------------------------------------- verdicts
@dataclass
class ScenarioRow:
    scenario: str
    n: int
    verdict: str  # "P" or "F"
    n_pass: int
    n_fail: int
    d_min: float | None = None
    ttc_min: float | None = None
    t_react: float | None = None
    n_inconclusive: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def scenario_verdict(scenario: str, cases) -> ScenarioRow:
    """Table row: fail if any conclusive case failed; metrics only for passing scenarios."""
    conclusive = [c for c in cases if not c.inconclusive]
    n_fail = sum(c.failed for c in conclusive)
    n_pass = len(conclusive) - n_fail
    row = ScenarioRow(scenario, len(conclusive), "F" if n_fail else "P", n_pass, n_fail,
                      n_inconclusive=len(cases) - len(conclusive))
    if not n_fail and conclusive:
        def mean(vals):
            vals = [v for v in vals if v is not None]
            return sum(vals) / len(vals) if vals else None

        ms = [c.mean_metrics() for c in conclusive]
        row.d_min = mean(m.d_min for m in ms)
        row.ttc_min = mean(m.ttc_min for m in ms)
        row.t_react = mean(m.t_react for m in ms)
    return row


def dlt_verdict(rows) -> bool:
    """The AV passes only if every scenario passes."""
    return all(r.verdict == "P" for r in rows)


def format_table(rows) -> str:
    """Plain-text table: scenario, N, P/F, n_p, n_f, mean d_min, TTC_min, t_react."""
    def fmt(v, failed):
        if failed:
            return "-"
        return "N/A" if v is None else f"{v:.2f}"

    head = f"{'scenario':<26}{'N':>5}{'P/F':>5}{'n_p':>6}{'n_f':>6}{'d_min':>8}{'TTC_min':>9}{'t_react':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        f = r.verdict == "F"
        lines.append(f"{r.scenario:<26}{r.n:>5}{r.verdict:>5}{r.n_pass:>6}{r.n_fail:>6}"
                     f"{fmt(r.d_min, f):>8}{fmt(r.ttc_min, f):>9}{fmt(r.t_react, f):>9}")
    return "\n".join(lines) + "\n"
