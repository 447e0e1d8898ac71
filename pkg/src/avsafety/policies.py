"""The black-box boundary: what a driving policy sees and returns.

A policy implements ``reset(network, route, seed)`` and ``observe(obs) ->
AvCommand``. Observations carry ground-truth states of nearby agents and
visible signal states only; nothing derived from the adversarial environment
(criticality, principal vehicle, weights) ever reaches the policy.

Built-in policies:

``surrogate-idm``
    IDM following with cut-in/crossing anticipation, signal stops and yielding.
``flawed``
    Same skeleton with a -3 m/s^2 braking floor, no anticipation and blind to
    pedestrians outside crosswalks.
``full-stop``
    Brakes at -8 m/s^2 from the first step.
``cruise``
    Holds its speed.
"""

from __future__ import annotations

import json
import math
import selectors
import shlex
import subprocess
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .behavior import IdmParams, idm_accel
from .geometry import Polyline
from .road import RoadNetwork, signal_state

SCHEMA_VERSION = 1
ACCEL_MIN, ACCEL_MAX = -8.0, 3.0
LATERAL_OPTIONS = ("keep", "begin_left", "begin_right")
SENSING_RADIUS = 100.0

# fields an observation may carry; anything else is a schema violation
AGENT_FIELDS = ("id", "kind", "x", "y", "heading", "speed", "length", "width", "lane", "arc", "in_crosswalk")
AV_FIELDS = ("x", "y", "heading", "speed", "accel", "lane", "arc", "offset", "route_index", "length", "width")


class PolicyError(RuntimeError):
    """Protocol failure: timeout, crash or malformed reply."""


@dataclass
class AvCommand:
    accel: float = 0.0
    lateral: str = "keep"

    def __post_init__(self):
        if not isinstance(self.accel, (int, float)) or not math.isfinite(self.accel):
            raise PolicyError(f"non-finite accel command {self.accel!r}")
        if self.lateral not in LATERAL_OPTIONS:
            raise PolicyError(f"unknown lateral option {self.lateral!r}")
        self.accel = float(min(max(self.accel, ACCEL_MIN), ACCEL_MAX))


@dataclass
class Observation:
    time: float
    av: dict
    agents: list = field(default_factory=list)
    signals: dict = field(default_factory=dict)
    route: tuple = ()
    route_goal: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["route"] = list(self.route)
        return d


# --------------------------------------------------------------- rule policy


class RulePolicy:
    """Configurable rule-based driver used for the built-in baselines."""

    def __init__(self, name="surrogate-idm", accel_floor=-8.0, anticipate=True, see_all_vru=True,
                 params: IdmParams | None = None, anticipation_horizon=3.0, margin=0.3):
        self.name = name
        self.accel_floor = accel_floor
        self.anticipate = anticipate
        self.see_all_vru = see_all_vru
        self.params = params or IdmParams(v0=11.2, T=1.2, a_max=2.0, b_comf=2.5, s0=2.0, delta=4.0)
        self.horizon = anticipation_horizon
        self.margin = margin
        self.network = None
        self.route = ()

    def reset(self, network: RoadNetwork, route, seed: int = 0) -> None:
        self.network = network
        self.route = tuple(route)
        lanes = [network.lanes[l] for l in self.route]
        self._starts = np.concatenate([[0.0], np.cumsum([l.length for l in lanes])])
        self._path = Polyline(np.concatenate([l.polyline.points for l in lanes], axis=0))
        self._zones = []
        for i, lid in enumerate(self.route):
            for z in network.zones_by_lane.get(lid, ()):
                prio = z.priority_lane()
                if prio == lid:
                    continue
                (s0, s1), other, (o0, o1) = z.side(lid)
                self._zones.append((self._starts[i] + s0, self._starts[i] + s1, other, o0, o1, prio is None, i))

    def _v0(self, lane_id):
        return min(self.params.v0, self.network.lanes[lane_id].speed_limit)

    def observe(self, obs: Observation) -> AvCommand:
        av = obs.av
        net = self.network
        s_av = self._starts[av["route_index"]] + av["arc"]
        v = av["speed"]
        p = self.params
        v0 = self._v0(av["lane"])
        L, W = av["length"], av["width"]
        acc = idm_accel(v, None, None, p, v0, -self.accel_floor)

        def follow(gap, v_lead):
            return idm_accel(v, max(gap, 1e-3), v_lead, p, v0, -self.accel_floor)  # oncoming: v_lead < 0

        by_lane = {}
        for ag in obs.agents:
            by_lane.setdefault(ag.get("lane"), []).append(ag)
            if ag["kind"] == "vru" and not self.see_all_vru and not ag.get("in_crosswalk", False):
                continue
            s, lat = self._path.project((ag["x"], ag["y"]))
            if s < s_av - 1.0 or s > s_av + 120.0:
                continue
            _, _, hp = self._path.pose(s)
            dh = ag["heading"] - hp
            along = ag["speed"] * math.cos(dh)
            lat_rate = ag["speed"] * math.sin(dh)
            ext = abs(ag["length"] * math.cos(dh)) + abs(ag["width"] * math.sin(dh))
            gap = s - s_av - L / 2.0 - ext / 2.0
            if gap < -L:
                continue
            thr = (W + ag["width"]) / 2.0 + self.margin
            if abs(lat) < thr:
                acc = min(acc, follow(gap, along))
                continue
            if not self.anticipate:
                continue
            if lat * lat_rate >= 0 or abs(lat_rate) < 0.05:
                continue
            t_in = (abs(lat) - thr) / abs(lat_rate)
            if t_in > self.horizon:
                continue
            t_out = (abs(lat) + thr) / abs(lat_rate)
            t_arrive = max(gap, 0.0) / max(v - along, 0.1)
            if t_out < t_arrive - 0.5 and gap > 0:
                continue
            acc = min(acc, follow(gap, along))
        # signals on the route ahead
        for i in range(av["route_index"] + 1, len(self.route)):
            lane = net.lanes[self.route[i]]
            d = self._starts[i] - s_av - L / 2.0
            if d > 100.0:
                break
            if lane.movement is None:
                continue
            st = obs.signals.get(lane.movement)
            if st is None:
                st = signal_state(net, lane.movement, obs.time)
            if st == "red" or (st == "yellow" and d >= v * v / (2 * 3.0)):
                acc = min(acc, follow(d, 0.0))
            break
        # yield at conflict zones where we lack priority
        for z0, z1, other, o0, o1, signalized, i in self._zones:
            d_entry = z0 - s_av - L / 2.0
            d_exit = z1 - s_av + L / 2.0
            if d_entry < 0 or d_exit < 0 or d_entry > 60.0:
                continue
            if d_entry < v * v / (2 * 6.0):
                continue
            if signalized:
                # let vehicles already in the intersection clear it
                if i > av["route_index"] and any(
                        ag["arc"] - ag["length"] / 2 <= o1 for ag in by_lane.get(other, ())):
                    acc = min(acc, follow(d_entry, 0.0))
                continue
            t_clear = d_exit / max(v, 1.0) + 1.0 + 3.0
            if self._priority_traffic(by_lane, other, o0, o1, t_clear, obs):
                acc = min(acc, follow(d_entry, 0.0))
        return AvCommand(max(acc, self.accel_floor), "keep")

    def _priority_traffic(self, by_lane, lane_id, s0, s1, window, obs):
        for ag in by_lane.get(lane_id, ()):
            front, rear = ag["arc"] + ag["length"] / 2, ag["arc"] - ag["length"] / 2
            if rear <= s1 and front >= s0:
                return True
            if front < s0 and s0 - front <= ag["speed"] * window:
                return True
        movement = self.network.lanes[lane_id].movement
        if movement is not None and (obs.signals.get(movement)
                                     or signal_state(self.network, movement, obs.time)) == "red":
            return False  # upstream traffic is held
        for pid in self.network.predecessors.get(lane_id, ()):
            pl = self.network.lanes[pid]
            for ag in by_lane.get(pid, ()):
                d = pl.length - ag["arc"] - ag["length"] / 2 + s0
                if d <= ag["speed"] * window:
                    return True
        return False


class FullStopPolicy:
    name = "full-stop"

    def reset(self, network, route, seed=0):
        pass

    def observe(self, obs):
        return AvCommand(ACCEL_MIN)


class CruisePolicy:
    name = "cruise"

    def reset(self, network, route, seed=0):
        pass

    def observe(self, obs):
        return AvCommand(0.0)


def builtin_policy(name: str):
    if name == "surrogate-idm":
        return RulePolicy("surrogate-idm")
    if name == "flawed":
        return RulePolicy("flawed", accel_floor=-3.0, anticipate=False, see_all_vru=False)
    if name == "full-stop":
        return FullStopPolicy()
    if name == "cruise":
        return CruisePolicy()
    raise KeyError(f"unknown built-in policy {name!r}")


def make_policy(selector: str):
    """``builtin:<name>`` / bare built-in name, or ``cmd:<command line>``."""
    if selector.startswith("cmd:"):
        return ExternalPolicy(selector[4:])
    if selector.startswith("builtin:"):
        selector = selector.split(":", 1)[1]
    return builtin_policy(selector)


# ------------------------------------------------------------ external policy


class ExternalPolicy:
    """A policy running in a child process, speaking JSON Lines on stdin/stdout.

    Wire format (one JSON object per line, ``schema`` = 1):

    * framework -> policy: ``{"type": "hello", "schema": 1}``; policy replies
      ``{"type": "hello", "name": str, "step_budget_ms": number}``.
    * ``{"type": "reset", "network": name, "route": [...], "seed": int}`` ->
      ``{"type": "ready"}``.
    * ``{"type": "observation", "observation": {...}}`` ->
      ``{"type": "command", "accel": float, "lateral": "keep"|"begin_left"|"begin_right"}``.
    * ``{"type": "bye"}`` closes the session.
    """

    def __init__(self, command, step_budget_ms: float = 50.0, startup_timeout: float = 10.0):
        self.command = command if isinstance(command, (list, tuple)) else shlex.split(command)
        self.step_budget = step_budget_ms / 1000.0
        self.startup_timeout = startup_timeout
        self.name = "external"
        self.proc = None
        self.last_reply = None

    def _start(self):
        self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        hello = self._call({"type": "hello", "schema": SCHEMA_VERSION}, self.startup_timeout)
        if hello.get("type") != "hello":
            raise PolicyError(f"bad handshake reply {hello!r}")
        self.name = str(hello.get("name", "external"))
        if "step_budget_ms" in hello:
            self.step_budget = max(self.step_budget, float(hello["step_budget_ms"]) / 1000.0)

    def _call(self, msg, timeout):
        if self.proc is None or self.proc.poll() is not None:
            raise PolicyError("policy process not running")
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PolicyError(f"write failed: {exc}") from None
        deadline = time.monotonic() + timeout
        if not self._sel.select(max(deadline - time.monotonic(), 0.0)):
            raise PolicyError(f"policy reply timed out after {timeout * 1000:.0f} ms")
        line = self.proc.stdout.readline()
        if not line:
            raise PolicyError("policy closed its output")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise PolicyError(f"malformed reply {line[:80]!r}") from None
        if not isinstance(reply, dict):
            raise PolicyError(f"malformed reply {line[:80]!r}")
        self.last_reply = reply
        return reply

    def reset(self, network, route, seed=0):
        if self.proc is None:
            self._start()
        name = getattr(network, "name", str(network))
        reply = self._call({"type": "reset", "network": name, "route": list(route), "seed": int(seed)},
                           self.startup_timeout)
        if reply.get("type") != "ready":
            raise PolicyError(f"bad reset reply {reply!r}")

    def observe(self, obs: Observation) -> AvCommand:
        reply = self._call({"type": "observation", "observation": obs.to_dict()}, self.step_budget)
        if reply.get("type") != "command":
            raise PolicyError(f"expected a command, got {reply!r}")
        try:
            return AvCommand(float(reply["accel"]), reply.get("lateral", "keep"))
        except (KeyError, TypeError, ValueError) as exc:
            raise PolicyError(f"malformed command {reply!r}: {exc}") from None

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            try:
                self.proc.stdin.write(json.dumps({"type": "bye"}) + "\n")
                self.proc.stdin.flush()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        self.proc = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
