"""Maneuver challenge: crash probability of one background-vehicle action.

A calibrated human-like driver stands in for the policy under test. The
background vehicle holds the candidate action for ``bv_hold`` seconds and then
cruises; the surrogate keeps its current acceleration for a sampled reaction
delay and then brakes with one of the evasive decelerations. Every
(delay, deceleration) branch is rolled out deterministically over the horizon
and the challenge is the probability mass of the crashing branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .behavior import IdmParams
from .geometry import Polyline, box_corners, boxes_overlap


@dataclass(frozen=True)
class SurrogateConfig:
    horizon: float = 4.0
    dt: float = 0.1
    av_params: IdmParams = field(default_factory=lambda: IdmParams(v0=11.2, T=1.2, a_max=2.0, b_comf=2.5))
    reaction: tuple = ((0.3, 0.25), (0.7, 0.5), (1.5, 0.25))
    decels: tuple = (-2.0, -4.0, -6.0)
    decel_weights: tuple | None = None  # uniform when None
    bv_hold: float = 1.0

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        if abs(sum(p for _, p in self.reaction) - 1.0) > 1e-12:
            raise ValueError("reaction pmf must sum to 1")
        if self.decel_weights is not None and abs(sum(self.decel_weights) - 1.0) > 1e-12:
            raise ValueError("decel weights must sum to 1")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def branches(self):
        """List of (reaction delay, evasive decel, probability)."""
        dw = self.decel_weights or tuple(1.0 / len(self.decels) for _ in self.decels)
        return [(d, a, pd * pa) for d, pd in self.reaction for a, pa in zip(self.decels, dw)]


def kinematic_profile(v0, accel, dt, steps):
    """Arc advance and speed over ``steps`` steps for per-step accelerations.

    ``v0`` has shape ``(B,)`` and ``accel`` shape ``(B, steps)``. Same
    integrator as the simulator: stopping mid-step stays stopped.
    """
    v = np.array(v0, dtype=float, copy=True)
    s = np.zeros_like(v)
    out_s = np.empty(v.shape + (steps,))
    out_v = np.empty_like(out_s)
    for k in range(steps):
        a = accel[..., k]
        vn = v + a * dt
        stop = vn < 0
        # a stop within the step implies a < 0
        ds = np.where(stop, v * v / (2 * np.maximum(-a, 1e-12)), v * dt + 0.5 * a * dt * dt)
        s = s + ds
        v = np.where(stop, 0.0, vn)
        out_s[..., k] = s
        out_v[..., k] = v
    return out_s, out_v


def _branch_accels(cfg: SurrogateConfig, a_now: float):
    K = cfg.steps
    t = (np.arange(K) + 0.0) * cfg.dt  # accel applied during [t, t + dt)
    br = cfg.branches()
    acc = np.empty((len(br), K))
    w = np.empty(len(br))
    for b, (delay, dec, p) in enumerate(br):
        acc[b] = np.where(t < delay - 1e-9, a_now, dec)
        w[b] = p
    return acc, w


def longitudinal_challenge(gap, v_av, a_av, v_bv, bv_accels, cfg: SurrogateConfig | None = None):
    """Challenge of each lead-vehicle acceleration in a same-lane following pair.

    ``gap`` is the bumper gap (m) from the AV to the background vehicle ahead.
    Returns an array with one probability per entry of ``bv_accels``.
    """
    cfg = cfg or SurrogateConfig()
    K = cfg.steps
    acc, w = _branch_accels(cfg, a_av)
    s_av, _ = kinematic_profile(np.full(len(w), float(v_av)), acc, cfg.dt, K)
    bv_accels = np.atleast_1d(np.asarray(bv_accels, float))
    t = np.arange(K) * cfg.dt
    bacc = np.where(t[None, :] < cfg.bv_hold - 1e-9, bv_accels[:, None], 0.0)
    s_bv, _ = kinematic_profile(np.full(len(bv_accels), float(v_bv)), bacc, cfg.dt, K)
    g = gap + s_bv[:, None, :] - s_av[None, :, :]  # (A, B, K)
    crash = (g <= 0).any(axis=-1) if gap > 0 else np.ones((len(bv_accels), len(w)), bool)
    return crash.astype(float) @ w


class PathCache:
    """Concatenated route polylines, keyed by lane sequence."""

    def __init__(self, network):
        self.network = network
        self._cache = {}

    def path(self, lanes) -> Polyline:
        key = tuple(lanes)
        pl = self._cache.get(key)
        if pl is None:
            pts = np.concatenate([self.network.lanes[l].polyline.points for l in key], axis=0)
            pl = Polyline(pts)
            self._cache[key] = pl
        return pl

    def lanes_ahead(self, veh, reach):
        net = self.network
        lanes = [veh.lane]
        total = net.lanes[veh.lane].length - veh.arc
        i = veh.route_index
        lid = veh.lane
        while total < reach and len(lanes) < 16:
            i += 1
            if i < len(veh.route):
                lid = veh.route[i]
            else:
                lid = net.default_successor[lid]
                if lid is None:
                    break
            lanes.append(lid)
            total += net.lanes[lid].length
        return lanes


class SurrogateContext:
    """Per-state cache: the surrogate AV's branch footprints are shared by all
    background vehicles evaluated in the same step."""

    def __init__(self, network, state, av_id="av", cfg: SurrogateConfig | None = None,
                 paths: PathCache | None = None, lc_duration: float = 3.0):
        self.network = network
        self.state = state
        self.cfg = cfg or SurrogateConfig()
        self.paths = paths or PathCache(network)
        self.lc_duration = lc_duration
        av = state.vehicles[av_id]
        self.av = av
        K = self.cfg.steps
        a_now = av.accel if av.accel is not None else 0.0
        acc, self.weights = _branch_accels(self.cfg, a_now)
        s, v = kinematic_profile(np.full(len(self.weights), av.speed), acc, self.cfg.dt, K)
        self.av_s, self.av_v = s, v
        reach = av.arc + float(s.max()) + 10.0
        path = self.paths.path(self.paths.lanes_ahead(av, reach - av.arc))
        x, y, h = path.poses(np.minimum(av.arc + s, path.length), av.offset)
        self.av_boxes = box_corners(x, y, h, av.length, av.width)  # (B, K, 4, 2)
        self.av_xy = np.stack([x, y], axis=-1)
        self.av_radius = 0.5 * math.hypot(av.length, av.width)
        self.av_max_reach = float(s.max())

    def challenge_all(self, bv_id, actions, space, bv_params: IdmParams | None = None,
                      bv_v0: float | None = None) -> np.ndarray:
        """Challenge for each flat action index in ``actions``.

        After the hold the background vehicle cruises, unless the AV is ahead
        of it on its own path; then it follows the AV with IDM (``bv_params``)
        so that a vehicle behind the AV reacts to the AV's braking.
        """
        cfg = self.cfg
        K = cfg.steps
        bv = self.state.vehicles[bv_id]
        actions = list(actions)
        out = np.zeros(len(actions))
        if not actions:
            return out
        # cheap reject: cannot get close within the horizon
        dist = math.hypot(bv.x - self.av.x, bv.y - self.av.y)
        bv_reach = bv.speed * cfg.horizon + 0.5 * max(space.accels) * cfg.horizon ** 2
        rad = self.av_radius + 0.5 * math.hypot(bv.length, bv.width)
        if dist - rad > self.av_max_reach + bv_reach + 1.0:
            return out
        accs = np.array([space.decode(a)[0] for a in actions])
        lats = [space.decode(a)[1] for a in actions]
        t = np.arange(K) * cfg.dt
        hold = t < cfg.bv_hold - 1e-9
        path = self.paths.path(self.paths.lanes_ahead(bv, bv_reach + 10.0))
        follow = self._av_ahead_on(path, bv)
        if follow is not None and bv_params is not None:
            s, v = self._follow_rollout(bv, accs, hold, follow, bv_params, bv_v0)  # (A, B, K)
        else:
            bacc = np.where(hold[None, :], accs[:, None], 0.0)
            s, v = kinematic_profile(np.full(len(actions), bv.speed), bacc, cfg.dt, K)
            s, v = s[:, None, :], v[:, None, :]
        off = np.empty((len(actions), K))
        lat_rate = np.zeros((len(actions), K))
        tt = t + cfg.dt
        for i, lat in enumerate(lats):
            off[i], lat_rate[i] = self._lateral_profile(bv, lat, tt)
        x, y, h = path.poses(np.minimum(bv.arc + s, path.length), off[:, None, :])  # (A, B|1, K)
        h = h + np.arctan2(lat_rate[:, None, :], np.maximum(v, 1.0))
        # broad phase on centers, then exact separating-axis test
        x, y, h = np.broadcast_arrays(x, y, h)
        shape = (len(actions), len(self.weights), K)
        d = np.hypot(x - self.av_xy[None, :, :, 0], y - self.av_xy[None, :, :, 1])
        cand = np.broadcast_to(d <= rad, shape)
        if not cand.any():
            return out
        ia, ib, ik = np.nonzero(cand)
        jb = ib if x.shape[1] > 1 else np.zeros_like(ib)
        boxes = box_corners(x[ia, jb, ik], y[ia, jb, ik], h[ia, jb, ik], bv.length, bv.width)
        hit = boxes_overlap(boxes, self.av_boxes[ib, ik])
        crash = np.zeros(shape[:2], bool)
        crash[ia[hit], ib[hit]] = True
        return crash.astype(float) @ self.weights

    def _av_ahead_on(self, path, bv):
        """Arc of the AV's rear bumper on the background vehicle's path, if the AV is ahead in its lane."""
        av = self.av
        s, lat = path.project((av.x, av.y))
        if s <= bv.arc or s >= path.length - 1e-6:
            return None
        if abs(lat) > 0.5 * (av.width + bv.width):
            return None
        _, _, hp = path.pose(s)
        if abs(math.atan2(math.sin(av.heading - hp), math.cos(av.heading - hp))) > math.pi / 4:
            return None
        return s - bv.arc - 0.5 * (av.length + bv.length)  # initial bumper gap

    def _follow_rollout(self, bv, accs, hold, gap0, p: IdmParams, v0):
        """BV arc advance (A, B, K): hold the action, then IDM behind each AV branch."""
        cfg = self.cfg
        dt = cfg.dt
        v0 = p.v0 if v0 is None else v0
        A, B, K = len(accs), len(self.weights), cfg.steps
        v = np.full((A, B), float(bv.speed))
        s = np.zeros((A, B))
        out = np.empty((A, B, K))
        out_v = np.empty((A, B, K))
        s_av, v_av = self.av_s, self.av_v  # (B, K)
        sq = 2.0 * math.sqrt(p.a_max * p.b_comf)
        for k in range(K):
            if hold[k]:
                a = np.broadcast_to(accs[:, None], (A, B))
            else:
                # gap and leader speed at the start of this step
                sa = s_av[:, k - 1] if k > 0 else np.zeros(B)
                va = v_av[:, k - 1] if k > 0 else np.full(B, self.av.speed)
                gap = gap0 + sa[None, :] - s
                s_star = p.s0 + np.maximum(0.0, v * p.T + v * (v - va[None, :]) / sq)
                a = p.a_max * (1.0 - (v / v0) ** p.delta - (s_star / np.maximum(gap, 1e-3)) ** 2)
                a = np.clip(a, -8.0, p.a_max)
            vn = v + a * dt
            stop = vn < 0
            ds = np.where(stop, v * v / (2 * np.maximum(-a, 1e-9)), v * dt + 0.5 * a * dt * dt)
            s = s + ds
            v = np.where(stop, 0.0, vn)
            out[:, :, k] = s
            out_v[:, :, k] = v
        return out, out_v

    def _lateral_profile(self, bv, lat, tt):
        tau = self.lc_duration
        net = self.network
        if bv.lc_dir:
            direction, t0, span = bv.lc_dir, bv.lc_time, bv.lc_span
        elif lat in ("begin_left", "begin_right"):
            lane = net.lanes[bv.lane]
            nb = lane.left_neighbor if lat == "begin_left" else lane.right_neighbor
            if nb is None:
                return np.full_like(tt, bv.offset), np.zeros_like(tt)
            direction = 1 if lat == "begin_left" else -1
            t0 = 0.0
            span = 0.5 * (lane.width + net.lanes[nb].width)
        else:
            return np.full_like(tt, bv.offset), np.zeros_like(tt)
        te = np.minimum(t0 + tt, tau)
        off = direction * span * 0.5 * (1 - np.cos(np.pi * te / tau))
        rate = np.where(t0 + tt < tau, direction * span * np.pi / (2 * tau) * np.sin(np.pi * te / tau), 0.0)
        return off, rate


def challenge(network, state, bv_id, action, space, av_id="av", cfg: SurrogateConfig | None = None) -> float:
    """P(crash with the AV | state, background vehicle ``bv_id`` takes ``action``)."""
    ctx = SurrogateContext(network, state, av_id, cfg)
    return float(ctx.challenge_all(bv_id, [action], space)[0])
