"""Enumerable toy environment: one AV following one BV on a straight corridor.

The BV picks one of three accelerations per step from a fixed naturalistic
pmf; the AV runs IDM on the state it saw one step earlier. A crash is any
bumper overlap after a step and ends the episode. With six steps there are at
most 3**6 action sequences, so every quantity of interest (crash
probability, the importance-sampling identity, estimator variance) can be
computed exactly and compared against samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .behavior import IdmParams, idm_accel
from .nade import NadeConfig, importance_pmf, vehicle_criticality
from .rng import stream
from .surrogate import SurrogateConfig, longitudinal_challenge


@dataclass(frozen=True)
class ToyConfig:
    steps: int = 6
    dt: float = 0.5
    accels: tuple = (-6.0, 0.0, 1.0)  # BV action set (m/s^2)
    probs: tuple = (0.01, 0.97, 0.02)  # naturalistic P(u)
    gap0: float = 5.0  # initial bumper gap (m)
    v_av0: float = 12.0
    v_bv0: float = 12.0
    av_params: IdmParams = field(default_factory=lambda: IdmParams(v0=15.0, T=0.6, a_max=2.0, b_comf=3.0, s0=1.0))
    b_emergency: float = 3.0
    location_class: str = "other"
    nade: NadeConfig = field(default_factory=lambda: NadeConfig(caps={"intersection": 0.1, "other": 0.1}))
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        if len(self.accels) != len(self.probs):
            raise ValueError("accels and probs must have the same length")
        if abs(sum(self.probs) - 1.0) > 1e-12 or min(self.probs) <= 0:
            raise ValueError("probs must be a positive pmf")


def _advance(v, a, dt):
    vn = v + a * dt
    if vn < 0:
        return v * v / (2 * -a), 0.0
    return v * dt + 0.5 * a * dt * dt, vn


@dataclass
class ToyNode:
    """One decision point: state before the BV acts at step ``depth``."""

    depth: int
    gap: float
    v_av: float
    v_bv: float
    a_av: float  # AV accel applied during this step
    P: np.ndarray
    q: np.ndarray
    challenge: np.ndarray
    children: list = field(default_factory=list)  # per action: ToyNode, or "crash", or "end"


class ToyEnvironment:
    """Full episode tree with naturalistic and importance pmfs at every node."""

    def __init__(self, cfg: ToyConfig | None = None):
        self.cfg = cfg or ToyConfig()
        self.P = np.asarray(self.cfg.probs, float)
        self.n_actions = len(self.P)
        # flat per-depth tables for vectorized sampling; node index = position in level list
        self.levels: list[list[ToyNode]] = [[] for _ in range(self.cfg.steps)]
        self.root = self._build(0, self.cfg.gap0, self.cfg.v_av0, self.cfg.v_bv0, 0.0)
        self._tables()

    # -- tree ----------------------------------------------------------------
    def _pmfs(self, gap, v_av, a_av, v_bv):
        cfg = self.cfg
        ch = longitudinal_challenge(gap, v_av, a_av, v_bv, np.asarray(cfg.accels), cfg.surrogate)
        row = vehicle_criticality("bv", self.P, ch, cfg.location_class)
        if row.C > 0 and cfg.nade.enabled:
            q = importance_pmf(self.P, row.V, cfg.nade.cap(cfg.location_class), cfg.nade)
        else:
            q = self.P.copy()
        return ch, q

    def _build(self, depth, gap, v_av, v_bv, a_av):
        cfg = self.cfg
        ch, q = self._pmfs(gap, v_av, a_av, v_bv)
        node = ToyNode(depth, gap, v_av, v_bv, a_av, self.P, q, ch)
        self.levels[depth].append(node)
        # the AV reacts to what it sees now during the next step
        a_next = idm_accel(v_av, gap, v_bv, cfg.av_params, cfg.av_params.v0, cfg.b_emergency)
        ds_av, v_av1 = _advance(v_av, a_av, cfg.dt)
        for a_bv in cfg.accels:
            ds_bv, v_bv1 = _advance(v_bv, a_bv, cfg.dt)
            g1 = gap + ds_bv - ds_av
            if g1 <= 0:
                node.children.append("crash")
            elif depth + 1 == cfg.steps:
                node.children.append("end")
            else:
                node.children.append(self._build(depth + 1, g1, v_av1, v_bv1, a_next))
        return node

    def _tables(self):
        """Per-depth arrays: cumulative q, log P - log q, child index (-1 crash, -2 end)."""
        self.cum_q, self.cum_p, self.log_ratio, self.child = [], [], [], []
        index = [{id(n): i for i, n in enumerate(level)} for level in self.levels]
        for d, level in enumerate(self.levels):
            q = np.array([n.q for n in level])
            self.cum_q.append(np.cumsum(q, axis=1))
            self.cum_p.append(np.cumsum(np.tile(self.P, (len(level), 1)), axis=1))
            self.log_ratio.append(np.log(self.P)[None, :] - np.log(q))
            ch = np.empty((len(level), self.n_actions), dtype=np.int64)
            for i, n in enumerate(level):
                for u, c in enumerate(n.children):
                    ch[i, u] = -1 if c == "crash" else (-2 if c == "end" else index[d + 1][id(c)])
            self.child.append(ch)

    # -- exact quantities ------------------------------------------------------
    def enumerate(self):
        """Yield (actions, P(x), q(x), W(x), crashed) for every complete episode."""
        stack = [(self.root, (), 0.0, 0.0)]
        while stack:
            node, acts, lp, lq = stack.pop()
            for u, c in enumerate(node.children):
                lp1 = lp + math.log(node.P[u])
                lq1 = lq + math.log(node.q[u])
                a1 = acts + (u,)
                if isinstance(c, ToyNode):
                    stack.append((c, a1, lp1, lq1))
                else:
                    yield a1, math.exp(lp1), math.exp(lq1), math.exp(lp1 - lq1), c == "crash"

    def exact_crash_probability(self) -> float:
        return math.fsum(p for _, p, _, _, crashed in self.enumerate() if crashed)

    def exact_is_identity(self) -> tuple[float, float]:
        """(sum of q*I*W, sum of P*I) over all episodes."""
        lhs, rhs = [], []
        for _, p, q, w, crashed in self.enumerate():
            if crashed:
                lhs.append(q * w)
                rhs.append(p)
        return math.fsum(lhs), math.fsum(rhs)

    def exact_variances(self) -> tuple[float, float]:
        """Per-episode variance of the NDE indicator and of the NADE weighted indicator."""
        p_a = self.exact_crash_probability()
        second = math.fsum(p * w for _, p, _, w, crashed in self.enumerate() if crashed)
        return p_a * (1 - p_a), second - p_a * p_a

    # -- samplers --------------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator, importance: bool = True):
        """Vectorized episodes: (crash indicator, weight) arrays of length ``n``."""
        node = np.zeros(n, dtype=np.int64)
        alive = np.ones(n, bool)
        crashed = np.zeros(n, bool)
        logw = np.zeros(n)
        for d in range(self.cfg.steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            u = rng.random(idx.size)
            cum = (self.cum_q if importance else self.cum_p)[d][node[idx]]
            act = np.minimum((u[:, None] >= cum).sum(axis=1), self.n_actions - 1)
            if importance:
                logw[idx] += self.log_ratio[d][node[idx], act]
            nxt = self.child[d][node[idx], act]
            crashed[idx[nxt == -1]] = True
            alive[idx[nxt < 0]] = False
            node[idx[nxt >= 0]] = nxt[nxt >= 0]
        return crashed.astype(float), np.exp(logw)


def toy_trial(env: ToyEnvironment, n: int, seed: int, importance: bool = True):
    """One estimate from ``n`` episodes: (P_hat, standard error)."""
    rng = stream(seed, "toy-trial")
    ind, w = env.sample(n, rng, importance)
    x = ind * w
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))
