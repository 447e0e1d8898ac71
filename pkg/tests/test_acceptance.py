"""Acceptance suite: one test group per criterion, tagged with ``criterion(n)``.

The terminal summary (see conftest.py) prints one PASS/FAIL line per criterion.
Reference values come from independent oracles: enumeration, brute-force
percentiles, fine-step rollouts and point sampling.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from avsafety import dlt
from avsafety.behavior import ErrorModel
from avsafety.config import RunConfig
from avsafety.estimator import Moments, converged, is_estimate, mc_estimate
from avsafety.geometry import box_corners, boxes_overlap
from avsafety.nade import NadeConfig
from avsafety.platoon import platoon_rollout
from avsafety.policies import AvCommand, builtin_policy
from avsafety.rng import stream
from avsafety.runner import replay, run_dit
from avsafety.sim import EpisodeSetup, Simulator, Vehicle, classify_crash, severity_level
from avsafety.toy import ToyConfig, ToyEnvironment, toy_trial


@pytest.fixture(scope="module")
def toy():
    return ToyEnvironment()


# ------------------------------------------------------------------ 1
@pytest.mark.criterion(1)
def test_exact_unbiasedness_by_enumeration():
    t0 = time.perf_counter()
    env = ToyEnvironment()
    lhs, rhs = env.exact_is_identity()
    elapsed = time.perf_counter() - t0
    episodes = list(env.enumerate())
    assert len(episodes) <= 3 ** 6
    assert math.isclose(math.fsum(p for _, p, _, _, _ in episodes), 1.0, abs_tol=1e-12)
    assert math.isclose(math.fsum(q for _, _, q, _, _ in episodes), 1.0, abs_tol=1e-12)
    assert rhs > 0
    assert abs(lhs - rhs) <= 1e-12
    assert elapsed < 1.0


@pytest.mark.criterion(1)
def test_importance_pmf_actually_differs_from_naturalistic(toy):
    # the identity is only interesting if q != P somewhere on a crash path
    assert any(abs(w - 1.0) > 1e-3 for _, _, _, w, crashed in toy.enumerate() if crashed)


# ------------------------------------------------------------------ 2
@pytest.mark.criterion(2)
@pytest.mark.slow
def test_statistical_unbiasedness_at_scale(toy):
    truth = toy.exact_crash_probability()
    assert 0.5e-4 < truth < 2e-4
    t0 = time.perf_counter()
    hits = 0
    for trial in range(100):
        p_hat, se = toy_trial(toy, 100_000, seed=1000 + trial)
        hits += abs(p_hat - truth) <= 3 * se
    assert time.perf_counter() - t0 < 300
    print(f"within 3 SE: {hits}/100")
    assert hits >= 99


# ------------------------------------------------------------------ 3
def _episodes_to_converge(env, importance, seed, batch, threshold=0.3, cap=5_000_000):
    rng = stream(seed, "efficiency", int(importance))
    m = Moments()
    history = []
    while m.n < cap:
        ind, w = env.sample(batch, rng, importance)
        m.extend(ind * w)
        history.append(m.estimate().rel_half_width if m.s1 else None)
        if converged(history, threshold):
            return m.n
    return None


@pytest.mark.criterion(3)
@pytest.mark.slow
def test_nade_needs_a_tenth_of_nde_episodes(toy):
    t0 = time.perf_counter()
    n_nade = _episodes_to_converge(toy, True, seed=3, batch=500)
    n_nde = _episodes_to_converge(toy, False, seed=3, batch=10_000)
    assert n_nade is not None and n_nde is not None
    print(f"episodes to relative half-width 0.3: NDE {n_nde}, NADE {n_nade}, ratio {n_nde / n_nade:.1f}")
    assert n_nade * 10 <= n_nde
    assert time.perf_counter() - t0 < 600


@pytest.mark.criterion(3)
def test_exact_variance_ratio_exceeds_ten(toy):
    var_nde, var_nade = toy.exact_variances()
    assert var_nde / var_nade >= 10


# ------------------------------------------------------------------ 4
@pytest.mark.criterion(4)
@pytest.mark.parametrize("cfg", [
    ToyConfig(nade=NadeConfig(epsilon=0.0)),
    ToyConfig(gap0=500.0),  # challenge is identically zero at every node
], ids=["epsilon0", "no-challenge"])
def test_degenerate_identity_toy(cfg):
    env = ToyEnvironment(cfg)
    assert all(w == 1.0 for _, _, _, w, _ in env.enumerate())
    ind, w = env.sample(20_000, stream(4, "degenerate"), importance=True)
    assert np.all(w == 1.0)
    assert is_estimate(ind, w) == mc_estimate(ind)


@pytest.fixture(scope="module")
def degenerate_traces():
    policy = builtin_policy("surrogate-idm")
    nde = Simulator(EpisodeSetup(mode="nde", horizon=20.0))
    nade0 = Simulator(EpisodeSetup(mode="nade", horizon=20.0, nade={"epsilon": 0.0}))
    return [(nde.run(policy, s), nade0.run(policy, s)) for s in range(4)]


@pytest.mark.criterion(4)
def test_degenerate_identity_simulator(degenerate_traces):
    for a, b in degenerate_traces:
        assert b.log_weight == 0.0 and b.weight == 1.0
        assert all(q == p for p, q in b.step_ratios())
        assert [s["a"] for s in a.steps] == [s["a"] for s in b.steps]
        assert [s["digest"] for s in a.steps] == [s["digest"] for s in b.steps]
    ind = [float(b.crash is not None) for _, b in degenerate_traces]
    w = [b.weight for _, b in degenerate_traces]
    assert is_estimate(ind, w) == mc_estimate(ind)


# ------------------------------------------------------------------ 5
@pytest.fixture(scope="module")
def cut_in():
    spec = next(s for s in dlt.load_suite(dlt.default_suite_path()) if s.id == "cut_in")
    cdf = dlt.load_calibration(dlt.default_calibration_path())["cut_in"]
    return spec, dlt.generate_cases(spec, cdf)


@pytest.mark.criterion(5)
@pytest.mark.slow
def test_flawed_policy_fails_a_high_risk_cut_in(cut_in):
    spec, cases = cut_in
    high = [c for c in cases if c.risk == dlt.RiskLevel.HIGH]
    assert high
    policy = builtin_policy("flawed")
    done = [dlt.run_case(c, spec, policy) for c in high]
    assert any(c.failed for c in done)
    assert dlt.scenario_verdict("cut_in", done).verdict == "F"


@pytest.mark.criterion(5)
@pytest.mark.slow
def test_surrogate_idm_passes_every_feasible_cut_in(cut_in):
    spec, cases = cut_in
    assert {c.risk for c in cases} == set(dlt.TESTED_LEVELS)
    policy = builtin_policy("surrogate-idm")
    done = [dlt.run_case(c, spec, policy) for c in cases]
    failing = [(c.index, c.point) for c in done if c.verdict != "pass"]
    assert not failing
    assert dlt.scenario_verdict("cut_in", done).verdict == "P"


class _CrashOnSeed:
    """Brakes hard except on one run seed, where it floors the throttle."""

    def __init__(self, bad_seed):
        self.bad_seed = bad_seed
        self.seed = None

    def reset(self, network, route, seed=0):
        self.seed = seed

    def observe(self, obs):
        return AvCommand(3.0 if self.seed == self.bad_seed else -8.0)


@pytest.mark.criterion(5)
@pytest.mark.parametrize("bad_run", [0, 1, 2, None])
def test_three_run_any_crash_rule(cut_in, bad_run):
    spec, cases = cut_in
    case = next(c for c in cases if c.risk == dlt.RiskLevel.MID)
    bad_seed = None if bad_run is None else dlt.run_seed(0, spec.id, case.index, bad_run)
    done = dlt.run_case(case, spec, _CrashOnSeed(bad_seed))
    assert len(done.outcomes) == 3
    assert [o.crashed for o in done.outcomes] == [k == bad_run for k in range(3)]
    assert done.verdict == ("pass" if bad_run is None else "fail")
    other = replace(case, index=case.index + 1000, outcomes=[o for o in done.outcomes], inconclusive=None)
    clean = replace(case, outcomes=[replace(o, crashed=False, event=None) for o in done.outcomes])
    row = dlt.scenario_verdict(spec.id, [other, clean])
    assert row.verdict == ("P" if bad_run is None else "F")
    assert row.n_fail == (0 if bad_run is None else 1)


@pytest.mark.criterion(5)
def test_verdict_rule_on_constructed_fixtures():
    ok = dlt.RunOutcome(1, False, None, dlt.DltMetrics(1.0, 2.0, 0.5))
    bad = dlt.RunOutcome(2, True, {"type": "rear_end"}, dlt.DltMetrics(0.0, 0.1, 0.5))
    mk = lambda i, outs: dlt.TestCase("s", i, (0.0, 0.0), dlt.RiskLevel.LOW, -1.0, 3, outs)
    assert mk(0, [ok, ok, ok]).verdict == "pass"
    for k in range(3):
        outs = [ok, ok, ok]
        outs[k] = bad
        assert mk(0, outs).verdict == "fail"
    rows = [dlt.scenario_verdict("s", [mk(0, [ok] * 3), mk(1, [ok, bad, ok])]),
            dlt.scenario_verdict("t", [mk(0, [ok] * 3)])]
    assert [r.verdict for r in rows] == ["F", "P"]
    assert rows[0].d_min is None and rows[1].d_min == 1.0
    assert not dlt.dlt_verdict(rows)
    assert dlt.dlt_verdict(rows[1:])


# ------------------------------------------------------------------ 6
def _brute_force_levels(probes, samples, bound):
    """Count samples <= a for every probe by direct comparison, then apply the bands."""
    counts = np.concatenate([(samples[None, :] <= chunk[:, None]).sum(axis=1)
                             for chunk in np.array_split(probes, 20)])
    p = counts / samples.size
    out = np.full(probes.size, int(dlt.RiskLevel.HIGH))
    out[p > 0.01] = dlt.RiskLevel.MID
    out[p > 0.10] = dlt.RiskLevel.LOW
    out[p > 0.80] = dlt.RiskLevel.TRIVIAL
    out[-probes > bound] = dlt.RiskLevel.INFEASIBLE
    return out


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_risk_binning_matches_brute_force_percentiles():
    rng = np.random.default_rng(6)
    samples = np.round(-rng.gamma(2.0, 0.8, 1000), 2)  # rounding creates ties on purpose
    cdf = dlt.EmpiricalCdf(samples)
    bound = 6.0
    ordered = np.sort(samples)
    probes = np.concatenate([
        rng.uniform(-8.0, 0.5, 60_000),
        rng.choice(samples, 20_000),  # exactly on sample values
        ordered[rng.choice([9, 10, 11, 99, 100, 101, 799, 800, 801], 19_000)],  # band edges
        rng.uniform(-6.5, -5.5, 1_000),  # around the physical bound
    ])
    assert probes.size == 100_000
    got = np.array([int(dlt.risk_level(float(a), cdf, bound)) for a in probes])
    want = _brute_force_levels(probes, samples, bound)
    assert int((got != want).sum()) == 0
    assert set(got.tolist()) == {int(r) for r in dlt.RiskLevel}
    assert dlt.risk_level(None, cdf, bound) == dlt.RiskLevel.INFEASIBLE


# ------------------------------------------------------------------ 7
def _min_gap_rollout(g, v_av, v_ch, a, dt=0.001):
    """Constant-acceleration AV behind a constant-speed challenger; min bumper gap."""
    # roll out until the gap stops shrinking (AV slower than the challenger or stopped)
    t_end = (v_av - v_ch) / -a if a < 0 else 60.0
    n = int(math.ceil(t_end / dt)) + 2
    t = np.arange(n) * dt
    v = np.maximum(v_av + a * t, 0.0)
    t_stop = v_av / -a if a < 0 else math.inf
    x_av = np.where(t < t_stop, v_av * t + 0.5 * a * t * t, v_av * t_stop / 2)
    gap = g + v_ch * t - x_av
    return float(gap.min()), v


@pytest.mark.criterion(7)
@pytest.mark.slow
def test_required_decel_rollout_oracle():
    spec = next(s for s in dlt.load_suite(dlt.default_suite_path()) if s.id == "cut_in")
    rng = np.random.default_rng(7)
    (ax, ay) = spec.axes
    tol = 1e-9  # contact means interpenetration beyond float rounding
    checked_weak = 0
    for _ in range(1000):
        point = (rng.uniform(ax.lo, ax.hi), rng.uniform(ay.lo, ay.hi))
        inst = dlt.build_instance(spec, point)
        av, ch = inst.av, inst.challenger
        g = (ch.x - ch.length / 2) - (av.x + av.length / 2)
        assert abs(g - point[1]) < 1e-9
        v_ch = ch.speed
        a_req = dlt.required_decel(spec, inst)
        if a_req is None:
            continue
        gap_min, _ = _min_gap_rollout(g, av.speed, v_ch, a_req)
        assert gap_min >= -tol, (point, a_req, gap_min)
        if a_req < -0.1:
            weak = a_req + 0.05
            gap_weak, _ = _min_gap_rollout(g, av.speed, v_ch, weak)
            assert gap_weak < -tol, (point, a_req, gap_weak)
            checked_weak += 1
    assert checked_weak > 500


# ------------------------------------------------------------------ 8
def _boundary_points(corners, n):
    """``n`` points on the rectangle outline, corners included."""
    per = n // 4
    u = np.linspace(0.0, 1.0, per, endpoint=False)[:, None]
    edges = [corners[k] + u * (corners[(k + 1) % 4] - corners[k]) for k in range(4)]
    return np.concatenate(edges)


def _inside(points, x, y, h, length, width):
    c, s = math.cos(h), math.sin(h)
    dx, dy = points[:, 0] - x, points[:, 1] - y
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    return (np.abs(lx) <= length / 2) & (np.abs(ly) <= width / 2)


def _sampled_overlap(a, b, n=10_000):
    pa = _boundary_points(box_corners(*a), n // 2)
    pb = _boundary_points(box_corners(*b), n // 2)
    return bool(_inside(pa, *b).any() or _inside(pb, *a).any())


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_sat_matches_sampling_oracle():
    rng = np.random.default_rng(8)
    delta = 1e-3
    disagreements, ambiguous, overlaps = 0, 0, 0
    for _ in range(10_000):
        a = (0.0, 0.0, rng.uniform(-math.pi, math.pi), rng.uniform(0.5, 6.0), rng.uniform(0.3, 2.5))
        r = rng.uniform(0.0, 6.0)
        phi = rng.uniform(-math.pi, math.pi)
        b = (r * math.cos(phi), r * math.sin(phi), rng.uniform(-math.pi, math.pi),
             rng.uniform(0.5, 6.0), rng.uniform(0.3, 2.5))
        sat = bool(boxes_overlap(box_corners(*a), box_corners(*b)))
        overlaps += sat
        shrink = lambda box: box[:3] + (box[3] - 2 * delta, box[4] - 2 * delta)
        grow = lambda box: box[:3] + (box[3] + 2 * delta, box[4] + 2 * delta)
        deep = _sampled_overlap(shrink(a), shrink(b))  # penetration beyond delta
        near = _sampled_overlap(grow(a), grow(b))  # within delta of touching
        if deep != near:
            ambiguous += 1
            continue
        disagreements += sat != deep
    print(f"overlapping pairs {overlaps}, within 1e-3 m of touching {ambiguous}")
    assert disagreements == 0
    assert 1000 < overlaps < 9000
    assert ambiguous < 50


# ------------------------------------------------------------------ 9
@pytest.mark.criterion(9)
def test_severity_boundary_table():
    table = {0.0: 1, 4.99: 1, 5.0: 2, 9.99: 2, 10.0: 3, 15.0: 4, 30.0: 4}
    assert {dv: severity_level(dv) for dv in table} == table


def _veh(vid, x, y, heading, speed):
    return Vehicle(vid, "bv", None, speed=speed, length=4.8, width=2.0, x=x, y=y, heading=heading)


@pytest.mark.criterion(9)
@pytest.mark.parametrize("other, expected", [
    ((4.5, 0.0, 0.0, 2.0), "rear_end"),
    ((4.5, 0.0, math.pi, 8.0), "head_on"),
    ((2.9, 0.0, math.pi / 2, 8.0), "angle"),
    ((0.5, 1.9, 0.1, 11.0), "sideswipe"),
], ids=["rear_end", "head_on", "angle", "sideswipe"])
def test_crash_types_from_pre_impact_geometry(other, expected):
    a = _veh("a", 0.0, 0.0, 0.0, 10.0)
    b = _veh("b", *other)
    ev = classify_crash(a, b)
    assert ev.type == expected
    va = np.array([10.0, 0.0])
    vb = other[3] * np.array([math.cos(other[2]), math.sin(other[2])])
    dv_mph = float(np.hypot(*(va - vb))) / 0.44704
    assert ev.dv_mph == pytest.approx(dv_mph, rel=1e-9)
    assert ev.severity == severity_level(dv_mph)
    assert classify_crash(b, a).type == expected


# ------------------------------------------------------------------ 10
@pytest.mark.criterion(10)
def test_fixed_seed_gives_byte_identical_traces():
    setup = EpisodeSetup(mode="nade", horizon=15.0)
    a = Simulator(setup).run(builtin_policy("surrogate-idm"), 11)
    b = Simulator(setup).run(builtin_policy("surrogate-idm"), 11)
    c = Simulator(setup).run(builtin_policy("surrogate-idm"), 12)
    assert a.to_jsonl().encode() == b.to_jsonl().encode()
    assert a.to_jsonl() != c.to_jsonl()


@pytest.fixture(scope="module")
def dit_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("dit")
    cfg = RunConfig(mode="dit-nade", seed=5, budget=8, checkpoint_every=4, horizon=12.0,
                    stop_on_convergence=False)
    out = {}
    for par in (1, 8):
        c = replace(cfg, parallelism=par, output=str(base / f"par{par}")).validate()
        out[par] = (c, run_dit(c))
    return out


@pytest.mark.criterion(10)
@pytest.mark.slow
def test_parallelism_does_not_change_the_report(dit_runs):
    (c1, r1), (c8, r8) = dit_runs[1], dit_runs[8]
    assert r1.report.to_json() == r8.report.to_json()
    f1 = (c1.output and open(f"{c1.output}/report.json", "rb").read())
    f8 = open(f"{c8.output}/report.json", "rb").read()
    assert f1 == f8
    assert r1.report.n == 8


@pytest.mark.criterion(10)
@pytest.mark.slow
def test_replay_of_archived_traces_is_identical(dit_runs):
    c8, r8 = dit_runs[8]
    paths = [e.trace_path for e in r8.episodes]
    assert len(paths) == 8
    for p in paths:
        res = replay(p)
        assert res.diff == []
    assert replay(paths[0], open_loop=True).diff == []


# ------------------------------------------------------------------ 11
@pytest.mark.criterion(11)
@pytest.mark.slow
def test_error_free_platoon_never_crashes():
    r = platoon_rollout(n=10, steps=100_000, errors=ErrorModel())
    assert r.steps == 100_000
    assert r.crashes == 0
    assert r.min_gap > 0


@pytest.mark.criterion(11)
@pytest.mark.slow
def test_platoon_crash_rate_falls_with_error_probability():
    rates = []
    for p in (0.01, 0.003, 0.001):
        r = platoon_rollout(n=10, steps=100_000, errors=ErrorModel(lead_vehicle=p), seed=11, replicas=8)
        rates.append(r.crash_rate)
    print("crash rate per step:", rates)
    assert all(r > 0 for r in rates)
    assert rates[0] > rates[1] > rates[2]
