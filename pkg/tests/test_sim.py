import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from avsafety.policies import AvCommand, PolicyError, builtin_policy
from avsafety.road import corridor_network
from avsafety.sim import (EpisodeSetup, EpisodeTrace, JointAction, SimError, Simulator, Vehicle, WorldState,
                          advance, detect_crash, diff_traces, lateral_offset, run_episode, step, update_pose)


@given(st.floats(0.0, 30.0), st.floats(-8.0, 3.0), st.floats(0.01, 0.5))
def test_advance_never_reverses(v, a, dt):
    ds, vn = advance(v, a, dt)
    assert vn >= 0.0 and ds >= 0.0
    if v + a * dt >= 0:
        assert ds == pytest.approx(v * dt + 0.5 * a * dt * dt)
    else:
        assert vn == 0.0 and ds == pytest.approx(v * v / (2 * -a))


def test_lateral_profile_endpoints():
    assert lateral_offset(0.0, 3.5) == 0.0
    assert lateral_offset(1.5, 3.5) == pytest.approx(1.75)
    assert lateral_offset(9.0, 3.5) == pytest.approx(3.5)


def _corridor_state(*vehicles, lanes=1):
    net = corridor_network(300.0, lanes=lanes)
    for v in vehicles:
        update_pose(net, v)
    return WorldState(net, 0.0, {v.id: v for v in vehicles})


def test_step_integrates_and_hands_over_to_successor_or_exits():
    av = Vehicle("av", "av", "c0", 295.0, speed=10.0, route=("c0",))
    bv = Vehicle("b", "bv", "c0", 100.0, speed=10.0, route=("c0",))
    s = _corridor_state(av, bv)
    s1 = step(s, JointAction({"b": (-2.0, "keep")}, (0.0, "keep")), 1.0)
    assert "av" in s1.exited and "av" not in s1.vehicles
    assert s1.vehicles["b"].arc == pytest.approx(109.0) and s1.vehicles["b"].speed == pytest.approx(8.0)
    assert s1.time == 1.0
    assert s.vehicles["b"].arc == 100.0  # the input state is untouched
    with pytest.raises(ValueError):
        step(s, JointAction({}), 0.0)


def test_lane_change_moves_the_vehicle_to_the_target_lane():
    bv = Vehicle("b", "bv", "c0", 50.0, speed=10.0, route=("c0",))
    s = _corridor_state(bv, lanes=2)
    s = step(s, JointAction({"b": (0.0, "begin_left")}), 0.1)
    v = s.vehicles["b"]
    assert v.lc_dir == 1 and v.lane == "c0" and 0 < v.offset < 0.1
    assert {lane for lane, _ in v.occupied()} == {"c0", "c1"}
    for _ in range(30):
        s = step(s, JointAction({}), 0.1)
    v = s.vehicles["b"]
    assert v.lane == "c1" and v.offset == 0.0 and v.lc_dir == 0
    assert v.y == pytest.approx(3.5)


def test_detect_crash_pairs():
    a = Vehicle("a", "bv", "c0", 50.0)
    b = Vehicle("b", "bv", "c0", 54.0)
    c = Vehicle("c", "bv", "c0", 70.0)
    assert detect_crash(_corridor_state(a, b, c)) == [("a", "b")]
    assert detect_crash(_corridor_state(a, c)) == []


@pytest.fixture(scope="module")
def nade_trace():
    return Simulator(EpisodeSetup(mode="nade", horizon=15.0)).run(builtin_policy("surrogate-idm"), 21)


def test_trace_jsonl_roundtrip(nade_trace, tmp_path):
    p = tmp_path / "t.jsonl"
    nade_trace.save(p)
    back = EpisodeTrace.load(p)
    assert back.to_jsonl() == nade_trace.to_jsonl()
    assert diff_traces(back, nade_trace) == []
    with pytest.raises(SimError):
        EpisodeTrace.from_jsonl('{"type": "step"}\n')
    with pytest.raises(SimError):
        EpisodeTrace.from_jsonl(nade_trace.to_jsonl().replace('"format_version":1', '"format_version":9'))


def test_trace_weight_bookkeeping(nade_trace):
    tr = nade_trace
    ratios = [math.log(p) - math.log(q) for s in tr.steps for v, p in s["p"].items()
              for q in [s["q"].get(v, p)]]
    assert tr.log_weight == pytest.approx(math.fsum(ratios), abs=1e-9)
    assert tr.log_weight == pytest.approx(tr.log_p - tr.log_q, abs=1e-9)
    assert tr.footer["pov_steps"] > 0
    for s in tr.steps:
        assert set(s["q"]) <= {s["pov"]}
    assert tr.termination in ("horizon", "crash", "lap_complete")
    assert tr.distance > 0


def test_diff_reports_first_mismatch(nade_trace):
    other = EpisodeTrace.from_jsonl(nade_trace.to_jsonl())
    other.steps[3]["av"] = [9.0, "keep"]
    d = diff_traces(nade_trace, other)
    assert d and d[0][0] == 4  # header is line 0


def test_open_loop_commands_reproduce_the_closed_loop_run():
    sim = Simulator(EpisodeSetup(mode="nde", horizon=10.0))
    closed = sim.run(builtin_policy("surrogate-idm"), 5)
    forced = [tuple(s["av"]) for s in closed.steps]
    opened = sim.run(None, 5, forced_av=forced, policy_name=closed.header["policy"])
    assert opened.to_jsonl() == closed.to_jsonl()


class _Breaks:
    name = "breaks"

    def reset(self, network, route, seed=0):
        self.k = 0

    def observe(self, obs):
        self.k += 1
        if self.k > 5:
            raise PolicyError("boom")
        return AvCommand(0.0)


def test_policy_failure_makes_the_episode_ineffective():
    tr = Simulator(EpisodeSetup(mode="nde", horizon=10.0)).run(_Breaks(), 1)
    assert tr.termination == "ineffective" and not tr.effective
    assert tr.footer["diagnostic"].startswith("policy failure")
    assert len(tr.steps) == 5


def test_stuck_av_is_reported_ineffective():
    setup = EpisodeSetup(mode="nde", horizon=20.0, stuck_time=5.0, density_scale=0.0, inflow_scale=0.0)
    tr = Simulator(setup).run(builtin_policy("full-stop"), 2)
    assert tr.termination == "ineffective"
    assert "stuck" in tr.footer["diagnostic"]


def test_run_episode_convenience_and_bad_setup():
    tr = run_episode("builtin:desk", {}, builtin_policy("cruise"), "nde", seed=0, horizon=2.0)
    assert len(tr.steps) == 20
    with pytest.raises(ValueError):
        EpisodeSetup(mode="fast")
    with pytest.raises(SimError):
        Simulator(EpisodeSetup(route="nowhere"))
