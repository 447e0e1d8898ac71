import sys
from pathlib import Path

import pytest

from avsafety.behavior import IdmParams, idm_accel
from avsafety.policies import (AvCommand, CruisePolicy, ExternalPolicy, FullStopPolicy, PolicyError, RulePolicy,
                               builtin_policy, make_policy)
from avsafety.road import corridor_network
from avsafety.sim import EpisodeSetup, Simulator, Vehicle, WorldState, make_observation, update_pose

ECHO = Path(__file__).resolve().parents[1] / "demos" / "echo_policy.py"


def echo(*extra, budget_ms=200.0):
    return ExternalPolicy([sys.executable, str(ECHO), *extra], step_budget_ms=budget_ms, startup_timeout=10.0)


def test_av_command_validation_and_clamp():
    assert AvCommand(-20.0).accel == -8.0
    assert AvCommand(9.0).accel < 9.0
    for bad in (float("nan"), float("inf"), "fast"):
        with pytest.raises(PolicyError):
            AvCommand(bad)
    with pytest.raises(PolicyError):
        AvCommand(0.0, "sideways")


def test_policy_selectors():
    assert isinstance(make_policy("builtin:full-stop"), FullStopPolicy)
    assert isinstance(make_policy("cruise"), CruisePolicy)
    assert make_policy("flawed").accel_floor == -3.0
    assert isinstance(make_policy("cmd:python3 -c pass"), ExternalPolicy)
    with pytest.raises(KeyError):
        builtin_policy("reckless")


def _obs_behind(gap, v_av=10.0, v_lead=0.0):
    net = corridor_network(400.0)
    av = Vehicle("av", "av", "c0", 50.0, speed=v_av, route=("c0",))
    lead = Vehicle("b", "bv", "c0", 50.0 + gap + 4.8, speed=v_lead, route=("c0",))
    for v in (av, lead):
        update_pose(net, v)
    return net, make_observation(net, WorldState(net, 0.0, {"av": av, "b": lead}), 100.0)


def test_rule_policy_follows_the_leader_with_idm():
    net, obs = _obs_behind(20.0, v_lead=0.0)
    pol = RulePolicy()
    pol.reset(net, ("c0",))
    cmd = pol.observe(obs)
    p = pol.params
    assert cmd.accel == pytest.approx(max(idm_accel(10.0, 20.0, 0.0, p, min(p.v0, 15.0), 8.0), -8.0), abs=1e-9)
    assert cmd.accel < -2.0 and cmd.lateral == "keep"
    flawed = builtin_policy("flawed")
    flawed.reset(net, ("c0",))
    assert flawed.observe(obs).accel == -3.0  # its braking is capped


def test_rule_policy_ignores_traffic_in_the_next_lane():
    net = corridor_network(400.0, lanes=2)
    av = Vehicle("av", "av", "c0", 50.0, speed=10.0, route=("c0",))
    other = Vehicle("b", "bv", "c1", 60.0, speed=0.0, route=("c1",))
    for v in (av, other):
        update_pose(net, v)
    pol = RulePolicy(params=IdmParams(v0=11.2))
    pol.reset(net, ("c0",))
    assert pol.observe(make_observation(net, WorldState(net, 0.0, {"av": av, "b": other}), 100.0)).accel > 0


def test_external_policy_handshake_and_commands():
    net, obs = _obs_behind(6.0, v_av=5.0)
    pol = echo()
    try:
        pol.reset(net, ("c0",), seed=4)
        assert pol.name == "echo"
        assert pol.observe(obs).accel == -6.0  # something close ahead
        assert pol.last_reply["echo"] == obs.time
        _, far = _obs_behind(90.0, v_av=5.0)
        assert pol.observe(far).accel == 1.0  # below its target speed
    finally:
        pol.close()
    assert pol.proc is None


@pytest.mark.parametrize("mode", ["slow", "garbage", "die", "bad-accel"])
def test_external_policy_protocol_violations_raise(mode):
    net, obs = _obs_behind(30.0)
    pol = echo("--misbehave", mode, budget_ms=100.0)
    try:
        pol.reset(net, ("c0",))
        with pytest.raises(PolicyError):
            pol.observe(obs)
    finally:
        pol.close()


def test_missing_executable_is_a_policy_error():
    with pytest.raises((PolicyError, OSError)):
        ExternalPolicy(["/nonexistent/policy"]).reset(corridor_network(100.0), ("c0",))


def test_external_policy_drives_a_simulated_episode():
    pol = echo()
    try:
        tr = Simulator(EpisodeSetup(mode="nde", horizon=5.0)).run(pol, 3)
    finally:
        pol.close()
    assert tr.effective and len(tr.steps) == 50
    assert pol.name == "echo"
    assert all(s["av"][0] in (-6.0, 0.0, 1.0) for s in tr.steps)
