import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avsafety import dlt
from avsafety.config import RunConfig
from avsafety.policies import builtin_policy
from avsafety.runner import run_dlt


@pytest.fixture(scope="module")
def suite():
    return {s.id: s for s in dlt.load_suite(dlt.default_suite_path())}


@pytest.fixture(scope="module")
def calibration():
    return dlt.load_calibration(dlt.default_calibration_path())


# ---------------------------------------------------------------- CDF and risk


def test_empirical_cdf_sample_and_binned_forms():
    cdf = dlt.EmpiricalCdf([-3.0, -1.0, -2.0, -1.0])
    assert cdf.n == 4
    assert cdf.fraction_at_or_below(-1.0) == 1.0
    assert cdf.fraction_at_or_below(-1.5) == 0.5
    assert cdf.fraction_at_or_below(-3.5) == 0.0
    assert cdf.percentile(-3.0) == 0.0 and cdf.percentile(-1.0) == 1.0
    assert dlt.EmpiricalCdf.from_dict(cdf.to_dict()).fraction_at_or_below(-2.0) == 0.5
    b = dlt.EmpiricalCdf(knots=[-4.0, 0.0], fractions=[0.0, 1.0])
    assert b.fraction_at_or_below(-1.0) == pytest.approx(0.75)
    assert b.quantile(0.25) == pytest.approx(-3.0)
    with pytest.raises(dlt.DltError):
        dlt.EmpiricalCdf(knots=[0.0, -1.0], fractions=[0.0, 1.0])
    with pytest.raises(dlt.DltError):
        dlt.EmpiricalCdf([])


@given(st.floats(0.0, 1.0))
def test_quantile_inverts_percentile(p):
    cdf = dlt.EmpiricalCdf(np.linspace(-5.0, 0.0, 101))
    assert cdf.percentile(cdf.quantile(p)) == pytest.approx(p, abs=1e-9)


def test_risk_levels_at_the_band_edges():
    cdf = dlt.EmpiricalCdf(np.round(np.arange(1, 101) * -0.01, 2))  # one sample per percent
    lv = lambda a: dlt.risk_level(a, cdf, 6.0)
    assert lv(-0.20) == dlt.RiskLevel.TRIVIAL  # 81 % brake at least this hard
    assert lv(-0.21) == dlt.RiskLevel.LOW  # exactly 80 %
    assert lv(-0.90) == dlt.RiskLevel.LOW  # 11 %
    assert lv(-0.91) == dlt.RiskLevel.MID  # exactly 10 %
    assert lv(-0.99) == dlt.RiskLevel.MID  # 2 %
    assert lv(-1.00) == dlt.RiskLevel.HIGH  # 1 %
    assert lv(-6.0) == dlt.RiskLevel.HIGH
    assert lv(-6.01) == dlt.RiskLevel.INFEASIBLE
    assert lv(None) == dlt.RiskLevel.INFEASIBLE


# ---------------------------------------------------------------- formulas


@given(st.one_of(st.just(0.0), st.floats(1e-3, 15.0)), st.floats(0.5, 60.0))
def test_longitudinal_decel_stops_exactly_at_the_gap(dv, g):
    a = dlt.longitudinal_decel(dv, g)
    assert a <= 0
    if dv > 0:
        assert dv * dv / (2 * -a) == pytest.approx(g)
    assert dlt.longitudinal_decel(dv, 0.0) is dlt.INFEASIBLE


@given(st.floats(1.0, 60.0), st.floats(0.5, 15.0), st.floats(0.1, 10.0))
def test_crossing_decel_keeps_the_front_out_until_the_window_closes(D, v, t_out):
    a = dlt.crossing_decel(D, v, t_out)
    # constant deceleration from t = 0 (stopping allowed); distance reached by t_out
    t_stop = v / -a if a < 0 else math.inf
    dist = v * t_stop / 2 if t_stop <= t_out else v * t_out + 0.5 * a * t_out * t_out
    assert dist <= D + 1e-9
    if a < -1e-9:
        weaker = a * 0.99
        t_stop = v / -weaker
        dist2 = v * t_stop / 2 if t_stop <= t_out else v * t_out + 0.5 * weaker * t_out * t_out
        assert dist2 > D - 1e-9


def test_signal_decel_go_or_stop():
    assert dlt.signal_decel(30.0, 12.0, 3.0) == 0.0  # clears within the yellow
    assert dlt.signal_decel(40.0, 12.0, 3.0) == pytest.approx(-144 / 80)
    assert dlt.signal_decel(0.0, 12.0, 3.0) is dlt.INFEASIBLE


# ---------------------------------------------------------------- suite


def test_shipped_suite_covers_every_scenario(suite, calibration):
    assert set(suite) == set(dlt.SCENARIO_IDS)
    assert set(dlt.SCENARIO_IDS) <= set(calibration)
    for s in suite.values():
        assert s.layout in dlt.LAYOUTS or s.layout == "signal"
        assert s.challenger in dlt.CHALLENGERS and s.formula in dlt.FORMULAS
        assert dlt.ScenarioSpec.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("sid", dlt.SCENARIO_IDS)
def test_every_scenario_generates_consistent_cases(sid, suite, calibration):
    spec, cdf = suite[sid], calibration[sid]
    cases = dlt.generate_cases(spec, cdf)
    assert cases, sid
    assert [c.index for c in cases] == list(range(len(cases)))
    for c in cases:
        assert c.risk in dlt.TESTED_LEVELS
        assert dlt.risk_level(dlt.required_decel(spec, c.point), cdf, spec.physical_bound) == c.risk
        for (lo, hi), x in zip([(a.lo, a.hi) for a in spec.axes], c.point):
            assert lo <= x <= hi
    # finer tiles at higher risk: at least as many cells per unit area
    gx = spec.grid
    assert gx.size(dlt.RiskLevel.HIGH)[0] <= gx.size(dlt.RiskLevel.MID)[0] <= gx.size(dlt.RiskLevel.LOW)[0]


def test_grid_config_must_refine_with_risk():
    with pytest.raises(dlt.DltError):
        dlt.GridConfig(low=(1.0, 1.0), mid=(2.0, 2.0), high=(0.5, 0.5))


def test_cells_tile_the_axis():
    assert dlt._cells(0.0, 10.0, 4.0) == [2.0, 6.0, 9.0]
    assert dlt._cells(0.0, 1.0, 5.0) == [0.5]


def test_cut_in_instance_geometry(suite):
    spec = suite["cut_in"]
    inst = dlt.build_instance(spec, (4.0, 12.0))
    av, ch = inst.av, inst.challenger
    assert av.speed == spec.av_speed and ch.speed == pytest.approx(spec.av_speed - 4.0)
    assert (ch.x - ch.length / 2) - (av.x + av.length / 2) == pytest.approx(12.0)
    # it ends up centered in the AV lane
    end = ch.script.at(10.0)
    assert end.y == pytest.approx(av.y, abs=1e-9)


def test_crossing_window_for_a_jaywalker(suite):
    spec = suite["vru_jaywalk"]
    inst = dlt.build_instance(spec, (8.0, 30.0))
    D, t_out = dlt.crossing_window(inst)
    assert D == pytest.approx(30.0, abs=0.5)
    assert 0 < t_out < spec.horizon


def test_case_metrics_on_synthetic_records():
    def rec(t, x_av, x_ch, accel=0.0):
        av = {"x": x_av, "y": 0.0, "heading": 0.0, "speed": 10.0, "accel": accel, "lat_rate": 0.0,
              "length": 4.0, "width": 2.0}
        ch = {"x": x_ch, "y": 0.0, "heading": 0.0, "speed": 5.0, "accel": 0.0, "lat_rate": 0.0,
              "length": 4.0, "width": 2.0}
        return {"t": t, "av": av, "ch": ch}

    records = [rec(0.0, 0.0, 20.0), rec(0.1, 1.0, 20.5, accel=-2.0), rec(0.2, 2.0, 21.0, accel=-2.0)]
    m = dlt.case_metrics(records, a_req=-1.0)
    assert m.d_min == pytest.approx(15.0)
    assert m.ttc_min == pytest.approx(15.0 / 5.0)
    assert m.t_react == pytest.approx(0.1)


def test_run_case_reports_three_seeded_runs(suite, calibration):
    spec = suite["car_following"]
    case = dlt.generate_cases(spec, calibration["car_following"])[0]
    done = dlt.run_case(case, spec, builtin_policy("surrogate-idm"), base_seed=3)
    assert len(done.outcomes) == 3 and done.verdict == "pass"
    assert len({o.seed for o in done.outcomes}) == 3
    again = dlt.run_case(case, spec, builtin_policy("surrogate-idm"), base_seed=3)
    assert [o.to_dict() for o in again.outcomes] == [o.to_dict() for o in done.outcomes]


def test_format_table_layout():
    rows = [dlt.ScenarioRow("cut_in", 3, "P", 3, 0, 1.234, None, 0.5), dlt.ScenarioRow("x", 2, "F", 1, 1)]
    text = dlt.format_table(rows)
    lines = text.splitlines()
    assert lines[0].split() == ["scenario", "N", "P/F", "n_p", "n_f", "d_min", "TTC_min", "t_react"]
    assert lines[2].split() == ["cut_in", "3", "P", "3", "0", "1.23", "N/A", "0.50"]
    assert lines[3].split()[-3:] == ["-", "-", "-"]


@pytest.mark.slow
def test_surrogate_idm_passes_the_whole_suite(tmp_path):
    res = run_dlt(RunConfig(mode="dlt", output=str(tmp_path)).validate())
    assert not res.inconclusive
    failing = [(r.scenario, r.n_fail) for r in res.rows if r.verdict != "P"]
    assert not failing
    assert res.passed
    assert (tmp_path / "dlt_table.txt").is_file() and (tmp_path / "dlt_cases.jsonl").is_file()
