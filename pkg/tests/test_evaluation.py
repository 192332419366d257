import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modeswitch.evaluation import (
    TRACE_HEADER, EpisodeResult, MissingModel, PolicyKind, PolicySet, dominance_check, eval_seeds, evaluate,
    export_traces, frontier_from_results, switching_vs_fixed, read_trace, run_episode, summarize, summary_table,
    trace_rows, zone_mode_frequency,
)
from modeswitch.hrl import TRACE_COLUMNS
from modeswitch.nets import HighLevelNet
from modeswitch.features import FEATURE_DIM
from modeswitch.scenarios import ScenarioId, Setting, load_catalog

HC, CT = ScenarioId.HALTING_CAR, ScenarioId.CROSS_TRAFFIC


def result(reward=-10.0, collided=False, completed=True, time=10.0, setting="difficult", seed=0):
    return EpisodeResult("halting-car", setting, seed, reward, collided, completed, time if completed else None,
                         100, 5.0, [], [])


def test_policy_kinds():
    assert {k.value for k in PolicyKind} == {"hreil", "il", "aggressive", "timid", "random"}
    assert PolicyKind.parse("H-ReIL") is PolicyKind.HREIL
    with pytest.raises(ValueError):
        PolicyKind.parse("greedy")


def test_missing_models_are_reported(small_models):
    with pytest.raises(MissingModel):
        run_episode("hreil", HC, 0, small_models)
    with pytest.raises(MissingModel):
        run_episode("timid", HC, 0, PolicySet(catalog=small_models.catalog))


def test_timid_completes_easy_episodes(small_models):
    for seed in range(5):
        r = run_episode("timid", HC, seed, small_models, Setting.EASY)
        assert r.completed and not r.collided
        assert r.completion_time == pytest.approx(r.steps * 0.1)
        assert r.completion_time <= small_models.catalog[HC].time_limit * 0.1


def test_random_mode_sequence_is_reproducible(small_models):
    a = run_episode("random", CT, 11, small_models)
    b = run_episode("random", CT, 11, small_models)
    assert a.modes == b.modes and a.reward == b.reward and set(a.modes) <= {1, 2}
    assert run_episode("random", CT, 12, small_models).modes != a.modes


def test_mode_annotations(small_models):
    assert set(run_episode("aggressive", CT, 0, small_models).modes) == {1}
    assert set(run_episode("timid", CT, 0, small_models).modes) == {2}
    il = run_episode("il", CT, 0, small_models)
    assert il.modes == [] and {row[-1] for row in il.trajectory} == {None}


def test_hreil_uses_its_scenario_net(small_models):
    hl = HighLevelNet(FEATURE_DIM, 2, seed=0)
    ps = PolicySet(low_net=small_models.low_net, hl_nets={CT: hl}, catalog=small_models.catalog)
    r = run_episode("hreil", CT, 5, ps)
    assert r.modes and set(r.modes) <= {1, 2}
    assert r == run_episode("hreil", CT, 5, ps)


def test_all_collisions_summary():
    s = summarize("aggressive", HC, [result(-100.5, True, False) for _ in range(4)])
    assert s.collision_rate == 1.0 and s.mean_completion_time is None and s.n_completed == 0


def test_single_run_summary_equals_episode():
    r = result(-12.5, time=12.4)
    s = summarize("timid", HC, [r])
    assert (s.mean_reward, s.collision_rate, s.mean_completion_time, s.runs) == (-12.5, 0.0, 12.4, 1)


def test_collision_rate_counts_difficult_only():
    rs = [result(-100, True, False), result(-5, setting="easy"), result(-5, setting="easy"), result(-9)]
    s = summarize("random", HC, rs)
    assert s.n_difficult == 2 and s.collision_rate == 0.5
    assert summarize("random", HC, [result(setting="easy")]).collision_rate is None


@given(st.lists(st.tuples(st.floats(-200, 0), st.booleans(), st.sampled_from(["easy", "difficult"])),
                min_size=1, max_size=30))
def test_metric_consistency(rows):
    rs = [result(r, c, not c, setting=s) for r, c, s in rows]
    summ = summarize("timid", HC, rs)
    assert abs(summ.mean_reward - float(np.mean(summ.rewards))) < 1e-9
    assert summ.n_completed == sum(not c for _, c, _ in rows)
    if summ.collision_rate is not None:
        assert 0.0 <= summ.collision_rate <= 1.0


def test_evaluate_uses_common_seeds(small_models):
    seeds = eval_seeds(0, CT, 6)
    assert seeds == eval_seeds(0, CT, 6) and seeds != eval_seeds(0, HC, 6)
    a, ra = evaluate("timid", CT, small_models, 6, seeds=seeds)
    b, rb = evaluate("aggressive", CT, small_models, 6, seeds=seeds)
    assert [r.setting for r in ra] == [r.setting for r in rb]
    with pytest.raises(ValueError):
        evaluate("timid", CT, small_models, 0)


def test_timid_slower_than_aggressive(small_models):
    seeds = eval_seeds(0, CT, 30)
    t, _ = evaluate("timid", CT, small_models, 30, seeds=seeds)
    a, _ = evaluate("aggressive", CT, small_models, 30, seeds=seeds)
    assert t.mean_completion_time > a.mean_completion_time


# ---------------------------------------------------------------- frontier

def test_frontier_properties():
    rs = [result(time=t) for t in (3.0, 5.0, 7.5)] + [result(-100, True, False), result(completed=False)]
    lim = [0.0, 3.0, 5.0, 6.0, 10.0, math.inf]
    f = frontier_from_results(rs, lim)
    assert f[0] == 0.0 and f == sorted(f)
    assert f[-1] == pytest.approx(3 / 5)
    assert f[1] == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        frontier_from_results(rs, [5.0, 1.0])


@given(st.lists(st.floats(0.1, 40), max_size=20), st.lists(st.floats(0, 50), min_size=1, max_size=10))
def test_frontier_is_monotone(times, limits):
    rs = [result(time=t) for t in times] + [result(-100, True, False)]
    f = frontier_from_results(rs, sorted(limits))
    assert all(b >= a for a, b in zip(f, f[1:]))


# ---------------------------------------------------------------- traces

def synthetic_episode(n=80, collided=False, modes=(1, 2)):
    traj = []
    for k in range(n):
        traj.append((k, 0.1 * k, 0.3, 0.01, 6.0 + k / 7, 0.1 * k + 0.05, 30.0 - k / 3, 3.5, math.pi - 0.2,
                     8.0, modes[k % len(modes)]))
    return EpisodeResult("wrong-direction", "difficult", 7, -8.0 - (100 if collided else 0), collided,
                         not collided, None if collided else n / 10, n, 6.0, [], traj)


def test_trace_export_round_trip(tmp_path):
    eps = [synthetic_episode(), synthetic_episode(30, collided=True, modes=(None,))]
    paths = export_traces(eps, tmp_path)
    assert len(paths) == 3 and paths[-1].name == "positions.csv"
    lines = paths[0].read_text().splitlines()
    assert len(lines) == 81 and tuple(lines[0].split(",")) == TRACE_HEADER
    for ep, p in zip(eps, paths):
        assert read_trace(p) == trace_rows(ep)
    back = read_trace(paths[1])
    assert {r[TRACE_HEADER.index("mode")] for r in back} == {None}
    assert [r[-1] for r in back] == [0] * 29 + [1]
    assert {r[TRACE_HEADER.index("mode")] for r in read_trace(paths[0])} <= {1, 2, None}


def test_trace_from_real_episode(tmp_path, small_models):
    r = run_episode("random", HC, 2, small_models, Setting.DIFFICULT)
    assert len(r.trajectory) == r.steps and len(r.trajectory[0]) == len(TRACE_COLUMNS)
    p = export_traces([r], tmp_path)[0]
    rows = read_trace(p)
    assert len(rows) == r.steps
    s_col, m_col = TRACE_HEADER.index("s"), TRACE_HEADER.index("mode")
    assert [row[s_col] for row in rows] == [t[TRACE_COLUMNS.index("s")] for t in r.trajectory]
    assert [row[m_col] for row in rows] == [t[-1] for t in r.trajectory]


def test_export_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        export_traces([], tmp_path)


def test_zone_frequency():
    route = load_catalog()[ScenarioId.WRONG_DIRECTION].route
    lo, hi = route.risk_zone
    traj = [(0, 0, 0, 0, 0, s, 0, 0, 0, 0, 2 if lo <= s <= hi else 1) for s in np.linspace(0, 100, 101)]
    ep = EpisodeResult("wrong-direction", "difficult", 0, -1, False, True, 1.0, 101, 1.0, [], traj)
    easy = EpisodeResult("wrong-direction", "easy", 0, -1, False, True, 1.0, 101, 1.0, [],
                         [t[:-1] + (2,) for t in traj])
    assert zone_mode_frequency([ep, easy], route) == (1.0, 0.0)


# ---------------------------------------------------------------- reports

def test_dominance_and_switching_vs_fixed():
    def summ(kind, rewards):
        return summarize(kind, HC, [result(r) for r in rewards])
    per = {"hreil": summ("hreil", [-10, -11]), "aggressive": summ("aggressive", [-50, -60]),
           "timid": summ("timid", [-12, -13]), "random": summ("random", [-30, -30]), "il": summ("il", [-20, -21])}
    d = dominance_check(per)
    assert d["passes"] and d["best_other"] == -12.5 and d["range"] == pytest.approx(44.5)
    p = switching_vs_fixed(per["hreil"], [per["aggressive"], per["timid"]])
    assert p["best_fixed"] == "timid" and p["difference"] == pytest.approx(2.0) and p["not_worse"]
    text = summary_table(list(per.values()))
    assert "hreil" in text and len(text.splitlines()) == 6
