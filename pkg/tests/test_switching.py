import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modeswitch.switching import (
    COUNTEREXAMPLE_ALPHAS,
    ModePolicy,
    SwitchBound,
    TabularMDP,
    best_stationary_p,
    certify_counterexample,
    construct_counterexample_mdp,
    enumerate_switching,
    fixed_mode_value,
    load_counterexample_mdp,
    mode_policy,
    optimal_switching_value,
    uniform_bound_instances,
    random_mdp,
    sequence_value,
    stationary_random_value,
    verify_uniform_bound,
    verify_switching_optimality,
    worst_switching_value,
)


def brute_random_value(mdp, pols, p, T):
    """Expected return of i.i.d. mode draws, by summing over every sequence."""
    total = 0.0
    for seq in itertools.product(range(len(pols)), repeat=T):
        w = math.prod(p[m] for m in seq)
        if w:
            total += w * sequence_value(mdp, pols, seq)
    return total


def walk(mdp, actions):
    s, tot = mdp.initial_state, 0.0
    for a in actions:
        tot += mdp.true_reward[s, a]
        s = mdp.transitions[s, a]
    return tot


@st.composite
def instances(draw, max_states=4, max_T=6):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    S = draw(st.integers(1, max_states))
    T = draw(st.integers(1, max_T))
    mdp = random_mdp(rng, S, 2, T, integer=draw(st.booleans()))
    alphas = (draw(st.floats(0, 2)), draw(st.floats(0, 2)))
    return mdp, tuple(mode_policy(mdp, a) for a in alphas)


# ---------------------------------------------------------------- types

def test_mdp_validates_tables():
    with pytest.raises(ValueError):
        TabularMDP(np.array([[0, 5]]), np.zeros((1, 2, 2)), 3, 0)
    with pytest.raises(ValueError):
        TabularMDP(np.array([[0, 0]]), np.zeros((1, 2, 2)), 0, 0)


def test_true_reward_is_sum_of_components():
    mdp = random_mdp(np.random.default_rng(3), 3, 2, 4)
    assert np.array_equal(mdp.true_reward, mdp.rewards[..., 0] + mdp.rewards[..., 1])
    assert np.allclose(mdp.weighted_reward(1.0), mdp.true_reward)


def test_switch_bound_invariants():
    with pytest.raises(ValueError):
        SwitchBound(1.0, 2.0, 5.0, 2, 3)
    with pytest.raises(ValueError):
        SwitchBound(2.0, 0.0, 2.0, 2, 3)
    assert SwitchBound(2.0, 0.0, 4.0, 2, 2).lower_bound == pytest.approx(2.0 - 4.0 + 1.0)


def test_mdp_file_round_trip(tmp_path):
    mdp, _ = construct_counterexample_mdp(7)
    mdp.save(tmp_path / "m.json")
    back = TabularMDP.load(tmp_path / "m.json")
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.rewards, mdp.rewards)
    assert back.horizon == 7


# ---------------------------------------------------------------- mode policies

def test_alpha_two_ignores_safety_term():
    rng = np.random.default_rng(11)
    for _ in range(20):
        mdp = random_mdp(rng, 3, 2, 4)
        R = mdp.rewards[..., 0] * 2.0
        pol = mode_policy(mdp, 2.0)
        V = np.zeros(mdp.n_states)
        for t in range(mdp.horizon - 1, -1, -1):
            Q = R + V[mdp.transitions]
            best = Q.argmax(axis=1)
            assert np.array_equal(pol.steps[t], best)
            V = Q.max(axis=1)


def test_alpha_one_is_optimal_for_true_reward():
    rng = np.random.default_rng(5)
    for _ in range(30):
        mdp = random_mdp(rng, 3, 2, 4)
        pol = mode_policy(mdp, 1.0)
        # open-loop search is exhaustive under deterministic dynamics
        best = max(walk(mdp, acts) for acts in itertools.product(range(2), repeat=mdp.horizon))
        assert fixed_mode_value(mdp, pol) == pytest.approx(best, abs=1e-12)


def test_ties_break_to_lowest_action():
    mdp = TabularMDP(np.array([[0, 0]]), np.zeros((1, 2, 2)), 3, 0)
    assert (mode_policy(mdp, 1.0).steps == 0).all()


def test_alpha_out_of_range():
    mdp, _ = construct_counterexample_mdp(3)
    with pytest.raises(ValueError):
        mode_policy(mdp, 2.5)


# ---------------------------------------------------------------- counterexample instance

def test_counterexample_aggressive_mode_always_takes_first_action():
    mdp, (agg, tim) = construct_counterexample_mdp(10)
    assert agg.alpha == COUNTEREXAMPLE_ALPHAS[0]
    assert (agg.steps == 0).all()
    assert (tim.steps == 1).all()


def test_counterexample_fixed_values_are_zero():
    for T in range(2, 12):
        mdp, (agg, tim) = construct_counterexample_mdp(T)
        assert fixed_mode_value(mdp, agg) == 0.0
        assert fixed_mode_value(mdp, tim) == 0.0


def test_counterexample_optimal_switching_reaches_horizon():
    for T in range(2, 12):
        mdp, pols = construct_counterexample_mdp(T)
        assert optimal_switching_value(mdp, pols) == pytest.approx(T, abs=1e-12)
        best, worst, seq, _ = enumerate_switching(mdp, pols)
        assert best == pytest.approx(T, abs=1e-12)
        assert worst <= -2
        assert sequence_value(mdp, pols, seq) == pytest.approx(T, abs=1e-12)


def test_counterexample_half_half_mixture_is_negative_at_T5():
    mdp, pols = construct_counterexample_mdp(5)
    v = stationary_random_value(mdp, pols, (0.5, 0.5))
    assert v < 0
    assert v == pytest.approx(brute_random_value(mdp, pols, (0.5, 0.5), 5), abs=1e-12)


def test_counterexample_mixture_09_01_is_negative_at_T5():
    mdp, pols = construct_counterexample_mdp(5)
    v = stationary_random_value(mdp, pols, (0.9, 0.1))
    assert v < 0
    assert v == pytest.approx(brute_random_value(mdp, pols, (0.9, 0.1), 5), abs=1e-12)


def test_counterexample_penalty_from_s2_and_s4():
    mdp, _ = construct_counterexample_mdp(4)
    assert (mdp.true_reward[1] == -2).any()
    assert (mdp.true_reward[3] == -2).any()


@pytest.mark.parametrize("T", [3, 5, 10])
def test_counterexample_certificate_passes(T):
    cert = certify_counterexample(T)
    assert cert.ok, cert.lines()
    assert cert.optimal_value == pytest.approx(T)
    assert cert.grid_max_random < 0


def test_counterexample_certificate_horizon_two_only_weak():
    cert = certify_counterexample(2)
    assert cert.ok
    assert cert.grid_max_random <= 1e-9


def test_counterexample_grid_maximum_witness():
    # brute force over the 0.05 grid with the enumeration oracle
    mdp, pols = construct_counterexample_mdp(10)
    grid = [round(0.05 * k, 10) for k in range(1, 20)]
    vals = [brute_random_value(mdp, pols, (q, 1 - q), 10) for q in grid]
    cert = certify_counterexample(10)
    assert max(vals) == pytest.approx(cert.grid_max_random, abs=1e-12)
    assert max(vals) == pytest.approx(-0.392651, abs=1e-6)


def test_shipped_instance_matches_construction():
    shipped = load_counterexample_mdp()
    built, _ = construct_counterexample_mdp(shipped.horizon)
    assert np.array_equal(shipped.transitions, built.transitions)
    assert np.array_equal(shipped.rewards, built.rewards)


def test_counterexample_needs_horizon_two():
    with pytest.raises(ValueError):
        construct_counterexample_mdp(1)


def test_no_positive_mixture_beats_fixed_modes_fine_scan():
    # weighted-family footnote: alpha=1 is the true reward yet no interior p wins
    mdp, pols = construct_counterexample_mdp(10)
    for q in np.linspace(0.001, 0.999, 181):
        assert stationary_random_value(mdp, pols, (q, 1 - q)) < 0


# ---------------------------------------------------------------- random switching

def test_degenerate_mixture_equals_fixed_mode():
    rng = np.random.default_rng(2)
    for _ in range(20):
        mdp = random_mdp(rng, 4, 2, 5)
        pols = (mode_policy(mdp, 0.3), mode_policy(mdp, 1.7))
        for i in range(2):
            p = np.eye(2)[i]
            assert stationary_random_value(mdp, pols, p) == pytest.approx(fixed_mode_value(mdp, pols[i]), abs=1e-12)


def test_zero_horizon_value_is_zero():
    mdp, pols = construct_counterexample_mdp(4)
    assert stationary_random_value(mdp, pols, (0.5, 0.5), T=0) == 0.0


@pytest.mark.parametrize("p", [(0.5, 0.6), (-0.1, 1.1), (1.0,), (math.nan, 0.5)])
def test_invalid_probability_vector(p):
    mdp, pols = construct_counterexample_mdp(4)
    with pytest.raises(ValueError):
        stationary_random_value(mdp, pols, p)


def test_single_mode_enumeration():
    mdp, pols = construct_counterexample_mdp(6)
    best, worst, _, _ = enumerate_switching(mdp, pols[:1])
    assert best == worst


def test_enumeration_budget():
    mdp, pols = construct_counterexample_mdp(30)
    with pytest.raises(ValueError):
        enumerate_switching(mdp, pols)


def test_uniform_T1_is_average_of_two_steps():
    mdp = TabularMDP(np.array([[0, 0]]), np.array([[[1.0, 0.0], [-3.0, 0.5]]]), 1, 0)
    pols = (ModePolicy(0.0, np.array([[0]])), ModePolicy(0.0, np.array([[1]])))
    v = stationary_random_value(mdp, pols, (0.5, 0.5))
    assert v == pytest.approx((1.0 + -2.5) / 2)
    rep = verify_uniform_bound(mdp, pols, a=5.0)
    # U* = 1, bound = 1 - 5 + 5/2 = -1.5; fixed values 1 and -2.5 -> premise fails
    assert rep.bound == pytest.approx(-1.5)
    assert rep.premise_holds is False
    assert rep.bound_holds is None


@settings(max_examples=60, deadline=None)
@given(instances())
def test_dp_matches_enumeration(inst):
    mdp, pols = inst
    best, worst, seq, values = enumerate_switching(mdp, pols)
    assert abs(optimal_switching_value(mdp, pols) - best) <= 1e-12
    assert abs(worst_switching_value(mdp, pols) - worst) <= 1e-12
    for q in (0.0, 0.3, 0.5, 1.0):
        p = (q, 1 - q)
        assert abs(stationary_random_value(mdp, pols, p) - brute_random_value(mdp, pols, p, mdp.horizon)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(instances())
def test_relabelling_modes_changes_nothing(inst):
    mdp, (a, b) = inst
    p = (0.3, 0.7)
    assert stationary_random_value(mdp, (a, b), p) == pytest.approx(
        stationary_random_value(mdp, (b, a), p[::-1]), abs=1e-12)
    assert optimal_switching_value(mdp, (a, b)) == optimal_switching_value(mdp, (b, a))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_switching_switching_never_loses_to_fixed(inst):
    mdp, pols = inst
    rep = verify_switching_optimality(mdp, pols)
    assert rep.holds
    assert rep.optimal_value >= max(rep.fixed_values) - 1e-12


def test_switching_equality_when_one_mode_is_optimal():
    rng = np.random.default_rng(8)
    for _ in range(10):
        mdp = random_mdp(rng, 3, 2, 4)
        pols = (mode_policy(mdp, 1.0), mode_policy(mdp, 1.0))
        rep = verify_switching_optimality(mdp, pols)
        assert rep.equality


@settings(max_examples=80, deadline=None)
@given(instances(), st.floats(0.01, 10.0))
def test_uniform_bound_bound_whenever_premise_holds(inst, extra):
    mdp, pols = inst
    gap = optimal_switching_value(mdp, pols) - worst_switching_value(mdp, pols)
    rep = verify_uniform_bound(mdp, pols, gap + extra)
    if rep.premise_holds:
        assert rep.bound_holds
        assert rep.random_value >= rep.bound - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_uniform_bound_sampled_instances_meet_bound(seed):
    ((mdp, pols, a),) = uniform_bound_instances(np.random.default_rng(seed), 1)
    rep = verify_uniform_bound(mdp, pols, a)
    assert rep.premise_holds and rep.bound_holds
    assert all(v < rep.bound for v in rep.fixed_values)
    U, Up, _, vals = enumerate_switching(mdp, pols)
    assert abs(U - rep.U_star) < 1e-12 and abs(Up - rep.U_prime) < 1e-12
    assert abs(float(np.mean(vals)) - rep.random_value) < 1e-12


def test_uniform_bound_premise_example():
    # A -a0-> B, A -a1-> C; B pays 2 for a1, C pays 2 for a0; every other move pays 0
    mdp = TabularMDP([[1, 2], [1, 1], [2, 2]],
                     [[[0, 0], [0, 0]], [[0, 0], [2, 0]], [[2, 0], [0, 0]]], 2, 0)
    pols = tuple(ModePolicy(math.nan, np.full((2, 3), a)) for a in (0, 1))
    rep = verify_uniform_bound(mdp, pols, 2.0 + 1e-6)
    # by hand: sequences (0,0) (0,1) (1,0) (1,1) return 0, 2, 2, 0
    assert (rep.U_star, rep.U_prime, rep.fixed_values) == (2.0, 0.0, [0.0, 0.0])
    assert rep.random_value == pytest.approx(1.0, abs=1e-12)
    assert rep.bound == pytest.approx(0.5, abs=1e-5)
    assert rep.premise_holds and rep.bound_holds


def test_best_stationary_p_reports_grid_maximum():
    mdp, pols = construct_counterexample_mdp(10)
    p, v = best_stationary_p(mdp, pols, step=0.05)
    assert v == pytest.approx(stationary_random_value(mdp, pols, p))
