import math

import numpy as np
import pytest

from modeswitch import hrl
from modeswitch.hrl import HighLevelEnv, PpoConfig, RewardParams, RolloutBuffer, compute_gae, train_high_level
from modeswitch.nets import HighLevelNet
from modeswitch.scenarios import ScenarioId, Setting
from modeswitch.sim import ContractViolation, StepOutcome


def constant_low(thr=0.3):
    return lambda x, mode: (thr if mode == 1 else -0.2, 0.0)


def scripted(monkeypatch, outcomes):
    """Replace the simulator step so that the k-th low-level step returns ``outcomes[k]``."""
    it = iter(outcomes)
    real = hrl.scripted_step

    def fake(inst, w, a, p):
        nxt, _ = real(inst, w, a, p)
        return nxt, next(it, StepOutcome.RUNNING)
    monkeypatch.setattr(hrl, "scripted_step", fake)


def env(**kw):
    e = HighLevelEnv(constant_low(), [ScenarioId.HALTING_CAR], t_s=5, **kw)
    e.reset(0, setting=Setting.EASY)
    return e


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(r_step=0.1)
    with pytest.raises(ValueError):
        RewardParams(r_success=-1.0)
    with pytest.raises(ValueError):
        RewardParams(r_collision=-10.0).check_dominance(300)
    RewardParams().check_dominance(400)


def test_t_s_validation():
    with pytest.raises(ValueError):
        HighLevelEnv(constant_low(), [ScenarioId.MERGE], t_s=0)


def test_plain_step_reward(monkeypatch):
    scripted(monkeypatch, [])
    _, r, done = env().high_step(1)
    assert r == pytest.approx(-0.5) and not done


def test_collision_on_third_step(monkeypatch):
    scripted(monkeypatch, [StepOutcome.RUNNING, StepOutcome.RUNNING, StepOutcome.COLLISION])
    e = env()
    _, r, done = e.high_step(2)
    assert r == pytest.approx(-100.3) and done and e.steps == 3 and e.outcome is StepOutcome.COLLISION


def test_destination_on_first_step(monkeypatch):
    scripted(monkeypatch, [StepOutcome.REACHED])
    _, r, done = env().high_step(1)
    assert r == pytest.approx(-0.1) and done


def test_success_reward_is_added(monkeypatch):
    scripted(monkeypatch, [StepOutcome.RUNNING, StepOutcome.REACHED])
    _, r, _ = env(rewards=RewardParams(r_success=10.0)).high_step(1)
    assert r == pytest.approx(9.8)


def test_stepping_after_done_is_an_error(monkeypatch):
    scripted(monkeypatch, [StepOutcome.COLLISION])
    e = env()
    e.high_step(1)
    with pytest.raises(ContractViolation):
        e.high_step(1)


def test_mode_out_of_range():
    with pytest.raises(ValueError):
        env().high_step(3)


def test_high_level_length_is_ceiling():
    for mode in (1, 2):
        e = HighLevelEnv(constant_low(), [ScenarioId.CROSS_TRAFFIC], t_s=5)
        e.reset(3, setting=Setting.DIFFICULT)
        n = 0
        done = False
        while not done:
            _, _, done = e.high_step(mode)
            n += 1
        assert n == math.ceil(e.steps / 5)


def test_recorded_trajectory_columns():
    e = HighLevelEnv(constant_low(), [ScenarioId.HALTING_CAR], t_s=5, record=True)
    e.reset(0, setting=Setting.DIFFICULT)
    e.high_step(1)
    e.high_step(2)
    assert len(e.trajectory) == 10 and len(e.trajectory[0]) == len(hrl.TRACE_COLUMNS)
    assert [row[-1] for row in e.trajectory] == [1] * 5 + [2] * 5


# ---------------------------------------------------------------- GAE

def test_gae_one_step_td_when_gamma_zero():
    r, v, d = [1.0, -2.0, 0.5], [0.3, 0.1, -0.4], [False, False, True]
    adv, ret = compute_gae(r, v, d, gamma=0.0, lam=0.7)
    np.testing.assert_allclose(adv, np.array(r) - np.array(v))
    np.testing.assert_allclose(ret, r)


def test_gae_zero_everything():
    adv, _ = compute_gae([0.0] * 4, [0.0] * 4, [False, False, False, True], 0.99, 0.95)
    assert not adv.any()


def brute_gae(r, v, gamma, lam):
    """Sum over l of (gamma lam)^l delta_{t+l} for a single terminal episode."""
    T = len(r)
    v_next = list(v[1:]) + [0.0]
    delta = [r[t] + gamma * v_next[t] - v[t] for t in range(T)]
    return [sum((gamma * lam) ** l * delta[t + l] for l in range(T - t)) for t in range(T)]


def test_gae_three_step_episode():
    r, v = [-0.5, -0.5, -100.3], [-2.0, -1.5, -3.0]
    adv, ret = compute_gae(r, v, [False, False, True], 0.99, 0.95)
    np.testing.assert_allclose(adv, brute_gae(r, v, 0.99, 0.95), atol=1e-12)
    # with lambda = 1 the return is the plain discounted sum
    _, ret1 = compute_gae(r, v, [False, False, True], 0.9, 1.0)
    np.testing.assert_allclose(ret1, [r[0] + 0.9 * r[1] + 0.81 * r[2], r[1] + 0.9 * r[2], r[2]], atol=1e-12)


def test_gae_does_not_leak_across_episodes():
    adv, _ = compute_gae([1.0, 5.0], [0.0, 0.0], [True, True], 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.0, 5.0])


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        compute_gae([1.0], [0.0, 0.0], [True], 0.9, 0.9)


def test_update_requires_advantages():
    buf = RolloutBuffer()
    buf.add(np.zeros(3), 1, -0.7, 0.0, -1.0, True)
    with pytest.raises(ValueError):
        hrl.ppo_update(HighLevelNet(3), buf, PpoConfig(), hrl.AdamState(), np.random.default_rng(0))


# ---------------------------------------------------------------- PPO on stub environments

class StubEnv:
    """Minimal high-level env: ``payoff(mode, step) -> (reward, done, outcome)``."""

    feature_dim = 4
    n_modes = 2
    t_s = 1

    def __init__(self, payoff):
        self.payoff = payoff
        self.scenarios = [ScenarioId.MERGE]

    def reset(self, seed, scenario=None, setting=None):
        self.k = 0
        self.total_reward = 0.0
        self.outcome = StepOutcome.RUNNING
        self.x = np.random.default_rng(seed).normal(size=4) * 0.1
        return self.x

    def high_step(self, mode):
        r, done, out = self.payoff(mode, self.k)
        self.k += 1
        self.total_reward += r
        if done:
            self.outcome = out
        return self.x, r, done


def greedy_prob(net, mode, n=200):
    X = np.random.default_rng(99).normal(size=(n, 4)) * 0.1
    return float(net.probs(X)[:, mode - 1].mean())


def test_bandit_converges():
    bandit = StubEnv(lambda m, k: (1.0 if m == 1 else 0.0, True, StepOutcome.REACHED))
    net, curve = train_high_level(ScenarioId.MERGE, None, PpoConfig(total_steps=10_000, eval_episodes=0), env=bandit)
    assert greedy_prob(net, 1) > 0.95


def test_avoids_the_colliding_mode():
    def payoff(m, k):
        if m == 1:
            return -100.0, True, StepOutcome.COLLISION
        return -0.5, k >= 9, StepOutcome.REACHED
    net, curve = train_high_level(ScenarioId.MERGE, None, PpoConfig(total_steps=10_000, eval_episodes=0),
                                  env=StubEnv(payoff))
    assert greedy_prob(net, 2) > 0.95
    assert curve.rows[-1][2] < curve.rows[0][2]


def test_training_is_reproducible():
    def run():
        bandit = StubEnv(lambda m, k: (1.0 if m == 1 else 0.0, True, StepOutcome.REACHED))
        return train_high_level(ScenarioId.MERGE, None, PpoConfig(total_steps=4096, eval_episodes=5), env=bandit)
    (a, ca), (b, cb) = run(), run()
    assert ca.rows == cb.rows and ca.csv() == cb.csv()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=1.0)
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.5)
    with pytest.raises(ValueError):
        PpoConfig(reward_scale=0.0)
