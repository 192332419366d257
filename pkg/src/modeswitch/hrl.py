"""Mode-switching POMDP over the cloned low-level policies, and PPO on it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .experts import OUTCOME_CODES
from .features import FEATURE_DIM, obs_features
from .nets import AdamState, HighLevelNet, adam_step, ppo_loss_and_grad
from .scenarios import ScenarioId, Setting, build_scenario, load_catalog, sample_setting, scripted_step
from .seeding import rng_for, sub_seed
from .sim import (Action, ContractViolation, DynamicsParams, ObservationModel, StepOutcome, observe)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardParams:
    r_step: float = -0.1
    r_collision: float = -100.0
    r_success: float = 0.0

    def __post_init__(self):
        if self.r_step > 0:
            raise ValueError("r_step must be <= 0")
        if self.r_success < 0:
            raise ValueError("r_success must be >= 0")

    def check_dominance(self, horizon: int) -> None:
        if not self.r_collision < self.r_step * horizon:
            raise ValueError(f"r_collision must be below r_step * horizon = {self.r_step * horizon}")


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    learning_rate: float = 1e-3
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    total_steps: int = 100000
    steps_per_batch: int = 2048
    max_grad_norm: float = 0.5
    width: int = 64
    eval_every: int = 2
    eval_episodes: int = 40
    reward_scale: float = 0.05  # applied to PPO targets only; reported returns are unscaled

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        for name in ("epochs", "minibatch_size", "total_steps", "steps_per_batch", "width", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0")
        if not self.reward_scale > 0:
            raise ValueError("reward_scale must be > 0")


TRACE_COLUMNS = ("tick", "x", "y", "heading", "speed", "s", "ado_x", "ado_y", "ado_heading", "ado_speed", "mode")


def episode_rng(seed: int, sid: ScenarioId) -> np.random.Generator:
    """Stream for setting, layout and observation noise of one test/train episode."""
    return rng_for(seed, f"episode/{sid.value}")


class HighLevelEnv:
    """Each action picks a low-level branch that then drives for up to ``t_s`` steps.

    ``low_policy(features, mode) -> (throttle, steer)`` is usually
    ``BranchedPolicyNet.forward_low``.
    """

    def __init__(self, low_policy: Callable, scenarios, t_s: int = 5, rewards: RewardParams = RewardParams(),
                 n_modes: int = 2, catalog=None, dynamics: DynamicsParams = DynamicsParams(),
                 observation: ObservationModel = ObservationModel(), record: bool = False):
        if t_s < 1:
            raise ValueError("t_s must be >= 1")
        self.low_policy = low_policy
        self.scenarios = [ScenarioId.parse(s) for s in (scenarios if isinstance(scenarios, (list, tuple)) else [scenarios])]
        self.t_s = int(t_s)
        self.rewards = rewards
        self.n_modes = int(n_modes)
        self.catalog = catalog if catalog is not None else load_catalog()
        self.p = dynamics
        self.m = observation
        self.record = record
        self.done = True

    feature_dim = FEATURE_DIM

    def reset(self, seed: int, scenario=None, setting: Optional[Setting] = None) -> np.ndarray:
        sid = ScenarioId.parse(scenario) if scenario is not None else self.scenarios[seed % len(self.scenarios)]
        self.sid = sid
        self.seed = int(seed)
        self.rng = episode_rng(seed, sid)
        st = sample_setting(self.rng) if setting is None else setting
        self.inst = build_scenario(sid, st, self.rng, self.catalog)
        self.route = self.inst.nominal_route
        self.w = self.inst.initial
        self.steps = 0
        self.done = False
        self.outcome = StepOutcome.RUNNING
        self.total_reward = 0.0
        self.speed_sum = 0.0
        self.trajectory: list = []
        self.modes: list = []
        self._observe()
        return self.features

    def _observe(self) -> None:
        self.obs = observe(self.w, self.m, self.rng).quantized()
        self.features = obs_features(self.obs, self.sid, self.route)

    def _record(self, mode) -> None:
        e, a = self.w.ego, self.w.ado
        s, _, _ = self.route.project(e.x, e.y)
        ado = (a.x, a.y, a.heading, a.speed) if a is not None else (math.nan,) * 4
        self.trajectory.append((self.w.tick, e.x, e.y, e.heading, e.speed, s) + ado + (mode,))

    def high_step(self, mode: int, annotate=True) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise ContractViolation("high_step called after the episode ended")
        if not 1 <= int(mode) <= self.n_modes:
            raise ValueError(f"mode {mode} outside 1..{self.n_modes}")
        mode = int(mode)
        self.modes.append(mode)
        n = 0
        out = StepOutcome.RUNNING
        tag = mode if annotate is True else annotate
        while n < self.t_s:
            if self.record:
                self._record(tag)
            self.speed_sum += self.w.ego.speed
            thr, st = self.low_policy(self.features, mode)
            self.w, out = scripted_step(self.inst, self.w, Action(thr, st), self.p)
            n += 1
            self.steps += 1
            if out is not StepOutcome.RUNNING:
                break
            self._observe()
        r = n * self.rewards.r_step
        if out is StepOutcome.COLLISION:
            r += self.rewards.r_collision
        elif out is StepOutcome.REACHED:
            r += self.rewards.r_success
        if out is not StepOutcome.RUNNING:
            self.done = True
            self.outcome = out
        self.total_reward += r
        return self.features, r, self.done


# ---------------------------------------------------------------- PPO

@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def add(self, x, a, lp, v, r, d) -> None:
        self.obs.append(x); self.actions.append(a); self.logp.append(lp)
        self.values.append(v); self.rewards.append(r); self.dones.append(d)

    def __len__(self) -> int:
        return len(self.rewards)

    def check(self) -> None:
        n = len(self.rewards)
        if not all(len(getattr(self, f)) == n for f in ("obs", "actions", "logp", "values", "dones")):
            raise ValueError("rollout buffer sequences have different lengths")


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalised advantage estimation; value after a terminal step is 0."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if not (r.shape == v.shape == d.shape):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros_like(r)
    gae = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        nxt = last_value if t == r.shape[0] - 1 else v[t + 1]
        nonterm = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * nxt * nonterm - v[t]
        gae = delta + gamma * lam * nonterm * gae
        adv[t] = gae
    return adv, adv + v


@dataclass
class UpdateStats:
    losses: list
    clip_fraction: float
    approx_kl: float
    entropy: float


def clip_group(grads: dict, prefix: str, max_norm: float) -> float:
    """Scale the gradients whose names start with ``prefix`` to norm <= ``max_norm`` in place."""
    keys = [k for k in grads if k.startswith(prefix)]
    norm = math.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
    if norm > max_norm:
        for k in keys:
            grads[k] = grads[k] * (max_norm / norm)
    return norm


def ppo_update(net: HighLevelNet, buf: RolloutBuffer, cfg: PpoConfig, opt: AdamState,
               rng: np.random.Generator) -> UpdateStats:
    buf.check()
    if buf.advantages is None:
        raise ValueError("compute advantages before updating")
    X = np.asarray(buf.obs, dtype=np.float64)
    A = np.asarray(buf.actions, dtype=np.int64) - 1
    old = np.asarray(buf.logp, dtype=np.float64)
    adv = buf.advantages
    std = adv.std()
    adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    ret = buf.returns
    N = X.shape[0]
    losses, clipf, kl, ent = [], [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(N)
        for lo in range(0, N, cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            parts, g = ppo_loss_and_grad(net, X[idx], A[idx], old[idx], adv[idx], ret[idx], cfg.clip_eps,
                                         cfg.value_coef, cfg.entropy_coef)
            if not math.isfinite(parts.total) or not all(np.isfinite(v).all() for v in g.values()):
                raise FloatingPointError(f"non-finite PPO loss: {parts}")
            for prefix in ("pi_", "v_"):  # the value loss must not throttle the policy step
                clip_group(g, prefix, cfg.max_grad_norm)
            adam_step(net.params, g, opt)
            losses.append(parts.total); clipf.append(parts.clip_fraction)
            kl.append(parts.approx_kl); ent.append(parts.entropy)
    return UpdateStats(losses, float(np.mean(clipf)), float(np.mean(kl)), float(np.mean(ent)))


@dataclass
class TrainingCurve:
    rows: list = field(default_factory=list)  # (high-level steps, mean episode reward, collision rate)
    eval_rows: list = field(default_factory=list)  # (high-level steps, greedy validation reward)
    best_step: int = 0

    def csv(self) -> str:
        lines = ["step,mean_reward,collision_rate"]
        lines += [f"{s},{r:.6f},{c:.6f}" for s, r, c in self.rows]
        return "\n".join(lines) + "\n"


def greedy_return(net: HighLevelNet, env: HighLevelEnv, seeds: Sequence[int]) -> float:
    tot = 0.0
    for s in seeds:
        x = env.reset(s)
        done = False
        while not done:
            a, _, _ = net.act(x, greedy=True)
            x, _, done = env.high_step(a)
        tot += env.total_reward
    return tot / max(1, len(seeds))


def train_high_level(scenario, low_policy: Callable, cfg: PpoConfig = PpoConfig(), seed: int = 0,
                     t_s: int = 5, rewards: RewardParams = RewardParams(), catalog=None,
                     dynamics: DynamicsParams = DynamicsParams(), observation: ObservationModel = ObservationModel(),
                     n_modes: int = 2, env: Optional[HighLevelEnv] = None):
    """PPO for one scenario. Returns (net with best greedy validation return, curve).

    Training and validation episodes use seeds derived from ``seed`` under
    names that never collide with evaluation seeds.
    """
    sid = ScenarioId.parse(scenario) if env is None else env.scenarios[0]
    env = env or HighLevelEnv(low_policy, [sid], t_s, rewards, n_modes, catalog, dynamics, observation)
    in_dim = getattr(env, "feature_dim", FEATURE_DIM)
    net = HighLevelNet(in_dim, env.n_modes, cfg.width, cfg.width, seed=sub_seed(seed, f"hl/init/{sid.value}"))
    rng = rng_for(seed, f"hl/ppo/{sid.value}")
    opt = AdamState(lr=cfg.learning_rate)
    val_seeds = [sub_seed(seed, f"hl/val/{sid.value}", k) for k in range(cfg.eval_episodes)]
    curve = TrainingCurve()
    best, best_val = net.copy(), -math.inf
    steps, episode, it = 0, 0, 0
    while steps < cfg.total_steps:
        buf = RolloutBuffer()
        ep_rewards, ep_coll = [], []
        while len(buf) < cfg.steps_per_batch:
            x = env.reset(sub_seed(seed, f"hl/train/{sid.value}", episode), sid)
            episode += 1
            done = False
            while not done:
                a, lp, v = net.act(x, rng)
                x2, r, done = env.high_step(a)
                buf.add(x, a, lp, v, r, done)
                x = x2
            ep_rewards.append(env.total_reward)
            ep_coll.append(env.outcome is StepOutcome.COLLISION)
        buf.advantages, buf.returns = compute_gae(np.asarray(buf.rewards) * cfg.reward_scale, buf.values,
                                                  buf.dones, cfg.gamma, cfg.lam)
        stats = ppo_update(net, buf, cfg, opt, rng)
        steps += len(buf)
        it += 1
        curve.rows.append((steps, float(np.mean(ep_rewards)), float(np.mean(ep_coll))))
        log.info("%s it %d steps %d reward %.2f coll %.2f ent %.3f", sid.value, it, steps,
                 np.mean(ep_rewards), np.mean(ep_coll), stats.entropy)
        if cfg.eval_episodes and (it % cfg.eval_every == 0 or steps >= cfg.total_steps):
            val = greedy_return(net, env, val_seeds)
            curve.eval_rows.append((steps, val))
            if val > best_val:
                best_val, best, curve.best_step = val, net.copy(), steps
    if not cfg.eval_episodes:
        best = net
    best.meta = {"scenario": sid.value, "best_step": curve.best_step, "t_s": env.t_s}
    return best, curve


__all__ = ["RewardParams", "PpoConfig", "HighLevelEnv", "RolloutBuffer", "compute_gae", "ppo_update",
           "train_high_level", "TrainingCurve", "episode_rng", "TRACE_COLUMNS", "OUTCOME_CODES"]
