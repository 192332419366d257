"""Exact finite-horizon analysis of mode switching on small deterministic MDPs.

Rewards come as (efficiency, safety) pairs; the true reward is their sum and a
driving mode with weight ``alpha`` optimises ``alpha*R_e + (2 - alpha)*R_s``.
All values here are exact: dynamic programming over (state, step) and, for
cross-checks, brute-force enumeration of every open-loop mode sequence.
"""

from __future__ import annotations

import itertools
import math
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MDP_FORMAT = "modeswitch.tabular-mdp/1"
ENUMERATION_BUDGET = 10**7


class CounterexampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class TabularMDP:
    transitions: np.ndarray  # (S, A) int, next state
    rewards: np.ndarray  # (S, A, 2) float, (R_e, R_s)
    horizon: int
    initial_state: int = 0

    def __post_init__(self):
        tr = np.asarray(self.transitions, dtype=np.int64)
        rw = np.asarray(self.rewards, dtype=np.float64)
        object.__setattr__(self, "transitions", tr)
        object.__setattr__(self, "rewards", rw)
        if tr.ndim != 2 or rw.shape != tr.shape + (2,):
            raise ValueError("transitions must be (S, A) and rewards (S, A, 2)")
        if tr.min() < 0 or tr.max() >= tr.shape[0]:
            raise ValueError("transition maps outside the state set")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 <= self.initial_state < tr.shape[0]:
            raise ValueError("initial state out of range")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def true_reward(self) -> np.ndarray:
        return self.rewards[..., 0] + self.rewards[..., 1]

    def weighted_reward(self, alpha: float) -> np.ndarray:
        return alpha * self.rewards[..., 0] + (2.0 - alpha) * self.rewards[..., 1]

    def with_horizon(self, horizon: int) -> "TabularMDP":
        return TabularMDP(self.transitions, self.rewards, horizon, self.initial_state)

    def to_dict(self) -> dict:
        return {
            "format": MDP_FORMAT,
            "horizon": int(self.horizon),
            "initial_state": int(self.initial_state),
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMDP":
        if d.get("format") != MDP_FORMAT:
            raise ValueError(f"unsupported MDP format {d.get('format')!r}")
        return cls(np.array(d["transitions"]), np.array(d["rewards"], dtype=float),
                   int(d["horizon"]), int(d["initial_state"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TabularMDP":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ModePolicy:
    """Finite-horizon optimal policy for one reward weighting.

    ``steps[t, s]`` is the action taken in state ``s`` at step ``t`` (0-based).
    Arbitrary tables not tied to a weighting carry ``alpha = nan``.
    """

    alpha: float
    steps: np.ndarray

    @property
    def stationary(self) -> bool:
        return bool((self.steps == self.steps[0]).all())

    @property
    def table(self) -> np.ndarray:
        if not self.stationary:
            raise ValueError("policy is not stationary over the horizon")
        return self.steps[0]

    def action(self, t: int, s: int) -> int:
        return int(self.steps[t, s])


@dataclass(frozen=True)
class SwitchBound:
    U_star: float
    U_prime: float
    a: float
    n: int
    T: int

    def __post_init__(self):
        if self.U_prime > self.U_star:
            raise ValueError("U_prime must not exceed U_star")
        if not self.a > self.U_star - self.U_prime:
            raise ValueError("a must exceed U_star - U_prime")

    @property
    def lower_bound(self) -> float:
        return self.U_star - self.a + self.a / self.n**self.T


def mode_policy(mdp: TabularMDP, alpha: float, horizon: Optional[int] = None) -> ModePolicy:
    """Value iteration on the alpha-weighted reward; ties go to the lower action index."""
    if not 0.0 <= alpha <= 2.0:
        raise ValueError("alpha must lie in [0, 2]")
    T = mdp.horizon if horizon is None else horizon
    W = mdp.weighted_reward(alpha)
    V = np.zeros(mdp.n_states)
    steps = np.zeros((T, mdp.n_states), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        Q = W + V[mdp.transitions]
        steps[t] = np.argmax(Q, axis=1)  # first maximum = lowest index
        V = Q.max(axis=1)
    return ModePolicy(alpha, steps)


def _check_policies(mdp: TabularMDP, policies: Sequence[ModePolicy], T: int) -> None:
    for pol in policies:
        if pol.steps.shape[0] < T or pol.steps.shape[1] != mdp.n_states:
            raise ValueError("mode policy does not cover the horizon/state set")


def fixed_mode_value(mdp: TabularMDP, policy: ModePolicy, T: Optional[int] = None) -> float:
    """True cumulative reward of following one mode for the whole episode."""
    T = mdp.horizon if T is None else T
    _check_policies(mdp, [policy], T)
    R = mdp.true_reward
    s = mdp.initial_state
    total = 0.0
    for t in range(T):
        a = policy.action(t, s)
        total += R[s, a]
        s = int(mdp.transitions[s, a])
    return float(total)


def sequence_value(mdp: TabularMDP, policies: Sequence[ModePolicy], modes: Sequence[int]) -> float:
    R = mdp.true_reward
    s = mdp.initial_state
    total = 0.0
    for t, m in enumerate(modes):
        a = policies[m].action(t, s)
        total += R[s, a]
        s = int(mdp.transitions[s, a])
    return float(total)


def _mode_tables(mdp: TabularMDP, policies: Sequence[ModePolicy], T: int):
    """Per-step (n, S) arrays of next states and true rewards under each mode."""
    R = mdp.true_reward
    acts = np.stack([p.steps[:T] for p in policies], axis=1)  # (T, n, S)
    states = np.arange(mdp.n_states)
    nxt = mdp.transitions[states[None, None, :], acts]
    rew = R[states[None, None, :], acts]
    return nxt, rew


def stationary_random_value(mdp: TabularMDP, policies: Sequence[ModePolicy], p: Sequence[float],
                            T: Optional[int] = None) -> float:
    """Expected true return when a mode is drawn i.i.d. from ``p`` at every step."""
    T = mdp.horizon if T is None else T
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (len(policies),) or not np.isfinite(p).all() or (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("p must be a probability vector over the modes")
    if T == 0:
        return 0.0
    _check_policies(mdp, policies, T)
    nxt, rew = _mode_tables(mdp, policies, T)
    V = np.zeros(mdp.n_states)
    for t in range(T - 1, -1, -1):
        V = p @ (rew[t] + V[nxt[t]])
    return float(V[mdp.initial_state])


def optimal_switching_value(mdp: TabularMDP, policies: Sequence[ModePolicy],
                            T: Optional[int] = None) -> float:
    """Best achievable return by choosing a mode every step (DP)."""
    T = mdp.horizon if T is None else T
    _check_policies(mdp, policies, T)
    nxt, rew = _mode_tables(mdp, policies, T)
    V = np.zeros(mdp.n_states)
    for t in range(T - 1, -1, -1):
        V = (rew[t] + V[nxt[t]]).max(axis=0)
    return float(V[mdp.initial_state])


def worst_switching_value(mdp: TabularMDP, policies: Sequence[ModePolicy],
                          T: Optional[int] = None) -> float:
    T = mdp.horizon if T is None else T
    _check_policies(mdp, policies, T)
    nxt, rew = _mode_tables(mdp, policies, T)
    V = np.zeros(mdp.n_states)
    for t in range(T - 1, -1, -1):
        V = (rew[t] + V[nxt[t]]).min(axis=0)
    return float(V[mdp.initial_state])


def enumerate_switching(mdp: TabularMDP, policies: Sequence[ModePolicy], T: Optional[int] = None,
                        budget: int = ENUMERATION_BUDGET):
    """Brute force over all n**T open-loop mode sequences.

    Returns ``(U_star, U_prime, best_sequence, values)`` where ``values`` holds
    every sequence's return in lexicographic order of the sequences.
    """
    T = mdp.horizon if T is None else T
    n = len(policies)
    if n**T > budget:
        raise ValueError(f"{n}^{T} sequences exceed the enumeration budget {budget}")
    _check_policies(mdp, policies, T)
    nxt, rew = _mode_tables(mdp, policies, T)
    states = np.array([mdp.initial_state])
    totals = np.zeros(1)
    for t in range(T):
        # sequences stay in lexicographic order: the newest mode is the fastest index
        totals = (totals[:, None] + rew[t][:, states].T).reshape(-1)
        states = nxt[t][:, states].T.reshape(-1)
    best = int(np.argmax(totals))
    seq = tuple(int(d) for d in np.unravel_index(best, (n,) * T)) if T else ()
    return float(totals.max()), float(totals.min()), seq, totals


def best_stationary_p(mdp: TabularMDP, policies: Sequence[ModePolicy], T: Optional[int] = None,
                      step: float = 0.01):
    """Grid search (n = 2 only) for the stationary mixture with the highest value."""
    if len(policies) != 2:
        raise ValueError("grid diagnostic implemented for two modes")
    grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    vals = [stationary_random_value(mdp, policies, (q, 1.0 - q), T) for q in grid]
    i = int(np.argmax(vals))
    return (float(grid[i]), float(1.0 - grid[i])), float(vals[i])


@dataclass
class UniformBoundReport:
    U_star: float
    U_prime: float
    a: float
    bound: float
    fixed_values: list
    random_value: float
    premise_holds: bool
    bound_holds: Optional[bool]

    @property
    def applicable(self) -> bool:
        return self.premise_holds


def verify_uniform_bound(mdp: TabularMDP, policies: Sequence[ModePolicy], a: float,
                         T: Optional[int] = None, tol: float = 1e-9) -> UniformBoundReport:
    """Check the uniform-switching lower bound where its premise applies.

    The premise is that every fixed mode scores below ``U* - a + a/n**T``;
    when it holds, uniform random switching must reach at least that bound.
    """
    T = mdp.horizon if T is None else T
    n = len(policies)
    U_star = optimal_switching_value(mdp, policies, T)
    U_prime = worst_switching_value(mdp, policies, T)
    sb = SwitchBound(U_star, U_prime, a, n, T)
    fixed = [fixed_mode_value(mdp, pol, T) for pol in policies]
    rnd = stationary_random_value(mdp, policies, np.full(n, 1.0 / n), T)
    premise = all(v < sb.lower_bound for v in fixed)
    holds = (rnd >= sb.lower_bound - tol) if premise else None
    return UniformBoundReport(U_star, U_prime, a, sb.lower_bound, fixed, rnd, premise, holds)


@dataclass
class SwitchingReport:
    optimal_value: float
    fixed_values: list
    holds: bool
    equality: bool


def verify_switching_optimality(mdp: TabularMDP, policies: Sequence[ModePolicy], T: Optional[int] = None,
                                tol: float = 1e-12) -> SwitchingReport:
    """Optimal switching can never lose to a fixed mode (fixed modes are feasible)."""
    T = mdp.horizon if T is None else T
    opt = optimal_switching_value(mdp, policies, T)
    fixed = [fixed_mode_value(mdp, pol, T) for pol in policies]
    holds = all(opt >= v - tol for v in fixed)
    if not holds:
        raise AssertionError(f"optimal switching {opt} below a fixed mode {fixed}")
    return SwitchingReport(opt, fixed, holds, any(abs(opt - v) <= tol for v in fixed))


def random_mdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2,
               horizon: int = 4, reward_scale: float = 2.0, integer: bool = False) -> TabularMDP:
    tr = rng.integers(0, n_states, size=(n_states, n_actions))
    if integer:
        rw = rng.integers(-2, 3, size=(n_states, n_actions, 2)).astype(float)
    else:
        rw = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions, 2))
    return TabularMDP(tr, rw, horizon, 0)


def random_policy(rng: np.random.Generator, n_states: int, horizon: int, n_actions: int = 2) -> ModePolicy:
    """A random stationary action table (no reward weighting behind it)."""
    return ModePolicy(math.nan, np.tile(rng.integers(0, n_actions, n_states), (horizon, 1)))


def uniform_bound_instances(rng: np.random.Generator, count: int, max_states: int = 4, max_T: int = 6, n: int = 2,
                    max_draws: int = 200_000):
    """Rejection-sample ``count`` instances where the uniform-switching premise holds.

    Each draw is a random MDP with ``n`` random stationary low-level policies;
    ``a`` is taken just above ``U* - U'``, which makes the premise easiest to
    meet. Yields ``(mdp, policies, a)``.
    """
    found = 0
    for _ in range(max_draws):
        if found == count:
            return
        S = int(rng.integers(1, max_states + 1))
        T = int(rng.integers(1, max_T + 1))
        mdp = random_mdp(rng, S, n, T, integer=bool(rng.integers(2)))
        pols = tuple(random_policy(rng, S, T, n) for _ in range(n))
        gap = optimal_switching_value(mdp, pols) - worst_switching_value(mdp, pols)
        a = gap * (1.0 + 1e-6) + 1e-9
        if verify_uniform_bound(mdp, pols, a).premise_holds:
            found += 1
            yield mdp, pols, a
    raise RuntimeError(f"only {found} of {count} premise-holding instances in {max_draws} draws")


# Counterexample instance. States s1..s4 are 0..3, action 1 is index 0 (the
# efficiency-seeking "solid" action) and action 2 is index 1.
#   s1 --a1--> s3 (0)    s1 --a2--> s2 (0)
#   s2 --a1--> s2 (-2)   s2 --a2--> s1 (0)
#   s3 --a1--> s1 (0)    s3 --a2--> s4 (+2)
#   s4 --a1--> s4 (+1)   s4 --a2--> s2 (-2)
# Always-a1 cycles s1<->s3 and always-a2 cycles s1<->s2, both earning 0.
# The switching sequence a1, a2, a1, a1, ... collects 0 + 2 + 1*(T-2) = T.
# R_e on a1 edges makes the alpha=1.8 weighted reward exactly 3.2, and on a2
# edges makes the alpha=0.2 weighted reward exactly 3.2; every deviation from
# the mode's own action loses at least 2.4 per step, so both mode policies are
# stationary and unique for every horizon.
COUNTEREXAMPLE_TRANSITIONS = [[2, 1], [1, 0], [0, 3], [3, 1]]
COUNTEREXAMPLE_REWARDS = [
    [[2.0, -2.0], [-2.0, 2.0]],
    [[2.25, -4.25], [-2.0, 2.0]],
    [[2.0, -2.0], [0.25, 1.75]],
    [[1.875, -0.875], [-4.25, 2.25]],
]
COUNTEREXAMPLE_ALPHAS = (1.8, 0.2)


def construct_counterexample_mdp(T: int) -> tuple[TabularMDP, tuple[ModePolicy, ModePolicy]]:
    if T < 2:
        raise ValueError("the counterexample needs a horizon of at least 2")
    mdp = TabularMDP(np.array(COUNTEREXAMPLE_TRANSITIONS), np.array(COUNTEREXAMPLE_REWARDS), T, 0)
    pols = tuple(mode_policy(mdp, a) for a in COUNTEREXAMPLE_ALPHAS)
    return mdp, pols  # type: ignore[return-value]


@dataclass
class CounterexampleCertificate:
    T: int
    fixed_values: tuple[float, float]
    optimal_value: float
    optimal_sequence: tuple
    enumerated_optimum: float
    worst_value: float
    penalty_states: tuple
    grid_max_random: float
    grid_argmax_p: tuple
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        out = [f"horizon T = {self.T}",
               f"fixed mode values (alpha=1.8, alpha=0.2): {self.fixed_values[0]:g}, {self.fixed_values[1]:g}",
               f"U* (optimal switching, DP) = {self.optimal_value:g}",
               f"U* (enumeration of 2^{self.T} sequences) = {self.enumerated_optimum:g}",
               f"U' (worst switching) = {self.worst_value:g}",
               "optimal mode sequence: " + "".join(str(m + 1) for m in self.optimal_sequence),
               f"best stationary random value on grid: {self.grid_max_random:.6g} at p={self.grid_argmax_p}"]
        for name, ok in self.checks.items():
            out.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
        return out


def certify_counterexample(T: int = 10, grid_step: float = 0.05, tol: float = 1e-9,
                   mdp: Optional[TabularMDP] = None) -> CounterexampleCertificate:
    """Machine-check every property the counterexample is required to have.

    ``mdp`` defaults to the shipped instance file; its horizon is replaced by
    ``T``. For ``T >= 3`` random mixtures must score strictly below 0. At
    ``T = 2`` the best reachable mixture ties the fixed modes at exactly 0, so
    only ``<= 0`` is required there.
    """
    if T < 2:
        raise ValueError("the counterexample needs a horizon of at least 2")
    if not 0.0 < grid_step < 0.5:
        raise ValueError("grid_step must lie in (0, 0.5)")
    base = mdp if mdp is not None else load_counterexample_mdp()
    mdp = TabularMDP(base.transitions, base.rewards, T, base.initial_state)
    agg, tim = (mode_policy(mdp, a) for a in COUNTEREXAMPLE_ALPHAS)
    R = mdp.true_reward
    fixed = (fixed_mode_value(mdp, agg), fixed_mode_value(mdp, tim))
    opt = optimal_switching_value(mdp, (agg, tim))
    best, worst, seq, _ = enumerate_switching(mdp, (agg, tim))
    grid = np.round(np.arange(grid_step, 1.0 - grid_step / 2, grid_step), 12)
    rvals = [stationary_random_value(mdp, (agg, tim), (q, 1.0 - q)) for q in grid]
    i = int(np.argmax(rvals))
    penalty_states = tuple(int(s) for s in range(mdp.n_states) if (R[s] == -2.0).any())
    checks = {
        "alpha=1.8 mode always takes action 1": agg.stationary and bool((agg.table == 0).all()),
        "alpha=0.2 mode always takes action 2": tim.stationary and bool((tim.table == 1).all()),
        "alpha=1.8 mode true return is 0": abs(fixed[0]) <= tol,
        "alpha=0.2 mode true return is 0": abs(fixed[1]) <= tol,
        "some action from s2 and from s4 yields R = -2": {1, 3} <= set(penalty_states),
        "optimal switching achieves T": abs(opt - T) <= tol,
        "enumeration agrees with DP": abs(best - opt) <= 1e-12,
        "true reward is the alpha=1 weighting": bool(np.allclose(mdp.weighted_reward(1.0), R, atol=0)),
    }
    if T >= 3:
        checks["every interior stationary mixture on the grid scores < 0"] = max(rvals) < -tol
    else:
        checks["every interior stationary mixture on the grid scores <= 0"] = max(rvals) <= tol
    return CounterexampleCertificate(T, fixed, opt, seq, best, worst, penalty_states, float(max(rvals)),
                                     (float(grid[i]), float(1.0 - grid[i])), checks)


def counterexample_path() -> Path:
    return Path(__file__).with_name("data") / "counterexample_mdp.json"


def load_counterexample_mdp(path=None) -> TabularMDP:
    return TabularMDP.load(path if path is not None else counterexample_path())


def all_sequences(n: int, T: int):
    return itertools.product(range(n), repeat=T)
