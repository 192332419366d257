"""Closed-loop evaluation of the compared policies, metrics, frontiers and trace export."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hrl import TRACE_COLUMNS, HighLevelEnv, RewardParams
from .nets import BranchedPolicyNet, HighLevelNet
from .scenarios import ScenarioId, Setting, in_risk_zone, load_catalog
from .seeding import rng_for, sub_seed
from .sim import DynamicsParams, ObservationModel, StepOutcome


class PolicyKind(enum.Enum):
    HREIL = "hreil"
    IL = "il"
    AGGRESSIVE = "aggressive"
    TIMID = "timid"
    RANDOM = "random"

    @classmethod
    def parse(cls, name) -> "PolicyKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        for k in cls:
            if key == k.value:
                return k
        raise ValueError(f"unknown policy {name!r}; expected one of {[k.value for k in cls]}")


class MissingModel(FileNotFoundError):
    pass


@dataclass
class PolicySet:
    """Everything needed to roll out any policy kind."""

    low_net: Optional[BranchedPolicyNet] = None
    il_net: Optional[BranchedPolicyNet] = None
    hl_nets: dict = field(default_factory=dict)  # ScenarioId -> HighLevelNet
    t_s: int = 5
    rewards: RewardParams = RewardParams()
    dynamics: DynamicsParams = DynamicsParams()
    observation: ObservationModel = ObservationModel()
    catalog: object = None

    def __post_init__(self):
        if self.catalog is None:
            self.catalog = load_catalog()

    def env(self, kind: PolicyKind, sid: ScenarioId, record: bool) -> HighLevelEnv:
        if kind is PolicyKind.IL:
            if self.il_net is None:
                raise MissingModel("IL baseline weights are not loaded")
            net, n_modes = self.il_net, 1
        else:
            if self.low_net is None:
                raise MissingModel("low-level branched weights are not loaded")
            net, n_modes = self.low_net, self.low_net.n_branches
        if kind is PolicyKind.HREIL and sid not in self.hl_nets:
            raise MissingModel(f"no high-level policy for {sid.value}")
        return HighLevelEnv(net.forward_low, [sid], self.t_s, self.rewards, n_modes, self.catalog,
                            self.dynamics, self.observation, record)


@dataclass
class EpisodeResult:
    scenario: str
    setting: str
    seed: int
    reward: float
    collided: bool
    completed: bool
    completion_time: Optional[float]
    steps: int
    mean_speed: float
    modes: list
    trajectory: list
    outcome: str = ""

    def __post_init__(self):
        if self.collided and self.completed:
            raise ValueError("an episode cannot both collide and complete")


@dataclass
class MetricsSummary:
    policy: str
    scenario: str
    runs: int
    mean_reward: float
    std_reward: float
    collision_rate: Optional[float]
    n_difficult: int
    mean_completion_time: Optional[float]
    n_completed: int
    mean_speed: float
    rewards: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"policy": self.policy, "scenario": self.scenario, "runs": self.runs,
                "mean_reward": self.mean_reward, "std_reward": self.std_reward,
                "collision_rate": self.collision_rate, "n_difficult": self.n_difficult,
                "mean_completion_time": self.mean_completion_time, "n_completed": self.n_completed,
                "mean_speed": self.mean_speed}


def run_episode(kind, scenario, seed: int, models: PolicySet, setting: Optional[Setting] = None,
                record: bool = True) -> EpisodeResult:
    kind = PolicyKind.parse(kind)
    sid = ScenarioId.parse(scenario)
    env = models.env(kind, sid, record)
    x = env.reset(seed, sid, setting)
    pick = None
    if kind is PolicyKind.RANDOM:
        prng = rng_for(seed, f"policy/random/{sid.value}")
        pick = lambda _x: int(prng.integers(1, env.n_modes + 1))  # noqa: E731
    elif kind is PolicyKind.HREIL:
        hl = models.hl_nets[sid]
        pick = lambda x_: hl.act(x_, greedy=True)[0]  # noqa: E731
    fixed = {PolicyKind.AGGRESSIVE: 1, PolicyKind.TIMID: 2, PolicyKind.IL: 1}.get(kind)
    tag = None if kind is PolicyKind.IL else True
    done = False
    while not done:
        mode = fixed if pick is None else pick(x)
        x, _, done = env.high_step(mode, annotate=tag)
    collided = env.outcome is StepOutcome.COLLISION
    completed = env.outcome is StepOutcome.REACHED
    dt = models.dynamics.dt
    return EpisodeResult(sid.value, env.inst.setting.value, int(seed), float(env.total_reward), collided, completed,
                         env.steps * dt if completed else None, env.steps, env.speed_sum / env.steps,
                         [] if kind is PolicyKind.IL else list(env.modes), env.trajectory, env.outcome.value)


def eval_seeds(base_seed: int, scenario, n: int, namespace: str = "test") -> list[int]:
    sid = ScenarioId.parse(scenario)
    return [sub_seed(base_seed, f"{namespace}/{sid.value}", k) for k in range(n)]


def summarize(kind, scenario, results: Sequence[EpisodeResult]) -> MetricsSummary:
    if not results:
        raise ValueError("no episodes to summarise")
    rewards = [r.reward for r in results]
    diff = [r for r in results if r.setting == Setting.DIFFICULT.value]
    done = [r.completion_time for r in results if r.completed]
    return MetricsSummary(
        PolicyKind.parse(kind).value, ScenarioId.parse(scenario).value, len(results),
        float(np.mean(rewards)), float(np.std(rewards)),
        float(np.mean([r.collided for r in diff])) if diff else None, len(diff),
        float(np.mean(done)) if done else None, len(done),
        float(np.mean([r.mean_speed for r in results])), rewards)


def evaluate(kind, scenario, models: PolicySet, n_runs: int = 100, base_seed: int = 0,
             seeds: Optional[Sequence[int]] = None, setting: Optional[Setting] = None, record: bool = False):
    """Returns (summary, per-episode results). Settings are sampled per episode unless fixed."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = list(seeds) if seeds is not None else eval_seeds(base_seed, scenario, n_runs)
    results = [run_episode(kind, scenario, s, models, setting, record) for s in seeds[:n_runs]]
    return summarize(kind, scenario, results), results


def frontier_from_results(results: Sequence[EpisodeResult], limits: Sequence[float]) -> list[float]:
    lim = list(limits)
    if any(b < a for a, b in zip(lim, lim[1:])):
        raise ValueError("limits must be sorted ascending")
    done = np.array([r.completed for r in results], dtype=bool)
    times = np.array([r.completion_time if r.completed else 0.0 for r in results], dtype=float)
    return [float(np.mean(done & (times <= L))) if len(done) else 0.0 for L in lim]


def completion_frontier(kind, scenario, models: PolicySet, limits: Sequence[float], n_runs: int = 500,
                        base_seed: int = 0, seeds=None):
    _, results = evaluate(kind, scenario, models, n_runs, base_seed, seeds)
    return frontier_from_results(results, limits), results


def zone_mode_frequency(results: Sequence[EpisodeResult], route, mode: int = 2,
                        setting: Setting = Setting.DIFFICULT) -> tuple[float, float]:
    """Fraction of recorded steps in ``mode`` inside and outside the route's risk zone."""
    inside, outside = [], []
    s_col, m_col = TRACE_COLUMNS.index("s"), TRACE_COLUMNS.index("mode")
    for r in results:
        if r.setting != setting.value:
            continue
        for row in r.trajectory:
            (inside if in_risk_zone(route, row[s_col]) else outside).append(row[m_col] == mode)
    f = lambda v: float(np.mean(v)) if v else math.nan  # noqa: E731
    return f(inside), f(outside)


# ---------------------------------------------------------------- export

TRACE_HEADER = ("tick", "s", "x", "y", "heading", "speed", "mode", "ado_x", "ado_y", "ado_heading", "ado_speed",
                "collision")
POSITIONS_HEADER = ("episode", "scenario", "setting", "tick", "x", "y", "mode")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def trace_rows(res: EpisodeResult) -> list[tuple]:
    C = {c: i for i, c in enumerate(TRACE_COLUMNS)}
    rows = []
    last = len(res.trajectory) - 1
    for k, t in enumerate(res.trajectory):
        rows.append((t[C["tick"]], t[C["s"]], t[C["x"]], t[C["y"]], t[C["heading"]], t[C["speed"]], t[C["mode"]],
                     t[C["ado_x"]], t[C["ado_y"]], t[C["ado_heading"]], t[C["ado_speed"]],
                     int(res.collided and k == last)))
    return rows


def export_traces(results: Sequence[EpisodeResult], path) -> list[Path]:
    """One CSV per episode plus ``positions.csv``; returns the written paths."""
    if not results:
        raise ValueError("no results to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    pos_rows = []
    for i, r in enumerate(results):
        if not r.trajectory:
            raise ValueError(f"episode {i} has no recorded trajectory")
        p = out / f"episode_{i:04d}_{r.scenario}_{r.seed}.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in trace_rows(r):
                w.writerow([_fmt(v) for v in row])
        written.append(p)
        for t in r.trajectory:
            pos_rows.append((i, r.scenario, r.setting, t[0], t[1], t[2], t[-1]))
    pp = out / "positions.csv"
    with open(pp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POSITIONS_HEADER)
        for row in pos_rows:
            w.writerow([_fmt(v) for v in row])
    written.append(pp)
    return written


def _parse(v: str):
    if v == "none":
        return None
    if v == "nan":
        return math.nan
    try:
        return int(v)
    except ValueError:
        return float(v)


def read_trace(path) -> list[tuple]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        return [tuple(_parse(v) for v in row) for row in r]


def summary_table(summaries: Sequence[MetricsSummary]) -> str:
    def f(v, spec):
        return "-" if v is None else format(v, spec)
    lines = [f"{'scenario':17s} {'policy':10s} {'reward':>16s} {'collision':>9s} {'time[s]':>8s} {'runs':>5s}"]
    for s in summaries:
        lines.append(f"{s.scenario:17s} {s.policy:10s} {s.mean_reward:8.2f} ± {s.std_reward:6.2f} "
                     f"{f(s.collision_rate, '9.3f')} {f(s.mean_completion_time, '8.2f')} {s.runs:5d}")
    return "\n".join(lines)


def write_summary_json(summaries: Sequence[MetricsSummary], path, extra: Optional[dict] = None) -> None:
    doc = {"summaries": [s.to_dict() for s in summaries]}
    if extra:
        doc.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def dominance_check(summaries: dict, tolerance_fraction: float = 0.05) -> dict:
    """H-ReIL reward against the best other policy, within a fraction of the reward range.

    ``summaries`` maps PolicyKind values to MetricsSummary for one scenario.
    """
    hre = summaries[PolicyKind.HREIL.value].mean_reward
    means = [s.mean_reward for s in summaries.values()]
    others = [s.mean_reward for k, s in summaries.items() if k != PolicyKind.HREIL.value]
    rng_ = max(means) - min(means)
    best = max(others)
    return {"hreil": hre, "best_other": best, "range": rng_, "margin": hre - (best - tolerance_fraction * rng_),
            "passes": hre >= best - tolerance_fraction * rng_}


def switching_vs_fixed(hreil: MetricsSummary, fixed: Sequence[MetricsSummary], z: float = 1.96) -> dict:
    """Difference of mean rewards against the best fixed mode, with a normal-approximation CI."""
    best = max(fixed, key=lambda s: s.mean_reward)
    a, b = np.asarray(hreil.rewards), np.asarray(best.rewards)
    diff = float(a.mean() - b.mean())
    se = float(math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))) if len(a) > 1 and len(b) > 1 else math.inf
    return {"best_fixed": best.policy, "difference": diff, "ci_low": diff - z * se, "ci_high": diff + z * se,
            "not_worse": diff + z * se >= 0.0}
