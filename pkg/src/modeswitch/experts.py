"""Rule-based aggressive and timid drivers and demonstration datasets.

Both modes steer by pure pursuit along the scenario route and pick a speed
command as the minimum of several caps:

* the mode's target speed;
* curve caps ``sqrt(lateral_accel * R)``, approached at ``comfort_decel``;
* car-following on vehicles inside the mode's corridor around the route:
  ``sqrt(v_lead**2 + 2 b gap)``, or for oncoming traffic
  ``sqrt(2 b (gap - v_oncoming * oncoming_headway))``;
* (timid) yield at a conflict's stop line while the conflicting car is
  within ``yield_horizon`` seconds of the crossing;
* (timid) creep at ``creep_speed`` inside the caution zone while any
  occlusion probe is hidden.

A visible car ahead within ``hazard_distance`` that is being closed on
overrides everything with full braking. The aggressive mode perceives other
cars ``reaction_delay`` steps late; its own state is always current.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .artifacts import read_artifact, write_artifact
from .scenarios import (ALL_SCENARIOS, ScenarioId, ScenarioInstance, Setting, build_scenario,
                        load_catalog, sample_setting, scripted_step, Route)
from .seeding import rng_for
from .sim import (OBS_FIELDS, Action, DynamicsParams, ObservationModel, Observation, StepOutcome,
                  is_occluded, observe)

AGGRESSIVE = 1
TIMID = 2
MODE_NAMES = {AGGRESSIVE: "aggressive", TIMID: "timid"}
PURSUIT_LOOKAHEAD = 6.0
CLOSING_THRESHOLD = 0.5
HAZARD_HALF_WIDTH = 2.4
CONFLICT_CLEARANCE = 6.0

DEMO_MAGIC = b"MSDEMO01"
DEMO_FORMAT = "modeswitch.demos/1"
ACTION_FIELDS = ("throttle", "steer")


def parse_mode(mode) -> int:
    if isinstance(mode, str):
        key = mode.strip().lower()
        for k, v in MODE_NAMES.items():
            if key in (v, str(k)):
                return k
        raise ValueError(f"unknown mode {mode!r}")
    m = int(mode)
    if m not in MODE_NAMES:
        raise ValueError(f"mode must be in 1..{len(MODE_NAMES)}, got {mode}")
    return m


@dataclass(frozen=True)
class ModeParams:
    target_speed: float
    hazard_distance: float
    brake_gain: float
    occlusion_caution: bool
    reaction_delay: int
    corridor_halfwidth: float = 1.3
    standoff: float = 0.5
    comfort_decel: float = 6.0
    lateral_accel: float = 4.0
    oncoming_headway: float = 0.5
    yield_horizon: float = 0.0
    creep_speed: float = 2.0

    def __post_init__(self):
        if not self.target_speed > 0:
            raise ValueError("target_speed must be > 0")
        if not self.hazard_distance > 0:
            raise ValueError("hazard_distance must be > 0")
        if not isinstance(self.reaction_delay, int) or self.reaction_delay < 0:
            raise ValueError("reaction_delay must be an integer >= 0")
        for name in ("brake_gain", "corridor_halfwidth", "comfort_decel", "lateral_accel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("standoff", "oncoming_headway", "yield_horizon", "creep_speed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModeParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mode parameters {sorted(unknown)}")
        return cls(**d)


DEFAULT_MODES = {
    AGGRESSIVE: ModeParams(target_speed=12.0, hazard_distance=5.0, brake_gain=1.0, occlusion_caution=False,
                           reaction_delay=3, corridor_halfwidth=1.3, standoff=0.5, comfort_decel=6.0,
                           lateral_accel=4.0, oncoming_headway=0.5, yield_horizon=0.0, creep_speed=2.0),
    TIMID: ModeParams(target_speed=6.0, hazard_distance=15.0, brake_gain=0.5, occlusion_caution=True,
                      reaction_delay=0, corridor_halfwidth=4.6, standoff=8.0, comfort_decel=3.0,
                      lateral_accel=2.5, oncoming_headway=2.0, yield_horizon=6.0, creep_speed=2.0),
}


def _cap_at(v_stop: float, dist: float, decel: float) -> float:
    """Highest speed now from which ``v_stop`` can be reached within ``dist``."""
    return math.sqrt(v_stop * v_stop + 2.0 * decel * max(0.0, dist))


def pursuit_steer(obs: Observation, route: Route, p: DynamicsParams, s: Optional[float] = None) -> float:
    if s is None:
        s, _, _ = route.project(obs.ego_x, obs.ego_y)
    tx, ty, _ = route.point_at(s + PURSUIT_LOOKAHEAD)
    dx, dy = tx - obs.ego_x, ty - obs.ego_y
    alpha = kernels.wrap_angle(math.atan2(dy, dx) - obs.ego_heading)
    dist = max(math.hypot(dx, dy), 1e-6)
    return 2.0 * obs.ego_speed * math.sin(alpha) / (dist * p.omega_max)


def _others(obs: Observation):
    if obs.ado_visible:
        yield "ado", obs.ado_x, obs.ado_y, obs.ado_speed, obs.ado_heading
    if obs.lead_visible:
        yield "lead", obs.lead_x, obs.lead_y, obs.lead_speed, obs.lead_heading


def speed_command(mode: ModeParams, obs: Observation, route: Route, p: DynamicsParams,
                  s: float) -> float:
    b = mode.comfort_decel
    v_cmd = mode.target_speed
    for s0, s1, radius in route.curves:
        if s < s1:
            v_cmd = min(v_cmd, _cap_at(math.sqrt(mode.lateral_accel * radius), s0 - s, b))
    ego_len = 2.0 * p.vehicle_half_length
    for _, ox, oy, ov, oh in _others(obs):
        so, lo, ho = route.project(ox, oy)
        if so <= s or abs(lo) > mode.corridor_halfwidth:
            continue
        v_par = max(ov, 0.0) * math.cos(oh - ho)
        gap = so - s - ego_len - mode.standoff
        if v_par >= 0.0:
            v_cmd = min(v_cmd, math.sqrt(max(0.0, v_par * v_par + 2.0 * b * gap)))
        else:
            v_cmd = min(v_cmd, math.sqrt(max(0.0, 2.0 * b * (gap + v_par * mode.oncoming_headway))))
    if mode.yield_horizon > 0.0 and obs.ado_visible:
        for c in route.conflicts:
            if s > c.stop_s + 0.3:
                continue
            d_o = c.ado_distance(obs.ado_x, obs.ado_y)
            if d_o > -CONFLICT_CLEARANCE and d_o < mode.yield_horizon * max(obs.ado_speed, 0.5):
                v_cmd = min(v_cmd, _cap_at(0.0, c.stop_s - s, b))
    if mode.occlusion_caution and route.caution_zone is not None and route.probes:
        c0, c1 = route.caution_zone
        if s < c1:
            ego = (obs.ego_x, obs.ego_y)
            if any(is_occluded(ego, pr, route.occluders) for pr in route.probes):
                v_cmd = min(v_cmd, _cap_at(mode.creep_speed, c0 - s, b))
    return v_cmd


def imminent_hazard(mode: ModeParams, obs: Observation) -> bool:
    c, sn = math.cos(obs.ego_heading), math.sin(obs.ego_heading)
    for _, ox, oy, ov, oh in _others(obs):
        dx, dy = ox - obs.ego_x, oy - obs.ego_y
        fwd = dx * c + dy * sn
        lat = -dx * sn + dy * c
        if fwd <= 0.0 or abs(lat) > HAZARD_HALF_WIDTH or math.hypot(dx, dy) > mode.hazard_distance:
            continue
        closing = obs.ego_speed - max(ov, 0.0) * math.cos(oh - obs.ego_heading)
        if closing > CLOSING_THRESHOLD:
            return True
    return False


def expert_action(mode: ModeParams, obs: Observation, route: Route,
                  p: Optional[DynamicsParams] = None) -> Action:
    """The mode's action for an (already delayed, if applicable) observation."""
    p = p or DynamicsParams()
    s, _, _ = route.project(obs.ego_x, obs.ego_y)
    steer = pursuit_steer(obs, route, p, s)
    if imminent_hazard(mode, obs):
        return Action(-1.0, steer)
    v_cmd = speed_command(mode, obs, route, p, s)
    throttle = mode.brake_gain * (v_cmd - obs.ego_speed) + p.friction * obs.ego_speed / p.a_max
    return Action(throttle, steer)


def delayed_view(current: Observation, past: Observation) -> Observation:
    """Current ego state combined with other-vehicle fields from ``past``."""
    return replace(past, ego_x=current.ego_x, ego_y=current.ego_y,
                   ego_heading=current.ego_heading, ego_speed=current.ego_speed)


class ExpertDriver:
    """Stateful wrapper that applies the mode's reaction delay."""

    def __init__(self, mode: ModeParams, route: Route, p: Optional[DynamicsParams] = None):
        self.mode = mode
        self.route = route
        self.p = p or DynamicsParams()
        self._hist: deque = deque(maxlen=mode.reaction_delay + 1)

    def reset(self) -> None:
        self._hist.clear()

    def act(self, obs: Observation) -> Action:
        if not self._hist:
            for _ in range(self._hist.maxlen):
                self._hist.append(obs)
        else:
            self._hist.append(obs)
        view = obs if self.mode.reaction_delay == 0 else delayed_view(obs, self._hist[0])
        return expert_action(self.mode, view, self.route, self.p)


# ---------------------------------------------------------------- datasets

@dataclass
class DemoDataset:
    mode: int
    obs: np.ndarray  # (K, len(OBS_FIELDS)) float32
    actions: np.ndarray  # (K, 2) float32
    episode_starts: np.ndarray  # (E + 1,) int64 offsets into the records
    scenarios: np.ndarray  # (E,) scenario index
    settings: np.ndarray  # (E,) 1 = difficult
    outcomes: np.ndarray  # (E,) 0 running/1 collision/2 reached/3 timeout
    meta: dict

    def __post_init__(self):
        if self.obs.shape[0] != self.actions.shape[0]:
            raise ValueError("observation and action counts differ")
        if self.episode_starts[0] != 0 or self.episode_starts[-1] != self.K:
            raise ValueError("episode boundaries do not cover the records")
        if (np.diff(self.episode_starts) <= 0).any():
            raise ValueError("empty or unordered episode")

    @property
    def K(self) -> int:
        return int(self.obs.shape[0])

    @property
    def n_episodes(self) -> int:
        return int(self.episode_starts.shape[0] - 1)

    def episode(self, i: int) -> slice:
        return slice(int(self.episode_starts[i]), int(self.episode_starts[i + 1]))

    def episode_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_episodes), np.diff(self.episode_starts))

    def observations(self, i: int) -> list[Observation]:
        return [Observation.from_array(r) for r in self.obs[self.episode(i)].astype(np.float64)]

    def save(self, path) -> None:
        header = dict(self.meta)
        header.update({"format": DEMO_FORMAT, "mode": MODE_NAMES[self.mode], "K": self.K,
                       "episodes": self.n_episodes, "obs_fields": list(OBS_FIELDS),
                       "action_fields": list(ACTION_FIELDS)})
        write_artifact(path, DEMO_MAGIC, header, {
            "obs": self.obs.astype(np.float32), "actions": self.actions.astype(np.float32),
            "episode_starts": self.episode_starts.astype(np.int64),
            "scenarios": self.scenarios.astype(np.int8), "settings": self.settings.astype(np.int8),
            "outcomes": self.outcomes.astype(np.int8)})

    @classmethod
    def load(cls, path) -> "DemoDataset":
        hdr, arr = read_artifact(path, DEMO_MAGIC)
        if hdr.get("format") != DEMO_FORMAT:
            raise ValueError(f"{path}: unsupported dataset format {hdr.get('format')!r}")
        if hdr.get("obs_fields") != list(OBS_FIELDS):
            raise ValueError(f"{path}: observation layout differs from this build")
        meta = {k: v for k, v in hdr.items()
                if k not in ("format", "mode", "K", "episodes", "obs_fields", "action_fields", "arrays")}
        ds = cls(parse_mode(hdr["mode"]), arr["obs"], arr["actions"], arr["episode_starts"],
                 arr["scenarios"], arr["settings"], arr["outcomes"], meta)
        if ds.K != hdr["K"]:
            raise ValueError(f"{path}: header K={hdr['K']} but {ds.K} records")
        return ds


OUTCOME_CODES = {StepOutcome.RUNNING: 0, StepOutcome.COLLISION: 1, StepOutcome.REACHED: 2,
                 StepOutcome.TIMEOUT: 3}


def run_expert_episode(mode_id: int, mode: ModeParams, inst: ScenarioInstance, rng: np.random.Generator,
                       p: DynamicsParams, m: ObservationModel):
    """Roll the expert out; returns (observations, actions, outcome, final world)."""
    driver = ExpertDriver(mode, inst.nominal_route, p)
    w = inst.initial
    obs_rows, act_rows = [], []
    while True:
        o = observe(w, m, rng).quantized()
        a = driver.act(o)
        obs_rows.append(o.to_array())
        act_rows.append((a.throttle, a.steer))
        w, out = scripted_step(inst, w, a, p)
        if out is not StepOutcome.RUNNING:
            return obs_rows, act_rows, out, w


def collect_demonstrations(mode, scenario_ids: Iterable, episodes_per_scenario: int, seed: int,
                           modes: Optional[dict] = None, p: Optional[DynamicsParams] = None,
                           m: Optional[ObservationModel] = None, catalog=None,
                           setting: Optional[Setting] = None, extra_meta: Optional[dict] = None) -> DemoDataset:
    """Closed-loop expert rollouts, settings sampled uniformly unless ``setting`` is given.

    Episode ``k`` of scenario ``sid`` draws everything from
    ``rng_for(seed, "collect/<mode>/<sid>", k)``, so datasets are reproducible
    and independent of episode order.
    """
    if episodes_per_scenario < 1:
        raise ValueError("episodes_per_scenario must be >= 1")
    mode_id = parse_mode(mode)
    params = (modes or DEFAULT_MODES)[mode_id]
    p = p or DynamicsParams()
    m = m or ObservationModel()
    cat = catalog if catalog is not None else load_catalog()
    sids = [ScenarioId.parse(s) for s in scenario_ids]
    obs_all, act_all, starts, scen, sett, outs = [], [], [0], [], [], []
    for sid in sids:
        for k in range(episodes_per_scenario):
            rng = rng_for(seed, f"collect/{MODE_NAMES[mode_id]}/{sid.value}", k)
            st = sample_setting(rng) if setting is None else setting
            inst = build_scenario(sid, st, rng, cat)
            o, a, out, _ = run_expert_episode(mode_id, params, inst, rng, p, m)
            obs_all.extend(o)
            act_all.extend(a)
            starts.append(starts[-1] + len(o))
            scen.append(sid.index)
            sett.append(1 if st is Setting.DIFFICULT else 0)
            outs.append(OUTCOME_CODES[out])
    meta = {"seed": int(seed), "catalog_hash": cat.hash, "scenarios": [s.value for s in sids],
            "episodes_per_scenario": int(episodes_per_scenario), "mode_params": params.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    return DemoDataset(mode_id, np.asarray(obs_all, dtype=np.float32), np.asarray(act_all, dtype=np.float32),
                       np.asarray(starts, dtype=np.int64), np.asarray(scen, dtype=np.int8),
                       np.asarray(sett, dtype=np.int8), np.asarray(outs, dtype=np.int8), meta)


def merge_datasets(parts: Sequence[DemoDataset]) -> DemoDataset:
    if not parts:
        raise ValueError("nothing to merge")
    if len({d.mode for d in parts}) != 1:
        raise ValueError("cannot merge datasets of different modes")
    offs = [0]
    starts = []
    for d in parts:
        starts.append(d.episode_starts[:-1] + offs[-1])
        offs.append(offs[-1] + d.K)
    starts.append(np.array([offs[-1]]))
    meta = dict(parts[0].meta)
    meta["parts"] = len(parts)
    return DemoDataset(parts[0].mode, np.concatenate([d.obs for d in parts]),
                       np.concatenate([d.actions for d in parts]), np.concatenate(starts).astype(np.int64),
                       np.concatenate([d.scenarios for d in parts]), np.concatenate([d.settings for d in parts]),
                       np.concatenate([d.outcomes for d in parts]), meta)


__all__ = [
    "AGGRESSIVE", "TIMID", "MODE_NAMES", "ModeParams", "DEFAULT_MODES", "expert_action", "ExpertDriver",
    "DemoDataset", "collect_demonstrations", "merge_datasets", "parse_mode", "run_expert_episode",
    "ALL_SCENARIOS",
]
