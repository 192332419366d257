"""The five near-accident scenarios: catalog loading, instance construction, ado scripts."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .seeding import content_hash
from .sim import (Action, DynamicsParams, StepOutcome, VehicleState, WorldState, ZERO_ACTION,
                  point_in_rect, world_step)

CATALOG_FORMAT = "modeswitch.scenario-catalog/1"
ADO_LOOKAHEAD = 6.0
ADO_SPEED_GAIN = 0.5


class CatalogError(ValueError):
    pass


class ScenarioId(enum.Enum):
    CROSS_TRAFFIC = "cross-traffic"
    HALTING_CAR = "halting-car"
    WRONG_DIRECTION = "wrong-direction"
    UNPROTECTED_TURN = "unprotected-turn"
    MERGE = "merge"

    @classmethod
    def parse(cls, name) -> "ScenarioId":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for sid in cls:
            if key in (sid.value, sid.value.replace("-", "")):
                return sid
        raise ValueError(f"unknown scenario {name!r}; expected one of {[s.value for s in cls]}")

    @property
    def index(self) -> int:
        return list(ScenarioId).index(self)


ALL_SCENARIOS = tuple(ScenarioId)


class Setting(enum.Enum):
    EASY = "easy"
    DIFFICULT = "difficult"


def sample_setting(rng: np.random.Generator) -> Setting:
    return Setting.DIFFICULT if rng.random() < 0.5 else Setting.EASY


@dataclass(frozen=True)
class Lane:
    """Straight reference line with a travel direction."""

    x0: float
    y0: float
    heading: float

    @property
    def direction(self) -> tuple[float, float]:
        return math.cos(self.heading), math.sin(self.heading)

    def point(self, s: float, lateral: float = 0.0) -> tuple[float, float]:
        c, sn = self.direction
        return self.x0 + s * c - lateral * sn, self.y0 + s * sn + lateral * c

    def project(self, x: float, y: float) -> tuple[float, float]:
        c, sn = self.direction
        dx, dy = x - self.x0, y - self.y0
        return dx * c + dy * sn, -dx * sn + dy * c


@dataclass(frozen=True)
class Conflict:
    s: float  # ego route arc length of the crossing point
    x: float
    y: float
    lane_heading: float  # travel direction of the conflicting traffic
    stop_s: float  # where a yielding ego halts (route arc length)

    def ado_distance(self, x: float, y: float) -> float:
        """Distance the ado still has to travel to the crossing (negative once past)."""
        return (self.x - x) * math.cos(self.lane_heading) + (self.y - y) * math.sin(self.lane_heading)


@dataclass(frozen=True, eq=False)
class Route:
    points: np.ndarray
    cum: np.ndarray
    curves: tuple[tuple[float, float, float], ...] = ()
    conflicts: tuple[Conflict, ...] = ()
    probes: tuple[tuple[float, float], ...] = ()
    caution_zone: Optional[tuple[float, float]] = None
    risk_zone: Optional[tuple[float, float]] = None
    occluders: tuple[tuple[float, float, float, float], ...] = ()

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """(arc length, signed lateral offset with left positive, local heading)."""
        return kernels.project_polyline(x, y, self.points, self.cum)

    def point_at(self, s: float) -> tuple[float, float, float]:
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.cum) - 2)
        p0, p1 = self.points[i], self.points[i + 1]
        seg = self.cum[i + 1] - self.cum[i]
        hx, hy = (p1 - p0) / seg
        t = s - self.cum[i]
        return float(p0[0] + hx * t), float(p0[1] + hy * t), math.atan2(hy, hx)


@dataclass(frozen=True)
class AdoBehavior:
    kind: str  # cruise | halting | cut_in | blocking
    cruise_speed: float
    trigger_distance: float = 1.0
    burst_speed: float = 0.0
    block_accel: float = 0.0
    halt_start: int = 0
    halt_period: int = 0
    cut_in_offset: float = 0.0
    cut_in_rate: float = 0.0
    cut_in_hold: int = 0

    def __post_init__(self):
        if self.kind not in ("cruise", "halting", "cut_in", "blocking"):
            raise CatalogError(f"script.kind: unknown ado behaviour {self.kind!r}")
        for name in ("cruise_speed", "burst_speed", "block_accel", "cut_in_rate"):
            if getattr(self, name) < 0:
                raise CatalogError(f"script.{name} must be >= 0")
        for name in ("halt_start", "halt_period", "cut_in_hold"):
            if getattr(self, name) < 0:
                raise CatalogError(f"script.{name} must be >= 0")
        if not self.trigger_distance > 0:
            raise CatalogError("script.trigger_distance must be > 0")
        if self.kind == "cut_in" and not self.cut_in_rate > 0:
            raise CatalogError("script.cut_in_rate must be > 0 for a cut-in")


@dataclass(frozen=True)
class ScenarioInstance:
    id: ScenarioId
    setting: Setting
    initial: WorldState
    ado_script: AdoBehavior
    time_limit: int
    nominal_route: Route
    ado_lane: Optional[Lane]
    lead_lane: Optional[Lane] = None
    lead_speed: float = 0.0
    offsets: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")


# ---------------------------------------------------------------- catalog

_SCEN_KEYS = {"time_limit", "destination", "buildings", "route", "ego", "ado", "lead", "script",
              "conflicts", "occlusion_probes", "caution_zone", "risk_zone"}
_REQUIRED = {"time_limit", "destination", "route", "ego", "ado", "script", "risk_zone"}
_CAR_KEYS = {"lane", "start_s", "speed"}
_SCRIPT_KEYS = set(AdoBehavior.__dataclass_fields__)


def _route_points(pieces, where: str):
    pts: list[tuple[float, float]] = []
    curves = []
    length = 0.0

    def add(p):
        nonlocal length
        if pts:
            length += math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1])
        pts.append(p)

    for k, piece in enumerate(pieces):
        if not isinstance(piece, dict) or len(piece) != 1:
            raise CatalogError(f"{where}.route[{k}]: expected {{'line': ...}} or {{'arc': ...}}")
        (kind, vals), = piece.items()
        if kind == "line":
            x0, y0, x1, y1 = map(float, vals)
            if pts and math.hypot(pts[-1][0] - x0, pts[-1][1] - y0) > 1e-6:
                raise CatalogError(f"{where}.route[{k}]: piece does not start where the previous ended")
            if not pts:
                add((x0, y0))
            add((x1, y1))
        elif kind == "arc":
            cx, cy, r, d0, d1 = map(float, vals)
            if not r > 0:
                raise CatalogError(f"{where}.route[{k}]: arc radius must be > 0")
            a0, a1 = math.radians(d0), math.radians(d1)
            start = (cx + r * math.cos(a0), cy + r * math.sin(a0))
            if pts and math.hypot(pts[-1][0] - start[0], pts[-1][1] - start[1]) > 1e-6:
                raise CatalogError(f"{where}.route[{k}]: arc does not start where the previous piece ended")
            if not pts:
                add(start)
            s0 = length
            n = max(4, int(math.ceil(abs(a1 - a0) * r / 0.5)))
            for i in range(1, n + 1):
                a = a0 + (a1 - a0) * i / n
                add((cx + r * math.cos(a), cy + r * math.sin(a)))
            curves.append((s0, length, r))
        else:
            raise CatalogError(f"{where}.route[{k}]: unknown piece type {kind!r}")
    if len(pts) < 2:
        raise CatalogError(f"{where}.route: needs at least one piece")
    arr = np.array(pts, dtype=np.float64)
    seg = np.hypot(*np.diff(arr, axis=0).T)
    if (seg <= 0).any():
        raise CatalogError(f"{where}.route: zero-length segment")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return arr, cum, tuple(curves)


def _lane(vals, where) -> Lane:
    if not isinstance(vals, (list, tuple)) or len(vals) != 3:
        raise CatalogError(f"{where}.lane: expected [x, y, heading_deg]")
    x, y, h = map(float, vals)
    return Lane(x, y, kernels.wrap_angle(math.radians(h)))


def _car(d, where, need_lane: bool):
    if not isinstance(d, dict):
        raise CatalogError(f"{where}: expected an object")
    unknown = set(d) - _CAR_KEYS
    if unknown:
        raise CatalogError(f"{where}: unknown keys {sorted(unknown)}")
    if need_lane and "lane" not in d:
        raise CatalogError(f"{where}.lane: required")
    speed = float(d.get("speed", 0.0))
    if speed < 0:
        raise CatalogError(f"{where}.speed must be >= 0")
    return d


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    id: ScenarioId
    time_limit: int
    destination: tuple[float, float, float]
    buildings: tuple[tuple[float, float, float, float], ...]
    route: Route
    ego_start_s: float
    ego_speed: float
    ado_lane: Lane
    ado_start_s: float
    ado_speed: float
    script: AdoBehavior
    lead_lane: Optional[Lane] = None
    lead_start_s: float = 0.0
    lead_speed: float = 0.0


@dataclass(frozen=True, eq=False)
class Catalog:
    version: int
    perturbation_delta: float
    scenarios: dict
    hash: str
    raw: dict = field(repr=False, default_factory=dict)

    def __getitem__(self, sid) -> ScenarioSpec:
        return self.scenarios[ScenarioId.parse(sid)]


def _parse_scenario(sid: ScenarioId, d: dict) -> ScenarioSpec:
    where = f"scenarios.{sid.value}"
    if not isinstance(d, dict):
        raise CatalogError(f"{where}: expected an object")
    unknown = set(d) - _SCEN_KEYS
    if unknown:
        raise CatalogError(f"{where}: unknown keys {sorted(unknown)}")
    missing = _REQUIRED - set(d)
    if missing:
        raise CatalogError(f"{where}: missing keys {sorted(missing)}")
    tl = d["time_limit"]
    if not isinstance(tl, int) or tl <= 0:
        raise CatalogError(f"{where}.time_limit must be a positive integer")
    dest = tuple(map(float, d["destination"]))
    if len(dest) != 3 or not dest[2] > 0:
        raise CatalogError(f"{where}.destination must be [x, y, radius] with radius > 0")
    buildings = tuple(tuple(map(float, b)) for b in d.get("buildings", []))
    for k, b in enumerate(buildings):
        if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
            raise CatalogError(f"{where}.buildings[{k}] must be [xmin, ymin, xmax, ymax]")
    pts, cum, curves = _route_points(d["route"], where)
    base = Route(pts, cum, curves)
    conflicts = []
    for k, c in enumerate(d.get("conflicts", [])):
        try:
            (x, y), h, sb = c["point"], c["lane_heading_deg"], float(c["stop_before"])
        except (KeyError, TypeError, ValueError):
            raise CatalogError(f"{where}.conflicts[{k}]: expected point, lane_heading_deg and stop_before") from None
        if sb < 0:
            raise CatalogError(f"{where}.conflicts[{k}].stop_before must be >= 0")
        s, lat, _ = base.project(float(x), float(y))
        if abs(lat) > 0.5:
            raise CatalogError(f"{where}.conflicts[{k}]: point is {lat:.2f} m off the ego route")
        conflicts.append(Conflict(s, float(x), float(y), kernels.wrap_angle(math.radians(float(h))), s - sb))
    probes = tuple((float(p[0]), float(p[1])) for p in d.get("occlusion_probes", []))
    cz = d.get("caution_zone")
    if cz is not None:
        cz = (float(cz[0]), float(cz[1]))
        if not cz[0] < cz[1]:
            raise CatalogError(f"{where}.caution_zone must be an increasing interval")
    rz = (float(d["risk_zone"][0]), float(d["risk_zone"][1]))
    if not rz[0] < rz[1]:
        raise CatalogError(f"{where}.risk_zone must be an increasing interval")
    route = Route(pts, cum, curves, tuple(conflicts), probes, cz, rz, buildings)

    ego = _car(d["ego"], f"{where}.ego", need_lane=False)
    ado = _car(d["ado"], f"{where}.ado", need_lane=True)
    sd = d["script"]
    if not isinstance(sd, dict):
        raise CatalogError(f"{where}.script: expected an object")
    unknown = set(sd) - _SCRIPT_KEYS
    if unknown:
        raise CatalogError(f"{where}.script: unknown keys {sorted(unknown)}")
    try:
        script = AdoBehavior(**sd)
    except TypeError as e:
        raise CatalogError(f"{where}.script: {e}") from None
    lead = d.get("lead")
    spec = ScenarioSpec(
        id=sid, time_limit=tl, destination=dest, buildings=buildings, route=route,
        ego_start_s=float(ego.get("start_s", 0.0)), ego_speed=float(ego.get("speed", 0.0)),
        ado_lane=_lane(ado["lane"], f"{where}.ado"), ado_start_s=float(ado.get("start_s", 0.0)),
        ado_speed=float(ado.get("speed", 0.0)), script=script)
    if lead is not None:
        lead = _car(lead, f"{where}.lead", need_lane=True)
        spec = replace(spec, lead_lane=_lane(lead["lane"], f"{where}.lead"),
                       lead_start_s=float(lead.get("start_s", 0.0)), lead_speed=float(lead.get("speed", 0.0)))
    return spec


def parse_catalog(raw: dict) -> Catalog:
    if not isinstance(raw, dict):
        raise CatalogError("catalog: expected an object")
    if raw.get("format") != CATALOG_FORMAT:
        raise CatalogError(f"format: expected {CATALOG_FORMAT!r}, got {raw.get('format')!r}")
    unknown = set(raw) - {"format", "version", "perturbation_delta", "scenarios"}
    if unknown:
        raise CatalogError(f"catalog: unknown keys {sorted(unknown)}")
    delta = float(raw.get("perturbation_delta", 2.0))
    if delta < 0:
        raise CatalogError("perturbation_delta must be >= 0")
    scen = raw.get("scenarios")
    if not isinstance(scen, dict):
        raise CatalogError("scenarios: expected an object keyed by scenario id")
    parsed = {}
    for key, d in scen.items():
        try:
            sid = ScenarioId.parse(key)
        except ValueError as e:
            raise CatalogError(f"scenarios: {e}") from None
        parsed[sid] = _parse_scenario(sid, d)
    missing = set(ScenarioId) - set(parsed)
    if missing:
        raise CatalogError(f"scenarios: missing {sorted(s.value for s in missing)}")
    return Catalog(int(raw.get("version", 1)), delta, parsed, content_hash(raw), raw)


def default_catalog_path() -> Path:
    return Path(__file__).with_name("data") / "catalog.json"


@lru_cache(maxsize=8)
def _load_cached(path: str, mtime: float) -> Catalog:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CatalogError(f"{path}: parse error at line {e.lineno}: {e.msg}") from None
    return parse_catalog(raw)


def load_catalog(path=None) -> Catalog:
    p = Path(path) if path is not None else default_catalog_path()
    return _load_cached(str(p.resolve()), p.stat().st_mtime)


# ---------------------------------------------------------------- instances

def _vehicle_on_lane(lane: Lane, s: float, speed: float) -> VehicleState:
    x, y = lane.point(s)
    return VehicleState(x, y, lane.heading, speed)


def build_scenario(sid, setting: Setting, rng: np.random.Generator, catalog: Optional[Catalog] = None,
                   delta: Optional[float] = None) -> ScenarioInstance:
    """Nominal layout with both cars shifted along their travel directions by U(-delta, delta).

    Two uniforms are always drawn, so the RNG stream is the same for both settings.
    """
    cat = catalog if catalog is not None else load_catalog()
    spec = cat[sid]
    d = cat.perturbation_delta if delta is None else float(delta)
    u = rng.uniform(-1.0, 1.0, size=2)
    off_e, off_a = float(d * u[0]), float(d * u[1])
    ex, ey, eh = spec.route.point_at(spec.ego_start_s + off_e)
    ego = VehicleState(ex, ey, kernels.wrap_angle(eh), spec.ego_speed)
    ado = None
    if setting is Setting.DIFFICULT:
        ado = _vehicle_on_lane(spec.ado_lane, spec.ado_start_s + off_a, spec.ado_speed)
    lead = None
    if spec.lead_lane is not None:
        lead = _vehicle_on_lane(spec.lead_lane, spec.lead_start_s, spec.lead_speed)
    for v in (ego, ado, lead):
        if v is not None and any(point_in_rect(v.x, v.y, b) for b in spec.buildings):
            raise ValueError(f"{spec.id.value}: vehicle starts inside a building")
    w = WorldState(ego=ego, ado=ado, buildings=spec.buildings, tick=0, destination=spec.destination,
                   time_limit=spec.time_limit, lead=lead)
    return ScenarioInstance(spec.id, setting, w, spec.script, spec.time_limit, spec.route, spec.ado_lane,
                            spec.lead_lane, spec.lead_speed, (off_e, off_a))


# ---------------------------------------------------------------- ado scripts

def _speed_control(v: VehicleState, v_cmd: float, p: DynamicsParams) -> float:
    return (ADO_SPEED_GAIN * (v_cmd - v.speed) * p.a_max + p.friction * v.speed) / p.a_max


def _lane_keep(v: VehicleState, lane: Lane, lateral: float, p: DynamicsParams) -> float:
    s, _ = lane.project(v.x, v.y)
    tx, ty = lane.point(s + ADO_LOOKAHEAD, lateral)
    dx, dy = tx - v.x, ty - v.y
    alpha = kernels.wrap_angle(math.atan2(dy, dx) - v.heading)
    dist = math.hypot(dx, dy)
    return 2.0 * v.speed * math.sin(alpha) / (dist * p.omega_max)


def cut_in_lateral(script: AdoBehavior, trigger_tick: int, tick: int, dt: float) -> float:
    """Target lateral offset of a cut-in manoeuvre: ramp out, hold, ramp back."""
    if trigger_tick < 0:
        return 0.0
    ramp = abs(script.cut_in_offset) / script.cut_in_rate  # seconds
    t = (tick - trigger_tick) * dt
    hold = script.cut_in_hold * dt
    if t <= ramp:
        frac = t / ramp if ramp > 0 else 1.0
    elif t <= ramp + hold:
        frac = 1.0
    else:
        frac = max(0.0, 1.0 - (t - ramp - hold) / ramp) if ramp > 0 else 0.0
    return script.cut_in_offset * frac


def update_trigger(inst: ScenarioInstance, w: WorldState) -> int:
    """Tick at which the ado's one-shot manoeuvre starts, given the current truth."""
    if w.ado is None or w.ado_trigger_tick >= 0:
        return w.ado_trigger_tick
    sc = inst.ado_script
    if sc.kind == "halting":
        return w.tick if w.tick >= sc.halt_start else -1
    if sc.kind == "cut_in":
        if math.hypot(w.ego.x - w.ado.x, w.ego.y - w.ado.y) <= sc.trigger_distance:
            return w.tick
        return -1
    if sc.kind == "blocking":
        s_e, l_e = inst.ado_lane.project(w.ego.x, w.ego.y)
        s_a, _ = inst.ado_lane.project(w.ado.x, w.ado.y)
        if s_e > s_a and abs(l_e) <= sc.trigger_distance:
            return w.tick
    return -1


def ado_step(inst: ScenarioInstance, w: WorldState, p: Optional[DynamicsParams] = None) -> Action:
    """Scripted ado control for the current state (trigger tick taken from ``w``)."""
    if w.ado is None:
        return ZERO_ACTION
    p = p or DynamicsParams()
    sc = inst.ado_script
    v = w.ado
    lateral = 0.0
    v_cmd = sc.cruise_speed
    if sc.kind == "halting":
        if w.ado_trigger_tick >= 0:
            if w.tick < w.ado_trigger_tick + sc.halt_period:
                return Action(-1.0, _lane_keep(v, inst.ado_lane, 0.0, p))
            if sc.burst_speed > 0:  # drives off after the halt
                v_cmd = sc.burst_speed
    elif sc.kind == "cut_in":
        lateral = cut_in_lateral(sc, w.ado_trigger_tick, w.tick, p.dt)
    elif sc.kind == "blocking" and w.ado_trigger_tick >= 0:
        steer = _lane_keep(v, inst.ado_lane, 0.0, p)
        if v.speed < sc.burst_speed:
            thr = min((sc.block_accel + p.friction * v.speed) / p.a_max,
                      _speed_control(v, sc.burst_speed, p))
            return Action(thr, steer)
        return Action(_speed_control(v, sc.burst_speed, p), steer)
    return Action(_speed_control(v, v_cmd, p), _lane_keep(v, inst.ado_lane, lateral, p))


def lead_step(inst: ScenarioInstance, w: WorldState, p: DynamicsParams) -> Action:
    if w.lead is None or inst.lead_lane is None:
        return ZERO_ACTION
    return Action(_speed_control(w.lead, inst.lead_speed, p), _lane_keep(w.lead, inst.lead_lane, 0.0, p))


def scripted_step(inst: ScenarioInstance, w: WorldState, ego_a: Action,
                  p: DynamicsParams) -> tuple[WorldState, StepOutcome]:
    """Advance the world one tick with the scenario's scripted traffic."""
    trig = update_trigger(inst, w)
    if trig != w.ado_trigger_tick:
        w = replace(w, ado_trigger_tick=trig)
    return world_step(w, ego_a, ado_step(inst, w, p), p, lead_step(inst, w, p))


def in_risk_zone(route: Route, s: float) -> bool:
    rz = route.risk_zone
    return rz is not None and rz[0] <= s <= rz[1]
