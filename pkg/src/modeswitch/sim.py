"""Deterministic 2D driving world: point-mass vehicles, collisions, occlusion, noisy observations."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import kernels

Rect = tuple[float, float, float, float]  # (xmin, ymin, xmax, ymax)


class ContractViolation(RuntimeError):
    """A simulator precondition was broken by the caller."""


@dataclass(frozen=True, slots=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading, self.speed)):
            raise ValueError(f"non-finite vehicle state {self}")
        if self.speed < 0.0:
            raise ValueError(f"negative speed {self.speed}")
        if not -math.pi <= self.heading < math.pi:
            raise ValueError(f"heading {self.heading} outside [-pi, pi)")


@dataclass(frozen=True, slots=True)
class Action:
    throttle: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "throttle", min(max(float(self.throttle), -1.0), 1.0))
        object.__setattr__(self, "steer", min(max(float(self.steer), -1.0), 1.0))


ZERO_ACTION = Action(0.0, 0.0)


@dataclass(frozen=True)
class DynamicsParams:
    a_max: float = 8.0
    omega_max: float = 1.2
    v_max: float = 15.0
    friction: float = 0.05
    dt: float = 0.1
    vehicle_half_length: float = 2.2
    vehicle_half_width: float = 0.9

    def __post_init__(self):
        for name in ("a_max", "omega_max", "v_max", "friction", "dt",
                     "vehicle_half_length", "vehicle_half_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"dynamics.{name} must be > 0")
        if self.dt > 0.1 + 1e-12:
            raise ValueError("dynamics.dt must be <= 0.1 s")


@dataclass(frozen=True)
class ObservationModel:
    noise_std_pos: float = 0.2
    noise_std_speed: float = 0.2
    noise_std_heading: float = 0.02

    def __post_init__(self):
        for name in ("noise_std_pos", "noise_std_speed", "noise_std_heading"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"observation.{name} must be >= 0")


class StepOutcome(enum.Enum):
    RUNNING = "running"
    COLLISION = "collision"
    REACHED = "reached_destination"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class WorldState:
    """Full simulator state.

    ``lead`` is the scripted car in front of the merge gap (Merge only).
    ``ado_trigger_tick`` records when a one-shot ado manoeuvre started (-1: not yet).
    """

    ego: VehicleState
    ado: Optional[VehicleState]
    buildings: tuple[Rect, ...]
    tick: int
    destination: tuple[float, float, float]
    time_limit: int
    lead: Optional[VehicleState] = None
    status: StepOutcome = StepOutcome.RUNNING
    ado_trigger_tick: int = -1

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be >= 0")
        if not self.destination[2] > 0:
            raise ValueError("destination radius must be > 0")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")

    @property
    def terminated(self) -> bool:
        return self.status is not StepOutcome.RUNNING


OBS_FIELDS = (
    "ego_x", "ego_y", "ego_heading", "ego_speed",
    "ado_visible", "ado_x", "ado_y", "ado_speed", "ado_heading",
    "lead_visible", "lead_x", "lead_y", "lead_speed", "lead_heading",
)


@dataclass(frozen=True, slots=True)
class Observation:
    ego_x: float
    ego_y: float
    ego_heading: float
    ego_speed: float
    ado_visible: bool = False
    ado_x: float = 0.0
    ado_y: float = 0.0
    ado_speed: float = 0.0
    ado_heading: float = 0.0
    lead_visible: bool = False
    lead_x: float = 0.0
    lead_y: float = 0.0
    lead_speed: float = 0.0
    lead_heading: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f)) for f in OBS_FIELDS])

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "Observation":
        vals = dict(zip(OBS_FIELDS, (float(v) for v in row)))
        vals["ado_visible"] = bool(vals["ado_visible"])
        vals["lead_visible"] = bool(vals["lead_visible"])
        return cls(**vals)

    def quantized(self) -> "Observation":
        """Round every field to float32, the on-disk precision of demonstrations."""
        return Observation.from_array(self.to_array().astype(np.float32).astype(np.float64))


@lru_cache(maxsize=64)
def _rect_array(buildings: tuple[Rect, ...]) -> np.ndarray:
    arr = np.array(buildings, dtype=np.float64).reshape(-1, 4)
    arr.setflags(write=False)
    return arr


def vehicle_step(v: VehicleState, a: Action, p: DynamicsParams) -> VehicleState:
    x, y, h, s = kernels.vehicle_step(v.x, v.y, v.heading, v.speed, a.throttle, a.steer,
                                      p.a_max, p.omega_max, p.v_max, p.friction, p.dt)
    return VehicleState(x, y, h, s)


def vehicles_overlap(a: VehicleState, b: VehicleState, p: DynamicsParams) -> bool:
    return bool(kernels.obb_overlap(a.x, a.y, a.heading, b.x, b.y, b.heading,
                                    p.vehicle_half_length, p.vehicle_half_width))


def check_collision(w: WorldState, p: DynamicsParams) -> bool:
    """Ego footprint overlaps the ado's (or the merge lead car's)."""
    if w.ado is not None and vehicles_overlap(w.ego, w.ado, p):
        return True
    if w.lead is not None and vehicles_overlap(w.ego, w.lead, p):
        return True
    return False


def is_occluded(ego: tuple[float, float], other: tuple[float, float], buildings) -> bool:
    if isinstance(buildings, np.ndarray):
        rects = buildings
    else:
        if len(buildings) == 0:
            return False
        rects = _rect_array(tuple(tuple(map(float, b)) for b in buildings))
    if rects.shape[0] == 0:
        return False
    return bool(kernels.segment_hits_rects(ego[0], ego[1], other[0], other[1], rects))


def point_in_rect(x: float, y: float, r: Rect) -> bool:
    return r[0] <= x <= r[2] and r[1] <= y <= r[3]


def observe(w: WorldState, m: ObservationModel, rng: np.random.Generator) -> Observation:
    """Ego state exactly; other cars noisy when in line of sight, zeroed otherwise.

    Eight normal draws are consumed every call whatever the visibility, so the
    RNG stream does not depend on occlusion.
    """
    noise = rng.standard_normal(8)
    e = w.ego
    fields = {}
    rects = _rect_array(w.buildings) if w.buildings else None
    for name, other, k in (("ado", w.ado, 0), ("lead", w.lead, 4)):
        if other is None:
            continue
        if rects is not None and kernels.segment_hits_rects(e.x, e.y, other.x, other.y, rects):
            continue
        fields[f"{name}_visible"] = True
        fields[f"{name}_x"] = other.x + m.noise_std_pos * noise[k]
        fields[f"{name}_y"] = other.y + m.noise_std_pos * noise[k + 1]
        fields[f"{name}_speed"] = other.speed + m.noise_std_speed * noise[k + 2]
        fields[f"{name}_heading"] = kernels.wrap_angle(other.heading + m.noise_std_heading * noise[k + 3])
    return Observation(e.x, e.y, e.heading, e.speed, **fields)


def world_step(w: WorldState, ego_a: Action, ado_a: Action, p: DynamicsParams,
               lead_a: Action = ZERO_ACTION) -> tuple[WorldState, StepOutcome]:
    if w.terminated:
        raise ContractViolation(f"world_step called on a terminated episode ({w.status.value})")
    ego = vehicle_step(w.ego, ego_a, p)
    ado = vehicle_step(w.ado, ado_a, p) if w.ado is not None else None
    lead = vehicle_step(w.lead, lead_a, p) if w.lead is not None else None
    tick = w.tick + 1
    nxt = replace(w, ego=ego, ado=ado, lead=lead, tick=tick)
    dx = ego.x - w.destination[0]
    dy = ego.y - w.destination[1]
    if check_collision(nxt, p):
        outcome = StepOutcome.COLLISION
    elif dx * dx + dy * dy <= w.destination[2] * w.destination[2]:
        outcome = StepOutcome.REACHED
    elif tick >= w.time_limit:
        outcome = StepOutcome.TIMEOUT
    else:
        outcome = StepOutcome.RUNNING
    if outcome is not StepOutcome.RUNNING:
        nxt = replace(nxt, status=outcome)
    return nxt, outcome
