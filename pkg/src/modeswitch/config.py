"""Global pipeline configuration.

The config file is JSON. Every section is optional; missing keys take the
defaults below, unknown keys are rejected. ``serialize`` writes the canonical
form (all keys, sorted, two-space indent), and ``config_hash`` is the hash of
that form, embedded in every artifact the pipeline writes.

Seed fan-out: each component draws its seed as
``sub_seed(config.seed, <component name>)`` with the names listed in
``COMPONENTS``; components derive further per-scenario/per-episode streams
from that seed by name.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .experts import AGGRESSIVE, DEFAULT_MODES, MODE_NAMES, TIMID, ModeParams
from .hrl import PpoConfig, RewardParams
from .il import ILConfig
from .scenarios import ALL_SCENARIOS, ScenarioId, load_catalog
from .seeding import canonical_json, content_hash, sub_seed
from .sim import DynamicsParams, ObservationModel

CONFIG_FORMAT = "modeswitch.config/1"
COMPONENTS = ("collect", "il/low", "il/baseline", "hl", "eval")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CollectConfig:
    episodes_per_mode: int = 2000  # per scenario
    scenarios: tuple = tuple(s.value for s in ALL_SCENARIOS)

    def __post_init__(self):
        if self.episodes_per_mode < 1:
            raise ValueError("episodes_per_mode must be >= 1")
        if not self.scenarios:
            raise ValueError("scenarios must not be empty")
        object.__setattr__(self, "scenarios", tuple(ScenarioId.parse(s).value for s in self.scenarios))


@dataclass(frozen=True)
class EvalConfig:
    runs: int = 100
    separation_runs: int = 200
    frontier_runs: int = 500
    frontier_scenario: str = "cross-traffic"
    frontier_limits: tuple = tuple(float(t) for t in range(1, 31))
    trace_runs: int = 100

    def __post_init__(self):
        for name in ("runs", "separation_runs", "frontier_runs", "trace_runs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        object.__setattr__(self, "frontier_scenario", ScenarioId.parse(self.frontier_scenario).value)
        lim = tuple(float(v) for v in self.frontier_limits)
        if not lim or any(b <= a for a, b in zip(lim, lim[1:])) or lim[0] <= 0:
            raise ValueError("frontier_limits must be positive and strictly increasing")
        object.__setattr__(self, "frontier_limits", lim)


@dataclass(frozen=True)
class Config:
    seed: int = 0
    t_s: int = 5
    catalog: Optional[str] = None
    dynamics: DynamicsParams = DynamicsParams()
    observation: ObservationModel = ObservationModel()
    modes: dict = field(default_factory=lambda: dict(DEFAULT_MODES))
    rewards: RewardParams = RewardParams()
    collect: CollectConfig = CollectConfig()
    il: ILConfig = ILConfig()
    ppo: PpoConfig = PpoConfig()
    evaluation: EvalConfig = EvalConfig()
    source_dir: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if not isinstance(self.t_s, int) or self.t_s < 1:
            raise ConfigError(f"t_s: must satisfy t_s >= 1, got {self.t_s!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")

    def catalog_path(self) -> Optional[Path]:
        if self.catalog is None:
            return None
        p = Path(self.catalog)
        return p if p.is_absolute() or self.source_dir is None else self.source_dir / p

    def load_catalog(self):
        return load_catalog(self.catalog_path())

    def seed_for(self, component: str) -> int:
        if component not in COMPONENTS:
            raise KeyError(f"unknown component {component!r}; expected one of {COMPONENTS}")
        return sub_seed(self.seed, component)

    def to_dict(self) -> dict:
        def sect(obj):
            d = dataclasses.asdict(obj)
            return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        il = sect(self.il)
        il.pop("seed")  # fanned out from the global seed
        return {
            "format": CONFIG_FORMAT, "seed": self.seed, "t_s": self.t_s, "catalog": self.catalog,
            "dynamics": sect(self.dynamics), "observation": sect(self.observation),
            "modes": {MODE_NAMES[k]: v.to_dict() for k, v in sorted(self.modes.items())},
            "rewards": sect(self.rewards), "collect": sect(self.collect), "il": il, "ppo": sect(self.ppo),
            "evaluation": sect(self.evaluation),
        }

    def il_config(self, component: str) -> ILConfig:
        return dataclasses.replace(self.il, seed=self.seed_for(component))


def serialize(cfg: Config) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def config_hash(cfg: Config) -> str:
    return content_hash(canonical_json(cfg.to_dict()))


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _build(cls, raw, where: str, skip=()):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)} - set(skip)
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def from_dict(raw: dict, source_dir: Optional[Path] = None) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at top level")
    fmt = raw.get("format", CONFIG_FORMAT)
    if fmt != CONFIG_FORMAT:
        raise ConfigError(f"format: expected {CONFIG_FORMAT!r}, got {fmt!r}")
    top = {"format", "seed", "t_s", "catalog", "dynamics", "observation", "modes", "rewards", "collect", "il",
           "ppo", "evaluation"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    kw = {}
    for key in ("seed", "t_s"):
        if key in raw:
            if isinstance(raw[key], bool) or not isinstance(raw[key], int):
                raise ConfigError(f"{key}: expected an integer, got {raw[key]!r}")
            kw[key] = raw[key]
    if "catalog" in raw:
        if raw["catalog"] is not None and not isinstance(raw["catalog"], str):
            raise ConfigError("catalog: expected a path string or null")
        kw["catalog"] = raw["catalog"]
    sections = {"dynamics": DynamicsParams, "observation": ObservationModel, "rewards": RewardParams,
                "collect": CollectConfig, "ppo": PpoConfig, "evaluation": EvalConfig}
    for key, cls in sections.items():
        if key in raw:
            kw[key] = _build(cls, raw[key], key)
    if "il" in raw:
        kw["il"] = _build(ILConfig, raw["il"], "il", skip=("seed",))
    if "modes" in raw:
        m = raw["modes"]
        if not isinstance(m, dict):
            raise ConfigError("modes: expected an object")
        unknown = sorted(set(m) - set(MODE_NAMES.values()))
        if unknown:
            raise ConfigError(f"modes: unknown modes {unknown}")
        modes = dict(DEFAULT_MODES)
        for mid, name in MODE_NAMES.items():
            if name in m:
                base = DEFAULT_MODES[mid].to_dict()
                if not isinstance(m[name], dict):
                    raise ConfigError(f"modes.{name}: expected an object")
                base.update(m[name])
                try:
                    modes[mid] = ModeParams.from_dict(base)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"modes.{name}: {e}") from None
        kw["modes"] = modes
    try:
        cfg = Config(source_dir=source_dir, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    _check_cross(cfg)
    return cfg


def _check_cross(cfg: Config) -> None:
    if set(cfg.modes) != {AGGRESSIVE, TIMID}:
        raise ConfigError("modes: both aggressive and timid must be defined")
    try:
        cat = cfg.load_catalog()
    except (OSError, ValueError) as e:
        raise ConfigError(f"catalog: {e}") from None
    horizon = max(cat[s].time_limit for s in ALL_SCENARIOS)
    try:
        cfg.rewards.check_dominance(horizon)
    except ValueError as e:
        raise ConfigError(f"rewards: {e}") from None


def parse_config(text: str, source_dir: Optional[Path] = None) -> Config:
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    return from_dict(raw, source_dir)


def load_config(path=None) -> Config:
    p = Path(path) if path is not None else default_config_path()
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    try:
        return parse_config(text, p.parent)
    except ConfigError as e:
        raise ConfigError(f"{p}: {e}") from None


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "default_config.json"
