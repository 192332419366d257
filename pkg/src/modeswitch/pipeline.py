"""End-to-end pipeline stages: collect, clone, train the switcher, evaluate.

Every artifact records the hash of the config that produced it. Loading an
artifact under a different config raises ``ArtifactMismatch``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import evaluation as ev
from .config import Config, config_hash, serialize
from .experts import AGGRESSIVE, MODE_NAMES, TIMID, DemoDataset, collect_demonstrations
from .hrl import train_high_level
from .il import train_il_baseline, train_low_level
from .nets import BranchedPolicyNet, HighLevelNet
from .scenarios import ScenarioId, Setting

log = logging.getLogger(__name__)

LOCALIZATION_SCENARIOS = (ScenarioId.HALTING_CAR, ScenarioId.WRONG_DIRECTION)


class ArtifactMismatch(ValueError):
    pass


def check_hash(meta: dict, expected: str, what) -> None:
    got = meta.get("config_hash")
    if got != expected:
        raise ArtifactMismatch(f"{what}: produced under config {got}, current config is {expected}")


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Layout:
    root: Path

    def demos(self, mode: int) -> Path:
        return self.root / "data" / f"demos_{MODE_NAMES[mode]}.bin"

    @property
    def low_net(self) -> Path:
        return self.root / "models" / "low_level.bin"

    @property
    def il_net(self) -> Path:
        return self.root / "models" / "il_baseline.bin"

    def hl_net(self, sid: ScenarioId) -> Path:
        return self.root / "models" / f"high_level_{sid.value}.bin"

    def report(self, name: str) -> Path:
        return self.root / "reports" / name

    def metrics(self, name: str) -> Path:
        return self.root / "metrics" / name

    def traces(self, sid: ScenarioId) -> Path:
        return self.root / "traces" / sid.value


# ---------------------------------------------------------------- stages

def collect(cfg: Config, mode: int, scenarios: Sequence[ScenarioId], episodes: int, seed: int,
            catalog=None) -> DemoDataset:
    return collect_demonstrations(mode, scenarios, episodes, seed, modes=cfg.modes, p=cfg.dynamics,
                                  m=cfg.observation, catalog=catalog or cfg.load_catalog(),
                                  extra_meta={"config_hash": config_hash(cfg)})


def load_demos(path, cfg: Config) -> DemoDataset:
    ds = DemoDataset.load(path)
    check_hash(ds.meta, config_hash(cfg), path)
    return ds


def train_il(cfg: Config, datasets: Sequence[DemoDataset], baseline: bool, catalog=None):
    cat = catalog or cfg.load_catalog()
    by_mode = sorted(datasets, key=lambda d: d.mode)
    if baseline:
        return train_il_baseline(by_mode, cat, cfg.il_config("il/baseline"))
    return train_low_level(by_mode, cat, cfg.il_config("il/low"))


def save_net(net, path, cfg: Config, **meta) -> None:
    m = dict(getattr(net, "meta", {}) or {})
    m.update(meta)
    m["config_hash"] = config_hash(cfg)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    net.save(path, m)


def load_net(cls, path, cfg: Config):
    net = cls.load(path)
    check_hash(net.meta, config_hash(cfg), path)
    return net


def train_hl(cfg: Config, sid: ScenarioId, low: BranchedPolicyNet, catalog=None):
    return train_high_level(sid, low.forward_low, cfg.ppo, seed=cfg.seed_for("hl"), t_s=cfg.t_s,
                            rewards=cfg.rewards, catalog=catalog or cfg.load_catalog(), dynamics=cfg.dynamics,
                            observation=cfg.observation, n_modes=low.n_branches)


def policy_set(cfg: Config, low=None, il=None, hl=None, catalog=None) -> ev.PolicySet:
    return ev.PolicySet(low_net=low, il_net=il, hl_nets=dict(hl or {}), t_s=cfg.t_s, rewards=cfg.rewards,
                        dynamics=cfg.dynamics, observation=cfg.observation,
                        catalog=catalog or cfg.load_catalog())


def load_policy_set(cfg: Config, layout: Layout, scenarios: Sequence[ScenarioId]) -> ev.PolicySet:
    low = load_net(BranchedPolicyNet, layout.low_net, cfg)
    il = load_net(BranchedPolicyNet, layout.il_net, cfg)
    hl = {sid: load_net(HighLevelNet, layout.hl_net(sid), cfg) for sid in scenarios}
    return policy_set(cfg, low, il, hl)


def mode_separation(cfg: Config, ps: ev.PolicySet, scenarios: Sequence[ScenarioId]) -> dict:
    """Cloned fixed modes on Difficult settings, common seeds."""
    out = {}
    base = cfg.seed_for("eval")
    for sid in scenarios:
        seeds = ev.eval_seeds(base, sid, cfg.evaluation.separation_runs, "separation")
        row = {}
        for kind in (ev.PolicyKind.AGGRESSIVE, ev.PolicyKind.TIMID):
            s, _ = ev.evaluate(kind, sid, ps, len(seeds), seeds=seeds, setting=Setting.DIFFICULT)
            row[kind.value] = s.to_dict()
        out[sid.value] = row
    return out


def compare_policies(cfg: Config, ps: ev.PolicySet, scenarios: Sequence[ScenarioId]) -> tuple[list, dict]:
    summaries, checks = [], {}
    base = cfg.seed_for("eval")
    for sid in scenarios:
        seeds = ev.eval_seeds(base, sid, cfg.evaluation.runs, "test")
        per = {}
        for kind in ev.PolicyKind:
            s, _ = ev.evaluate(kind, sid, ps, len(seeds), seeds=seeds)
            per[kind.value] = s
            summaries.append(s)
        dom = ev.dominance_check(per)
        dom["switching_vs_fixed"] = ev.switching_vs_fixed(per["hreil"], [per["aggressive"], per["timid"]])
        checks[sid.value] = dom
    return summaries, checks


def frontier(cfg: Config, ps: ev.PolicySet, kinds=tuple(ev.PolicyKind)) -> dict:
    sid = ScenarioId.parse(cfg.evaluation.frontier_scenario)
    seeds = ev.eval_seeds(cfg.seed_for("eval"), sid, cfg.evaluation.frontier_runs, "frontier")
    lim = list(cfg.evaluation.frontier_limits)
    curves = {}
    for kind in kinds:
        rates, _ = ev.completion_frontier(kind, sid, ps, lim, len(seeds), seeds=seeds)
        curves[ev.PolicyKind.parse(kind).value] = rates
    return {"scenario": sid.value, "runs": len(seeds), "limits": lim, "completion_rate": curves}


def localization(cfg: Config, ps: ev.PolicySet, layout: Optional[Layout],
                 scenarios: Sequence[ScenarioId] = LOCALIZATION_SCENARIOS) -> dict:
    """H-ReIL on Difficult episodes: timid frequency inside and outside the risk zone."""
    out = {}
    cat = ps.catalog
    for sid in scenarios:
        if sid not in ps.hl_nets:
            continue
        seeds = ev.eval_seeds(cfg.seed_for("eval"), sid, cfg.evaluation.trace_runs, "traces")
        _, res = ev.evaluate(ev.PolicyKind.HREIL, sid, ps, len(seeds), seeds=seeds, setting=Setting.DIFFICULT,
                             record=True)
        inside, outside = ev.zone_mode_frequency(res, cat[sid].route)
        out[sid.value] = {"risk_zone": list(cat[sid].route.risk_zone), "timid_inside": inside,
                          "timid_outside": outside, "difference": inside - outside, "episodes": len(res)}
        if layout is not None:
            ev.export_traces(res, layout.traces(sid))
    return out


def run_all(cfg: Config, out_dir, scenarios: Optional[Sequence] = None) -> dict:
    """Collect, clone, train the switchers, then every evaluation; returns the metrics documents."""
    layout = Layout(Path(out_dir))
    layout.root.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    cat = cfg.load_catalog()
    sids = [ScenarioId.parse(s) for s in (scenarios or cfg.collect.scenarios)]
    (layout.root / "config.json").write_text(serialize(cfg))
    timings = {}
    t0 = time.perf_counter()

    seed = cfg.seed_for("collect")
    data = []
    for mode in (AGGRESSIVE, TIMID):
        ds = collect(cfg, mode, sids, cfg.collect.episodes_per_mode, seed, cat)
        ds.save(layout.demos(mode))
        data.append(ds)
        log.info("collected %s: %d records", MODE_NAMES[mode], ds.K)
    timings["collect"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    low, rep_low = train_il(cfg, data, baseline=False, catalog=cat)
    save_net(low, layout.low_net, cfg, role="low-level")
    write_json(layout.report("il_low_level.json"), dict(rep_low.to_dict(), config_hash=h))
    timings["train_il/low"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    il, rep_il = train_il(cfg, data, baseline=True, catalog=cat)
    save_net(il, layout.il_net, cfg, role="il-baseline")
    write_json(layout.report("il_baseline.json"), dict(rep_il.to_dict(), config_hash=h))
    timings["train_il/baseline"] = time.perf_counter() - t0
    del data

    ps = policy_set(cfg, low, il, catalog=cat)
    t0 = time.perf_counter()
    sep = mode_separation(cfg, ps, sids)
    timings["separation_eval"] = time.perf_counter() - t0
    write_json(layout.metrics("mode_separation.json"), {"config_hash": h, "scenarios": sep})

    for sid in sids:
        t1 = time.perf_counter()
        hl, curve = train_hl(cfg, sid, low, cat)
        save_net(hl, layout.hl_net(sid), cfg, role="high-level")
        layout.report(f"ppo_{sid.value}.csv").write_text(curve.csv())
        write_json(layout.report(f"ppo_{sid.value}_validation.json"),
                   {"config_hash": h, "best_step": curve.best_step, "validation": curve.eval_rows})
        ps.hl_nets[sid] = hl
        timings[f"train_hl/{sid.value}"] = time.perf_counter() - t1

    t0 = time.perf_counter()
    summaries, checks = compare_policies(cfg, ps, sids)
    ev.write_summary_json(summaries, layout.metrics("summary.json"), {"config_hash": h, "checks": checks})
    layout.metrics("summary.txt").write_text(ev.summary_table(summaries) + "\n")
    timings["evaluate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fr = {}
    if ScenarioId.parse(cfg.evaluation.frontier_scenario) in sids:
        fr = frontier(cfg, ps)
        write_json(layout.metrics("frontier.json"), dict(fr, config_hash=h))
    timings["frontier"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    loc = localization(cfg, ps, layout, [s for s in LOCALIZATION_SCENARIOS if s in sids])
    write_json(layout.metrics("localization.json"), {"config_hash": h, "scenarios": loc})
    timings["localization"] = time.perf_counter() - t0
    # wall-clock numbers vary between runs, so they stay out of the metrics directory
    write_json(layout.root / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    return {"separation": sep, "summaries": [s.to_dict() for s in summaries], "checks": checks, "frontier": fr,
            "localization": loc, "timings": timings, "config_hash": h}


__all__ = ["ArtifactMismatch", "Layout", "check_hash", "collect", "load_demos", "train_il", "save_net", "load_net",
           "train_hl", "policy_set", "load_policy_set", "mode_separation", "compare_policies", "frontier",
           "localization", "run_all"]
