"""Command-line entry point: ``modeswitch <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from . import pipeline as pl
from .config import ConfigError, config_hash, load_config
from .experts import parse_mode
from .nets import BranchedPolicyNet, HighLevelNet
from .scenarios import ALL_SCENARIOS, ScenarioId, Setting
from .switching import certify_counterexample, load_counterexample_mdp

log = logging.getLogger("modeswitch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _scenarios(values) -> list[ScenarioId]:
    if not values or values == ["all"]:
        return list(ALL_SCENARIOS)
    return [ScenarioId.parse(v) for v in values]


def _limits(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list, in seconds."""
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"bad --limits range {text!r}; expected start:stop:step")
        a, b, st = parts
        n = int(round((b - a) / st))
        return [a + k * st for k in range(n + 1)]
    return [float(v) for v in text.split(",") if v.strip()]


def _policies(args, cfg, kind: ev.PolicyKind, sid: ScenarioId) -> ev.PolicySet:
    low = il = None
    hl = {}
    if kind is ev.PolicyKind.IL:
        if not args.il_net:
            raise UsageError("--il-net is required for the il policy")
        il = pl.load_net(BranchedPolicyNet, args.il_net, cfg)
    else:
        if not args.low_net:
            raise UsageError(f"--low-net is required for the {kind.value} policy")
        low = pl.load_net(BranchedPolicyNet, args.low_net, cfg)
    if kind is ev.PolicyKind.HREIL:
        if not args.hl_net:
            raise UsageError("--hl-net is required for the hreil policy")
        hl[sid] = pl.load_net(HighLevelNet, args.hl_net, cfg)
    return pl.policy_set(cfg, low, il, hl)


def cmd_collect(args, cfg) -> int:
    mode = parse_mode(args.mode)
    seed = args.seed if args.seed is not None else cfg.seed_for("collect")
    episodes = args.episodes or cfg.collect.episodes_per_mode
    ds = pl.collect(cfg, mode, _scenarios(args.scenario), episodes, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.save(args.out)
    print(f"wrote {args.out}: {ds.n_episodes} episodes, {ds.K} records")
    return 0


def cmd_train_il(args, cfg) -> int:
    data = [pl.load_demos(p, cfg) for p in args.data]
    modes = sorted(d.mode for d in data)
    if not args.baseline and modes != list(range(1, len(data) + 1)):
        raise UsageError(f"branched training needs one dataset per mode 1..n, got modes {modes}")
    net, rep = pl.train_il(cfg, data, baseline=args.baseline)
    pl.save_net(net, args.out, cfg, role="il-baseline" if args.baseline else "low-level")
    report = Path(args.out).with_suffix(".report.json")
    pl.write_json(report, dict(rep.to_dict(), config_hash=config_hash(cfg)))
    print(f"wrote {args.out} (best epoch {rep.best_epoch}, validation L1 {rep.best_val_loss:.5f})")
    return 0


def cmd_train_hl(args, cfg) -> int:
    sid = ScenarioId.parse(args.scenario)
    low = pl.load_net(BranchedPolicyNet, args.low_net, cfg)
    net, curve = pl.train_hl(cfg, sid, low)
    pl.save_net(net, args.out, cfg, role="high-level")
    Path(args.out).with_suffix(".curve.csv").write_text(curve.csv())
    best = max((v for _, v in curve.eval_rows), default=float("nan"))
    print(f"wrote {args.out} (best step {curve.best_step}, validation reward {best:.3f})")
    return 0


def cmd_eval(args, cfg) -> int:
    kind, sid = ev.PolicyKind.parse(args.policy), ScenarioId.parse(args.scenario)
    ps = _policies(args, cfg, kind, sid)
    setting = Setting(args.setting) if args.setting else None
    summ, _ = ev.evaluate(kind, sid, ps, args.runs, base_seed=cfg.seed_for("eval"), setting=setting)
    doc = dict(summ.to_dict(), config_hash=config_hash(cfg))
    if args.out:
        pl.write_json(args.out, doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_frontier(args, cfg) -> int:
    kind, sid = ev.PolicyKind.parse(args.policy), ScenarioId.parse(args.scenario)
    lim = _limits(args.limits) if args.limits else list(cfg.evaluation.frontier_limits)
    ps = _policies(args, cfg, kind, sid)
    seeds = ev.eval_seeds(cfg.seed_for("eval"), sid, args.runs, "frontier")
    rates, _ = ev.completion_frontier(kind, sid, ps, lim, args.runs, seeds=seeds)
    doc = {"policy": kind.value, "scenario": sid.value, "runs": args.runs, "limits": lim,
           "completion_rate": rates, "config_hash": config_hash(cfg)}
    if args.out:
        pl.write_json(args.out, doc)
    for t, r in zip(lim, rates):
        print(f"{t:6.1f} s  {r:.3f}")
    return 0


def cmd_traces(args, cfg) -> int:
    kind, sid = ev.PolicyKind.parse(args.policy), ScenarioId.parse(args.scenario)
    ps = _policies(args, cfg, kind, sid)
    if "," in args.seeds:  # explicit episode seeds
        seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    else:
        seeds = ev.eval_seeds(cfg.seed_for("eval"), sid, int(args.seeds), "traces")
    setting = Setting(args.setting) if args.setting else None
    res = [ev.run_episode(kind, sid, s, ps, setting, record=True) for s in seeds]
    paths = ev.export_traces(res, args.out)
    print(f"wrote {len(paths) - 1} episode traces and {paths[-1]}")
    return 0


def cmd_verify_mdp(args, cfg) -> int:
    mdp = load_counterexample_mdp(args.instance) if args.instance else None
    cert = certify_counterexample(args.horizon, args.grid, mdp=mdp)
    for line in cert.lines():
        print(line)
    return 0 if cert.ok else 1


def cmd_run_all(args, cfg) -> int:
    res = pl.run_all(cfg, args.out, args.scenario or None)
    print(Path(args.out, "metrics", "summary.txt").read_text(), end="")
    t = res["timings"]
    print("timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in t.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modeswitch", description="Mode-switching driving policies: data, training, evaluation.")
    p.add_argument("--config", help="pipeline config (JSON); defaults to the shipped config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def models(sp):
        sp.add_argument("--low-net")
        sp.add_argument("--il-net")
        sp.add_argument("--hl-net")

    sp = sub.add_parser("collect", help="roll out an expert mode and save demonstrations")
    sp.add_argument("--mode", required=True)
    sp.add_argument("--scenario", nargs="+", default=["all"])
    sp.add_argument("--episodes", type=int, help="episodes per scenario")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train-il", help="clone the modes (or the single-branch baseline)")
    sp.add_argument("--data", nargs="+", required=True)
    sp.add_argument("--baseline", action="store_true", help="train the single-branch baseline on the union")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_il)

    sp = sub.add_parser("train-hl", help="train the mode-switching policy for one scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--low-net", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_hl)

    sp = sub.add_parser("eval", help="evaluate a policy and print a JSON summary")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--runs", type=int, default=100)
    sp.add_argument("--setting", choices=[s.value for s in Setting])
    sp.add_argument("--out")
    models(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("frontier", help="completion rate against time limit")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--runs", type=int, default=500)
    sp.add_argument("--limits", help="start:stop:step or a comma list, seconds")
    sp.add_argument("--out")
    models(sp)
    sp.set_defaults(func=cmd_frontier)

    sp = sub.add_parser("traces", help="export per-episode CSV traces")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seeds", default="20", help="a count N or a comma list of episode seeds")
    sp.add_argument("--setting", choices=[s.value for s in Setting])
    sp.add_argument("--out", required=True)
    models(sp)
    sp.set_defaults(func=cmd_traces)

    sp = sub.add_parser("verify-mdp", help="certify the switching counterexample MDP")
    sp.add_argument("--horizon", type=int, default=10)
    sp.add_argument("--grid", type=float, default=0.05)
    sp.add_argument("--instance", help="instance file; defaults to the shipped one")
    sp.set_defaults(func=cmd_verify_mdp)

    sp = sub.add_parser("run-all", help="collect, train and evaluate everything")
    sp.add_argument("--out", default="run")
    sp.add_argument("--scenario", nargs="+")
    sp.set_defaults(func=cmd_run_all)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"modeswitch: error: {e}", file=sys.stderr)
        return 2
    except pl.ArtifactMismatch as e:
        print(f"modeswitch: artifact mismatch: {e}", file=sys.stderr)
        return 3
    except ConfigError as e:
        print(f"modeswitch: config error: {e}", file=sys.stderr)
        return 4
    except (OSError, ValueError, KeyError) as e:
        msg = e.strerror if isinstance(e, OSError) and e.strerror else str(e)
        where = f" ({e.filename})" if isinstance(e, OSError) and e.filename else ""
        print(f"modeswitch: error: {msg}{where}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
