"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from actoreg.config import load_config
from actoreg.core.errors import ConfigError, FormatError, NumericError
from actoreg.data.dataset import generate_dataset, load_dataset, save_dataset, split
from actoreg.data.envs import make_env
from actoreg.diagnostics import diagnostics_ratio_report
from actoreg.evalstats import ROBUSTNESS_SIGMA, robustness_eval
from actoreg.experiment import ReportError, SweepError, report, run_experiment, sweep
from actoreg.networks import load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ROOT_ENV = "ACTOREG_OUT_ROOT"


def _seeds(text: str) -> list[int]:
    """Parse ``"0,1,2"`` or ``"0-4"`` into a seed list."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def output_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / default_name


def _policy_from_checkpoint(path):
    nets, meta = load_checkpoint(path)
    actor = nets["actor"]

    def policy(states):
        out = actor.forward(states, mode="eval", frozen=True)
        return (out[0] if isinstance(out, tuple) else out).data

    return actor, policy, meta


# ----------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    d = cfg.data
    seed = args.seed if args.seed is not None else d.seed
    dataset = generate_dataset(make_env(d.env), d.tier, d.size, seed)
    path = Path(args.out) if args.out else Path(d.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, path)
    print(json.dumps({"path": str(path), "transitions": len(dataset), **dataset.metadata}))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = args.seeds or ([args.seed] if args.seed is not None else None)
    out = output_dir(args, cfg.run_name)
    summaries = run_experiment(cfg, out, seeds)
    for s in summaries:
        print(json.dumps(s, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section", "sweep")
    result = sweep(cfg, output_dir(args, cfg.run_name + "-sweep"), jobs=args.jobs)
    print(json.dumps({"winner": result.winner, "tuning_mean_rar": result.tuning_mean_rar,
                      "eval_mean_rar": result.eval_mean_rar}))
    return EXIT_OK


def cmd_report(args) -> int:
    metrics = report(args.run_dirs, output_dir(args, "report"))
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    actor, _, meta = _policy_from_checkpoint(args.checkpoint)
    dataset = load_dataset(cfg.data.path)
    parts = split(dataset, cfg.run.validation_fraction, cfg.run.split_seed)
    rep = diagnostics_ratio_report(actor, dataset, parts, step=meta.get("step", 0),
                                   plasticity_steps=cfg.train.plasticity_steps,
                                   lr=cfg.algo_config.learning_rate, seed=args.seed or 0)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_robustness(args) -> int:
    cfg = load_config(args.config)
    _, policy, _ = _policy_from_checkpoint(args.checkpoint)
    env = make_env(cfg.data.env)
    modes = [args.mode] if args.mode else list(ROBUSTNESS_SIGMA)
    for mode in modes:
        res = robustness_eval(policy, env, mode, sigma=args.sigma, episodes=args.episodes, seed=args.seed or 0)
        print(json.dumps(asdict(res), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="actoreg", description="Offline actor-critic regularization experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML config file")
        sp.add_argument("--out", help="output path (default: $ACTOREG_OUT_ROOT or ./runs)")
        sp.add_argument("--seed", type=int, help="single seed override")
        return sp

    sp = common(sub.add_parser("gen-data", help="generate and save a synthetic dataset"))
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("run", help="train one config over its seeds"))
    sp.add_argument("--seeds", type=_seeds, help="seed list, e.g. 0,1,2 or 0-4")
    sp.set_defaults(func=cmd_run)

    sp = common(sub.add_parser("sweep", help="grid sweep with disjoint tuning/evaluation seeds"))
    sp.add_argument("--jobs", type=int, default=1, help="concurrent child runs")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate completed run directories")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", help="report directory")
    sp.set_defaults(func=cmd_report)

    sp = common(sub.add_parser("diagnose", help="actor diagnostics for a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_diagnose)

    sp = common(sub.add_parser("robustness", help="noisy-vs-clean evaluation of a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=sorted(ROBUSTNESS_SIGMA))
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(func=cmd_robustness)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SweepError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError, ReportError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
