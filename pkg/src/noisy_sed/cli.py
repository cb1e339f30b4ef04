"""Command-line entry point: ``noisy-sed <command> --config run.yaml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import Optional, Sequence

from . import pipeline
from .config import ConfigError, RunConfig, desk_config, dump_config, load_config
from .datagen import ManifestError
from .evaluation.ensemble import STRATEGIES
from .tensor_core.checkpoint import CheckpointError
from .tensor_core.memory import tune_allocator
from .training import TrainingDiverged

log = logging.getLogger("noisy_sed")


def _config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig(base_dir=".")
    elif args.config == "desk":
        cfg = desk_config(".")
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config, or 'desk' for the built-in small preset")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="noisy-sed", description="Semi-supervised sound event detection pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("config", parents=[common], help="print the resolved config")
    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("extract", parents=[common], help="compute and cache log-mel features")

    t = sub.add_parser("train", parents=[common], help="train one stage")
    t.add_argument("--stage", choices=("mt", "ns"), required=True)
    t.add_argument("--fold", type=int, help="fold index (default: all folds)")
    t.add_argument("--beta", type=float, help="label interpolation beta (default: the configured grid)")
    t.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    pl = sub.add_parser("pseudolabel", parents=[common], help="pseudo-label weak and unlabeled clips")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--out")

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint or ensemble spec")
    e.add_argument("target", help="checkpoint file or ensemble spec (.json)")
    e.add_argument("--subset", default="validation", choices=("validation", "strong"))
    e.add_argument("--name", help="report file stem")

    r = sub.add_parser("run", parents=[common], help="gen, extract, both stages and eval on one fold")
    r.add_argument("--fold", type=int, default=0)
    r.add_argument("--beta", type=float)

    en = sub.add_parser("ensemble", parents=[common], help="select ensemble members")
    en.add_argument("--strategy", required=True, choices=sorted(STRATEGIES))
    en.add_argument("--out")
    return p


def run(args) -> object:
    cfg = _config(args)
    cmd = args.command
    if cmd == "config":
        sys.stdout.write(dump_config(cfg))
        return None
    if cmd == "gen":
        ds = pipeline.cmd_gen(cfg)
        print(f"wrote {len(ds.rows)} clips to {ds.root}")
    elif cmd == "extract":
        s = pipeline.cmd_extract(cfg)
        print(f"extracted {s.extracted}, cached {s.cached}; norm mean={s.norm_stats.mean:.4f} "
              f"std={s.norm_stats.std:.4f}")
    elif cmd == "train":
        for r in pipeline.cmd_train(cfg, args.stage, args.fold, args.beta, args.jobs):
            r = {k: v for k, v in r.items() if k != "history"}
            print(json.dumps(r, sort_keys=True))
    elif cmd == "pseudolabel":
        print(pipeline.cmd_pseudolabel(cfg, args.checkpoint, args.out))
    elif cmd == "eval":
        report = pipeline.cmd_eval(cfg, args.target, args.subset, args.name)
        print(json.dumps(asdict(report), sort_keys=True))
    elif cmd == "run":
        summary = pipeline.run_pipeline(cfg, args.fold, args.beta)
        print(json.dumps({k: summary[k] for k in ("mt_loss_first", "mt_loss_min", "mt_report", "ns_report")},
                         sort_keys=True))
    elif cmd == "ensemble":
        print(pipeline.cmd_ensemble(cfg, args.strategy, args.out))
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    tune_allocator()
    try:
        run(args)
    except (ConfigError, ManifestError, CheckpointError, pipeline.PipelineError, FileNotFoundError) as exc:
        print(f"noisy-sed: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"noisy-sed: training diverged: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
