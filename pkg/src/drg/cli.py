"""Command-line interface.

Subcommands: train, eval, embed, ablate. Exit codes: 0 success, 1 usage or
configuration problems, 2 numeric failure (NaN/Inf during training).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import RunConfig, apply_override, load_config
from .envs import DISTRACTOR_MODES, DistractorSetting
from .errors import (CheckpointLoadError, ConfigurationError, InsufficientDataError,
                     NumericError, UsageError)
from . import harness


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model per the config")
    p_train.add_argument("--config", type=Path, default=None,
                         help="key=value config file (defaults apply when omitted)")
    p_train.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                         help="override any config field (repeatable)")
    p_train.add_argument("--out", type=Path, default=None,
                         help="run directory (default: $DRG_DATA_DIR/run_<time>)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", type=Path, required=True)
    p_eval.add_argument("--distractor", choices=DISTRACTOR_MODES, default="clean")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--distractor-seed", type=int, default=77_000)
    p_eval.add_argument("--config", type=Path, default=None,
                        help="config override (default: checkpoint sidecar)")
    p_eval.add_argument("--out", type=Path, default=None, help="write the summary JSON here")

    p_embed = sub.add_parser("embed", help="export encoder embeddings as CSV")
    p_embed.add_argument("--ckpt", type=Path, required=True)
    p_embed.add_argument("--out", type=Path, required=True)
    p_embed.add_argument("--situations", type=int, default=15)
    p_embed.add_argument("--backgrounds", type=int, default=20)
    p_embed.add_argument("--background-mode", choices=DISTRACTOR_MODES, default="drift_blobs")
    p_embed.add_argument("--config", type=Path, default=None)

    p_ablate = sub.add_parser("ablate", help="run an ablation sweep")
    p_ablate.add_argument("--config", type=Path, default=None)
    p_ablate.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_ablate.add_argument("--sweep", choices=sorted(harness.SWEEPS), required=True)
    p_ablate.add_argument("--seeds", type=int, default=3)
    p_ablate.add_argument("--eval-episodes", type=int, default=None)
    p_ablate.add_argument("--jobs", type=int, default=1)
    p_ablate.add_argument("--out", type=Path, default=None)
    return parser


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for item in getattr(args, "override", []):
        if "=" not in item:
            raise UsageError(f"--override expects KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        apply_override(cfg, key, value)
    return cfg.validate()


def _default_out(kind: str) -> Path:
    stamp = time.strftime("%Y%m%d_%H%M%S")
    return harness.default_data_dir() / f"{kind}_{stamp}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1

    try:
        if args.command == "train":
            cfg = _load_cfg(args)
            out = args.out if args.out else _default_out("run")
            result = harness.train(cfg, out)
            print(json.dumps({"out_dir": str(result.out_dir),
                              "checkpoint": str(result.checkpoint_path),
                              "env_steps": result.env_steps}))
            return 0
        if args.command == "eval":
            cfg = load_config(args.config) if args.config else None
            setting = DistractorSetting(mode=args.distractor, seed=args.distractor_seed,
                                        held_out=args.distractor != "clean")
            summary = harness.evaluate(args.ckpt, setting, args.episodes, cfg=cfg)
            text = json.dumps(summary.to_json(), indent=2)
            print(text)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            return 0
        if args.command == "embed":
            cfg = load_config(args.config) if args.config else None
            path = harness.export_embeddings(
                args.ckpt, args.out, situations=args.situations,
                backgrounds=args.backgrounds, background_mode=args.background_mode, cfg=cfg)
            print(json.dumps({"out": str(path)}))
            return 0
        if args.command == "ablate":
            cfg = _load_cfg(args)
            out = args.out if args.out else _default_out(f"ablate_{args.sweep}")
            payload = harness.ablate(cfg, args.sweep, out, seeds=args.seeds,
                                     eval_episodes=args.eval_episodes, jobs=args.jobs)
            print(json.dumps({"out_dir": str(out), "sweep": payload["sweep"],
                              "configs": sorted(payload["configs"])}))
            return 0
        raise UsageError(f"unknown command {args.command}")
    except (UsageError, ConfigurationError, CheckpointLoadError,
            InsufficientDataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
