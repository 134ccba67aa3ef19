"""Command-line front-end.

    maskcount <gen|train-base|pseudo-label|train-seg|count|eval|ablate|bench-time>
              [--config path] [--seed N] [--dump-images] [--force]

Exit codes: 0 success, 2 config error, 3 missing prerequisite, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import Config, parse_config
from .errors import ConfigError, MissingArtifactError, NumericError, ParseError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskcount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="config file (defaults used if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--dump-images", action="store_true", help="write PGM/PNG inspection dumps")
        p.add_argument("--force", action="store_true", help="ignore fingerprint mismatches")
        return p

    gen = add("gen", "generate the synthetic dataset")
    gen.add_argument("--train", type=int, default=40, help="single-class training scenes")
    gen.add_argument("--val", type=int, default=12, help="single-class validation scenes")
    gen.add_argument("--test", type=int, default=25, help="single-class test scenes")

    add("train-base", "train the base counting model on single-class scenes")
    add("pseudo-label", "compute optimal-K pseudo masks for multi-class scenes")
    add("train-seg", "train the segmentation model on pseudo masks")

    cnt = add("count", "count one scene bundle")
    cnt.add_argument("scene", help="scene bundle directory")
    cnt.add_argument(
        "--method",
        default="none",
        help="none | kmeans | segmenter | dotbox:<mean|min|max> | threshold:<tau>",
    )
    cnt.add_argument("--tau", type=float, default=None, help="binarization threshold override")

    add("eval", "evaluate counting methods on the multi-class test scenes")
    add("ablate", "compare pseudo-labeling strategies")
    add("bench-time", "benchmark per-scene masking time")
    return parser


def load_config(args) -> Config:
    cfg = parse_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "gen":
            manifest = pipeline.cmd_gen(cfg, args.train, args.val, args.test)
            print(f"wrote {len(manifest['scenes'])} scenes to {cfg.paths.data_dir}")
        elif args.command == "train-base":
            model = pipeline.cmd_train_base(cfg)
            print(
                f"base counter trained: loss {model.loss_history[0]:.4f} -> "
                f"{model.loss_history[-1]:.4f}"
            )
        elif args.command == "pseudo-label":
            written = pipeline.cmd_pseudo_label(cfg, dump_images=args.dump_images)
            print(f"pseudo masks written: {written}")
        elif args.command == "train-seg":
            model = pipeline.cmd_train_seg(cfg)
            print(
                f"segmenter trained: loss {model.loss_history[0]:.4f} -> "
                f"{model.loss_history[-1]:.4f}"
            )
        elif args.command == "count":
            result = pipeline.cmd_count(
                cfg, args.scene, method=args.method, tau=args.tau, force=args.force
            )
            print(json.dumps(result, sort_keys=True, indent=1))
        elif args.command == "eval":
            result = pipeline.cmd_eval(cfg, force=args.force, dump_images=args.dump_images)
            for row in result["rows"]:
                print(
                    f"{row['method']:>12}: MAE {row['mae']:.3f}  RMSE {row['rmse']:.3f}  "
                    f"NAE {row['nae']:.3f}  SRE {row['sre']:.3f}"
                )
            print(f"val mean IoU: {result['val_mean_iou']:.3f}")
        elif args.command == "ablate":
            rows = pipeline.cmd_ablate(cfg, force=args.force)
            for row in rows:
                print(f"{row['method']:>14}: MAE {row['mae']:.3f}  RMSE {row['rmse']:.3f}")
        elif args.command == "bench-time":
            doc = pipeline.cmd_bench_time(cfg, force=args.force)
            for name, sec in doc["columns"].items():
                print(f"{name:>12}: {sec * 1e3:8.2f} ms/scene")
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingArtifactError as e:
        print(f"missing prerequisite: {e}", file=sys.stderr)
        return 3
    except (NumericError, ParseError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
