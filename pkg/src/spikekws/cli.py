"""Command-line entry point: ``spikekws {train,eval,features,trace,manifest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import SpikeKWSError


def _cmd_train(args) -> int:
    from .config import dump_config, load_config
    from .train import train

    cfg = load_config(args.config, args.override)
    if args.dry_run:
        from .train import build_model, model_summary

        print(dump_config(cfg), end="")
        print(json.dumps(model_summary(cfg, build_model(cfg))))
        return 0
    result = train(cfg)
    print(f"best={result.best_path} last={result.last_path}")
    return 0


def _cmd_eval(args) -> int:
    from .dataset import Manifest
    from .train import evaluate_checkpoint

    manifest = Manifest.load(args.manifest, args.root) if args.manifest else None
    report = evaluate_checkpoint(args.checkpoint, args.split, manifest=manifest, root=args.root)
    print(json.dumps(report.to_dict()) if args.json else report.format())
    return 0


def _cmd_features(args) -> int:
    from .features import save_feature_map, wav_features

    fmap = wav_features(args.inp)
    save_feature_map(args.out, fmap, str(args.inp))
    print(f"wrote {args.out} shape={list(fmap.shape)}")
    return 0


def _cmd_trace(args) -> int:
    from .train import emit_trace

    paths = emit_trace(args.checkpoint, args.inp, args.out, channel=args.channel)
    for name, path in paths.items():
        print(f"{name}={path}")
    return 0


def _cmd_manifest(args) -> int:
    from .dataset import SPLITS, build_manifest

    manifest = build_manifest(args.root, seed=args.seed)
    manifest.save(args.out)
    counts = {s: len(manifest.split(s)) for s in SPLITS}
    print(f"wrote {args.out} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikekws", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="YAML config file or bundled config name")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. optim.lr=5e-4 (repeatable)")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved config and model size, then exit")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--manifest", help="manifest file (default: rebuild from the corpus root)")
    p.add_argument("--root", help="corpus root (overrides the checkpoint's config)")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("features", help="extract a log-Mel feature map from a wav file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("trace", help="export input, spike raster and score curves as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", type=int, default=0, help="first-layer channel to export")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("manifest", help="index a Speech Commands v1 directory")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_manifest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SpikeKWSError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
