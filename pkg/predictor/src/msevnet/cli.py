"""Command-line interface: train | predict.

Desk-scale defaults (reduced channels, 20 epochs); the full-size
configuration is reachable through flags.
"""

import argparse
import json
import sys

import torch

from .data import load_clips
from .model import ModelConfig
from .predict import forecast_clips, write_predictions
from .train import load_checkpoint, train

_CONFIG_KEYS = ("epochs", "batch_size", "lr", "seed", "input_len", "output_len",
                "spatial_blocks", "spatial_channels", "temporal_blocks",
                "temporal_channels", "downsample", "embed_dim", "spatial_radius",
                "horizon", "observed")


def _apply_config(args):
    """Overlay --config JSON values under explicitly passed flags."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        doc = json.load(fh)
    unknown = set(doc) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    defaults = {a.dest: a.default for a in args._subparser._actions}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)
    return args


def _model_config(args):
    return ModelConfig(
        input_len=args.input_len,
        output_len=args.output_len,
        spatial_blocks=args.spatial_blocks,
        spatial_channels=args.spatial_channels,
        temporal_blocks=args.temporal_blocks,
        temporal_channels=args.temporal_channels,
        downsample_factor=args.downsample,
        embed_dim=args.embed_dim,
        spatial_radius=args.spatial_radius,
    )


def cmd_train(args):
    cfg = _model_config(args)
    _, losses = train(args.inputs, args.targets, cfg, args.weights,
                      epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, seed=args.seed,
                      loss_curve_path=args.loss_curve)
    print(f"trained {args.epochs} epochs; final loss {losses[-1]:.6g}; "
          f"weights -> {args.weights}")
    return 0


def cmd_predict(args):
    model, cfg = load_checkpoint(args.weights)
    inputs = load_clips(args.inputs)
    observed = args.observed if args.observed else cfg.input_len
    if not 1 <= observed <= cfg.input_len:
        raise ValueError(f"--observed must lie in 1..{cfg.input_len}")
    preds = forecast_clips(model, inputs, args.horizon, observed)
    write_predictions(
        preds, args.out, checkpoint_path=args.weights,
        manifest_extra={"horizon": args.horizon, "observed": observed,
                        "config": cfg.to_dict()},
    )
    print(f"wrote {args.out} dims={tuple(preds.shape)}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="msev-predict")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train")
    tr.add_argument("--inputs", required=True)
    tr.add_argument("--targets", required=True)
    tr.add_argument("--weights", required=True)
    tr.add_argument("--config", help="JSON file of flag values (flags win)")
    tr.add_argument("--loss-curve")
    tr.add_argument("--epochs", type=int, default=20)
    tr.add_argument("--batch-size", type=int, default=1)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--input-len", type=int, default=10)
    tr.add_argument("--output-len", type=int, default=90)
    tr.add_argument("--spatial-blocks", type=int, default=4)
    tr.add_argument("--spatial-channels", type=int, default=32)
    tr.add_argument("--temporal-blocks", type=int, default=8)
    tr.add_argument("--temporal-channels", type=int, default=128)
    tr.add_argument("--downsample", type=int, default=4)
    tr.add_argument("--embed-dim", type=int, default=32)
    tr.add_argument("--spatial-radius", type=int, default=3)
    tr.set_defaults(func=cmd_train, _subparser=tr)

    pr = sub.add_parser("predict")
    pr.add_argument("--weights", required=True)
    pr.add_argument("--inputs", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config", help="JSON file of flag values (flags win)")
    pr.add_argument("--horizon", type=int, default=None)
    pr.add_argument("--observed", type=int, default=0)
    pr.set_defaults(func=cmd_predict, _subparser=pr)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        args = _apply_config(args)
        if args.command == "predict" and args.horizon is None:
            raise ValueError("--horizon is required (flag or config)")
        return args.func(args)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
