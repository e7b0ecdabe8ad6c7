"""Command-line front end.

Subcommands: synth, derive, degrade, train, eval, ablate, render.
All rasters use the .raw/.hdr.json flat-binary scheme.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import data, harness
from .spectra import (
    DerivativeSpec,
    NoiseSpec,
    SynthSceneSpec,
    degrade,
    derivative,
    synth_scene,
)


def _pairs(raw: str) -> tuple:
    """'1:2,3:4' -> ((1, 2), (3, 4))."""
    if not raw:
        return ()
    out = []
    for chunk in raw.split(","):
        a, b = chunk.split(":")
        out.append((int(a), int(b)))
    return tuple(out)


def _classes(raw: str) -> tuple:
    """'5,6' -> (5, 6)."""
    return tuple(int(c) for c in raw.split(",") if c.strip())


def _config_from_args(args) -> harness.TrainConfig:
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.apply_seed_env(harness.TrainConfig())
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = harness._coerce_field(key.strip(), raw)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _cmd_synth(args):
    spec = SynthSceneSpec(
        class_count=args.classes, bands=args.bands, height=args.height,
        width=args.width, confusable_pairs=_pairs(args.confusable),
        offset_pairs=_pairs(args.offset), seed=args.seed,
        rough_classes=_classes(args.rough),
        glare_classes=_classes(args.glare),
        magnitude_noise_sigma=args.noise_sigma,
        brightness_sigma=args.brightness_sigma,
        oscillation_amplitude=args.oscillation,
        roughness_sigma=args.roughness_sigma,
        glare_sigma=args.glare_sigma,
    )
    cube, mask = synth_scene(spec)
    data.save_cube(cube, args.out)
    data.save_labels(mask, f"{args.out}.labels")
    print(f"wrote {args.out}.raw ({cube.height}x{cube.width}x{cube.band_count}) "
          f"and {args.out}.labels.raw ({mask.class_count} classes)")


def _cmd_derive(args):
    cube = data.load_cube(args.cube)
    out = derivative(cube, DerivativeSpec(args.order, args.step))
    data.save_cube(out, args.out)
    print(f"wrote {args.out}.raw with {out.band_count} bands")


def _cmd_degrade(args):
    cube = data.load_cube(args.cube)
    noise = NoiseSpec(
        gaussian_sigma=args.gaussian_sigma,
        salt_pepper_rate=args.salt_pepper,
        stripe_amplitude=args.stripe_amplitude,
        stripe_fraction=args.stripe_fraction,
        seed=args.seed,
    )
    data.save_cube(degrade(cube, noise), args.out)
    print(f"wrote {args.out}.raw")


def _cmd_train(args):
    cfg = _config_from_args(args)
    cube = data.load_cube(args.cube)
    mask = data.load_labels(args.labels)
    split_mask = data.split(mask, args.ratio, seed=cfg.seed)
    record = harness.train(cube, mask, split_mask, cfg, out_dir=args.out)
    out = Path(args.out)
    data.save_split(split_mask, out / "split")
    harness.save_config(cfg, out / "config.txt")
    rep = record.report
    print(f"steps={cfg.epochs} oa={rep.oa:.4f} aa={rep.aa:.4f} "
          f"kappa={rep.kappa:.4f} cf1={rep.cf1:.4f} "
          f"({record.wall_seconds:.1f}s)")
    print(f"checkpoint: {record.checkpoint_path}")


def _cmd_eval(args):
    cube = data.load_cube(args.cube)
    mask = data.load_labels(args.labels)
    split_mask = data.load_split(args.split)
    rep = harness.evaluate(args.checkpoint, cube, mask, split_mask,
                           region=args.region)
    if args.json:
        Path(args.json).write_text(rep.to_json())
    print(rep.table(), end="")


def _cmd_ablate(args):
    cfg = _config_from_args(args)
    cube = data.load_cube(args.cube)
    mask = data.load_labels(args.labels)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    table = harness.ablate(cube, mask, args.axis, cfg, seeds, args.ratio,
                           out_dir=args.out)
    print(table.to_csv(), end="")
    print("\nmean cf1 by variant:")
    for variant, mean in table.mean_cf1().items():
        print(f"  {variant:>12s}  {mean:.4f}")


def _cmd_render(args):
    if args.labels:
        mask = data.load_labels(args.labels)
        harness.render_labels(mask.labels, args.out, mask.class_count)
    else:
        cube = data.load_cube(args.map)
        harness.render_weights(cube.data[:, :, args.band], args.out)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cscn",
        description="Dual magnitude/derivative hyperspectral classification lab.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    p.add_argument("--out", required=True, help="output raster prefix")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--bands", type=int, default=24)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=48)
    p.add_argument("--confusable", default="", help="pairs like 1:2,3:4")
    p.add_argument("--offset", default="", help="pairs like 5:6")
    p.add_argument("--rough", default="", help="classes like 5,6")
    p.add_argument("--glare", default="", help="classes like 1,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.015)
    p.add_argument("--brightness-sigma", type=float, default=0.25)
    p.add_argument("--oscillation", type=float, default=0.05)
    p.add_argument("--roughness-sigma", type=float, default=0.08)
    p.add_argument("--glare-sigma", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("derive", help="write the derivative cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=1, choices=(1, 2))
    p.add_argument("--step", type=int, default=1)
    p.set_defaults(func=_cmd_derive)

    p = sub.add_parser("degrade", help="apply mixed sensor noise")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gaussian-sigma", type=float, default=0.05)
    p.add_argument("--salt-pepper", type=float, default=0.01)
    p.add_argument("--stripe-amplitude", type=float, default=0.1)
    p.add_argument("--stripe-fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("train", help="train on one scene")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--ratio", type=float, default=0.1,
                   help="per-class train fraction")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True, help="split raster prefix")
    p.add_argument("--region", default="test",
                   choices=("test", "train", "all"))
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="sweep one ablation axis")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--axis", required=True, choices=harness.ABLATION_AXES)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--out", help="directory for the CSV table")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("render", help="write a PNG of labels or one band")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--labels", help="label raster prefix")
    group.add_argument("--map", help="cube prefix; pick --band")
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
