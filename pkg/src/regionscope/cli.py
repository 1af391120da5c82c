"""Command-line entry point.

    regionscope moons --config moons.cfg --seed 1
    regionscope evolution --config mnist_evolution.cfg --out runs/evo
    regionscope collapse --config collapse.cfg
    regionscope train --config moons.cfg --objective simclr --out runs/simclr
    regionscope regions --weights snap.bin --plane plane.json --out r.json
    regionscope render --regions r.json --out r.svg

Usage errors exit with status 2; failures inside the library exit with
status 1 after printing a one-line JSON error record to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .data import AugmentationPolicy
from .errors import ArgumentError, RegionScopeError
from .models import build_assembly
from .plane import PlaneEmbedding, restrict_to_plane
from .regions import RegionSet, aggregate, extract_exact, extract_grid, rectangle
from .render import render_svg
from .snapshot import load_network
from .training import parse_int_list, read_config, train

log = logging.getLogger("regionscope")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _add_common(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", required=config_required, help="flat key = value config file")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="run a single seed instead of the config's seed list")
    p.add_argument("--data-root", default=os.environ.get("REGIONSCOPE_DATA"),
                   help="dataset directory (default: $REGIONSCOPE_DATA)")
    p.add_argument("--grid-res", type=int, help="grid resolution for telemetry counts")
    p.add_argument("--snapshot-epochs", help="comma-separated epochs to snapshot")
    p.add_argument("--jobs", type=int, help="parallel (model, seed) jobs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regionscope", description="Linear-region analysis of small ReLU networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    for name, text in (("moons", "train the moons models and extract their tessellations"),
                       ("evolution", "track regions over training on an image plane"),
                       ("collapse", "SimSiam without predictor versus the control")):
        _add_common(sub.add_parser(name, help=text), config_required=True)

    p = sub.add_parser("train", help="train one model and write weight snapshots")
    _add_common(p, config_required=True)
    p.add_argument("--objective", help="model to train (default: the config's first model)")

    p = sub.add_parser("regions", help="exact region extraction for a weight snapshot")
    p.add_argument("--weights", required=True)
    p.add_argument("--plane", help="plane.json for networks with more than two inputs")
    p.add_argument("--out", required=True, help="RegionSet JSON path")
    p.add_argument("--svg", help="also render the tessellation to this path")
    p.add_argument("--grid-res", type=int, help="also report the grid-oracle count at this resolution")

    p = sub.add_parser("render", help="render a RegionSet JSON file as SVG")
    p.add_argument("--regions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--no-stroke", action="store_true")
    return parser


def resolve_config(name: str) -> Path | None:
    """A path on disk, else a config shipped with the package (``moons`` or ``moons.cfg``)."""
    path = Path(name)
    if path.is_file():
        return path
    stem = path.name if path.suffix == ".cfg" else path.name + ".cfg"
    packaged = Path(__file__).parent / "configs" / stem
    return packaged if packaged.is_file() else None


def _spec(args, **extra) -> experiments.ExperimentSpec:
    mapping = read_config(args.config)
    overrides = {"out": args.out, "data_root": args.data_root, "grid_res": args.grid_res,
                 "jobs": args.jobs, **extra}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.snapshot_epochs is not None:
        overrides["snapshot_epochs"] = parse_int_list(args.snapshot_epochs)
    return experiments.ExperimentSpec.from_mapping(mapping, **overrides)


def _cmd_experiment(args) -> dict:
    spec = _spec(args)
    if spec.kind != args.command:
        raise ArgumentError(f"config describes a {spec.kind!r} experiment, not {args.command!r}")
    result = experiments.run(spec)
    if spec.kind == "collapse":
        return {"out": str(spec.out_dir), "ordered_seeds": result["ordered_seeds"],
                "control_kept": result["control_kept"]}
    return {"out": str(spec.out_dir), "rows": len(result)}


def _cmd_train(args) -> dict:
    spec = _spec(args, models=args.objective)
    model = spec.models[0]
    seed = spec.seeds[0]
    cfg = spec.config_for(model, seed)
    if args.snapshot_epochs is not None:
        cfg.snapshot_epochs = parse_int_list(args.snapshot_epochs)
    elif not cfg.snapshot_epochs:
        cfg.snapshot_epochs = [cfg.epochs]
    if spec.native_2d:
        ds, _ = experiments.moons_sets(spec)
        n_classes = 2
        policy = AugmentationPolicy.points(spec.jitter)
    else:
        ds, _ = experiments.image_sets(spec)
        n_classes = int(ds.labels.max()) + 1
        policy = None
    asm = build_assembly(model, spec.backbone_sizes, np.random.default_rng(seed), n_classes=n_classes,
                         predictor=cfg.predictor, ema_tau=cfg.ema_tau, queue_capacity=cfg.queue_capacity)
    out = experiments.job_dir(spec, model, seed) / "snapshots"
    snaps = train(asm, cfg, ds, policy=policy, snapshot_dir=out)
    return {"snapshots": [str(out / f"epoch{s.epoch:03d}.bin") for s in snaps]}


def _cmd_regions(args) -> dict:
    net, _ = load_network(args.weights)
    if args.plane:
        plane = PlaneEmbedding.load(args.plane)
        net = restrict_to_plane(net, plane)
        domain = plane.domain()
    elif net.input_dim == 2:
        domain = rectangle(0.0, 0.0, 1.0, 1.0)
    else:
        raise ArgumentError(f"network has {net.input_dim} inputs; pass --plane")
    rs = extract_exact(net, domain)
    rs.dump(args.out)
    if args.svg:
        Path(args.svg).write_text(render_svg(rs))
    agg = aggregate(rs)
    report = {"out": args.out, "regions": agg.count, "mean_area": agg.mean_area,
              "mean_ecc": agg.mean_eccentricity, "mean_boundaries": agg.mean_boundaries}
    if args.grid_res:
        report["grid_regions"] = extract_grid(net, domain, args.grid_res).count
    return report


def _cmd_render(args) -> dict:
    rs = RegionSet.load(args.regions)
    Path(args.out).write_text(render_svg(rs, width=args.width, stroke=not args.no_stroke))
    return {"out": args.out, "paths": len(rs.regions)}


COMMANDS = {
    "moons": _cmd_experiment,
    "evolution": _cmd_experiment,
    "collapse": _cmd_experiment,
    "train": _cmd_train,
    "regions": _cmd_regions,
    "render": _cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    config = getattr(args, "config", None)
    if config is not None:
        found = resolve_config(config)
        if found is None:
            parser.print_usage(sys.stderr)
            print(f"regionscope: error: config file {config} not found", file=sys.stderr)
            return 2
        args.config = str(found)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = COMMANDS[args.command](args)
    except (RegionScopeError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
