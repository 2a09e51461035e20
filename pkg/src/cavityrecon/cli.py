"""``cavityrecon`` command-line interface.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import FIELDS, PipelineConfig, read_config_file
from .errors import InvalidSpec, ReconError
from .phantom import PhantomSpec

log = logging.getLogger("cavityrecon")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config_flags(p: argparse.ArgumentParser, skip=()):
    g = p.add_argument_group(
        "configuration keys",
        "Each key may also be set in the --config file as 'key = value'; flags win over the file.",
    )
    g.add_argument("--config", metavar="FILE", help="plain-text key = value file")
    for name, f in FIELDS.items():
        if name in skip:
            continue
        default = f.default if f.default is not None else "auto"
        g.add_argument(
            "--" + name.replace("_", "-"),
            dest="cfg_" + name,
            metavar="V",
            default=None,
            help=f"{f.metadata['help']} (key '{name}', default {default})",
        )


def _resolve_config(args) -> PipelineConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in FIELDS:
        v = getattr(args, "cfg_" + name, None)
        if v is not None:
            values[name] = v
    return PipelineConfig().with_overrides(values)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cavityrecon", description="Dense cavity surface reconstruction and evaluation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic phantom dataset")
    s.add_argument("--out", required=True, help="dataset directory to create")
    s.add_argument("--frames", type=int, default=60)
    s.add_argument("--noise", type=float, default=0.01, help="relative depth noise stddev")
    s.add_argument("--points", type=int, default=2000, help="sparse landmark count")
    s.add_argument("--scale-jitter", type=float, default=0.2, help="per-frame depth scale is exp(U(-j, j))")
    s.add_argument("--seed", type=int, default=0)
    d = PhantomSpec()
    s.add_argument("--length", type=float, default=d.length)
    s.add_argument("--radii", default=",".join(str(r) for r in d.radius_profile), help="comma-separated radius profile")
    s.add_argument("--bend", type=float, default=d.bend)
    s.add_argument("--bump-amplitude", type=float, default=d.bump_amplitude)
    s.add_argument("--axial-segments", type=int, default=d.axial_segments)
    s.add_argument("--angular-segments", type=int, default=d.angular_segments)

    r = sub.add_parser("reconstruct", help="scale recovery, TSDF fusion and mesh extraction")
    _config_flags(r)

    e = sub.add_parser("evaluate", help="compare a reconstruction with a reference mesh")
    e.add_argument("--recon", required=True, help="reconstructed mesh PLY")
    e.add_argument("--reference", required=True, help="reference mesh PLY")
    e.add_argument("--trajectory", required=True, help="trajectory file for the cross-sections")
    e.add_argument("--cloud", help="sparse point cloud PLY (optional)")
    _config_flags(e, skip=("dataset",))

    m = sub.add_parser("match", help="dense descriptor matching with subpixel refinement")
    m.add_argument("--source", required=True, help="source descriptor map")
    m.add_argument("--target", required=True, help="target descriptor map")
    m.add_argument("--queries", required=True, help="text file of 'u v' query pixels")
    m.add_argument("--out", required=True, help="output matches file")
    m.add_argument("--refine", type=int, default=4, help="subpixel grid factor")

    c = sub.add_parser("consistency", help="reconstruct independent frame subsamples and register them")
    _config_flags(c)
    return p


def _synth(args):
    try:
        radii = tuple(float(x) for x in args.radii.split(","))
    except ValueError:
        raise InvalidSpec(f"bad --radii {args.radii!r}") from None
    spec = PhantomSpec(
        length=args.length,
        radius_profile=radii,
        bend=args.bend,
        bump_amplitude=args.bump_amplitude,
        axial_segments=args.axial_segments,
        angular_segments=args.angular_segments,
        seed=args.seed,
    )
    if args.frames < 2 or args.points < 1 or args.noise < 0 or args.scale_jitter < 0:
        raise InvalidSpec("need frames >= 2, points >= 1 and non-negative noise / jitter")
    cfg = pipeline.SynthConfig(args.frames, args.noise, args.points, args.scale_jitter, args.seed, spec)
    out = pipeline.run_synth(args.out, cfg)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def _reconstruct(args):
    cfg = _resolve_config(args)
    if not cfg.dataset:
        raise InvalidSpec("--dataset is required")
    rec = pipeline.run_reconstruct(cfg)
    rep = rec.report
    print(
        f"{len(rec.mesh.triangles)} triangles, boundary edges {rep.boundary_edge_count}, "
        f"non-manifold edges {rep.non_manifold_edge_count}, components {rep.connected_component_count}"
    )
    return 0


def _evaluate(args):
    cfg = _resolve_config(args)
    ev = pipeline.run_evaluate(args.recon, args.reference, args.trajectory, args.cloud, cfg)
    for name, value, unit in ev.metrics:
        print(f"{name} {pipeline._fmt(value)} {unit}")
    if ev.section_error:
        print(f"cavityrecon: {ev.section_error}", file=sys.stderr)
    return ev.exit_code


def _match(args):
    rows = pipeline.run_match(args.source, args.target, args.queries, args.out, args.refine)
    print(f"{len(rows)} matches written to {args.out}")
    return 0


def _consistency(args):
    cfg = _resolve_config(args)
    if not cfg.dataset:
        raise InvalidSpec("--dataset is required")
    res = pipeline.run_consistency(cfg)
    print(f"mean_residual {res.mean_residual!r} mm")
    return 0


_COMMANDS = {
    "synth": _synth,
    "reconstruct": _reconstruct,
    "evaluate": _evaluate,
    "match": _match,
    "consistency": _consistency,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ReconError as exc:
        print(f"cavityrecon: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"cavityrecon: missing file: {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"cavityrecon: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
