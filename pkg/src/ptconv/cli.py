"""Command line entry point ``ptconv``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .geodesic import UnreachableError, fast_marching
from .io import load_mesh, save_frame_glyphs, save_ply, save_signal
from .mesh import MeshError
from .transport import build_frames


def _geodesic(args):
    mesh = load_mesh(args.mesh)
    field = fast_marching(mesh, args.source, update=args.update)
    save_signal(field.distance, args.out, names=["distance"])
    if args.ply:
        save_ply(mesh, args.ply, {"distance": field.distance})
    print(f"wrote {mesh.n_vertices} distances to {args.out} (max {field.distance.max():.6g})")


def _frames(args):
    mesh = load_mesh(args.mesh)
    frames = build_frames(mesh, fast_marching(mesh, args.source))
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    save_frame_glyphs(centers, frames.face_b1, frames.face_b2, args.out, args.scale * mesh.mean_edge_length)
    print(f"wrote {mesh.n_faces} frame glyphs to {args.out}")


def _config(args) -> dict:
    cfg = experiments.load_config(args.config) if args.config else {}
    if args.out_dir:
        cfg["out_dir"] = args.out_dir
    return cfg


def _report(result: dict) -> None:
    shown = {k: v for k, v in result.items() if k not in ("net", "log")}
    print(json.dumps(shown, indent=2, default=float))


def _train_mnist(args):
    _report(experiments.run_mnist(_config(args)))


def _eval_transfer(args):
    _report(experiments.run_transfer(_config(args)))


def _filter_demo(args):
    _report(experiments.filter_demo(_config(args)))


def _singularity_study(args):
    _report(experiments.singularity_study(_config(args)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptconv", description="Parallel transport convolution on triangle meshes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", help="fast-marching distances from source vertices")
    g.add_argument("--mesh", required=True, help="OFF or OBJ mesh")
    g.add_argument("--source", type=int, nargs="+", required=True)
    g.add_argument("--out", required=True, help="CSV (or .bin) per-vertex distances")
    g.add_argument("--ply", help="also write a PLY with a distance property")
    g.add_argument("--update", choices=["point", "planar"], default="point")
    g.set_defaults(func=_geodesic)

    f = sub.add_parser("frames", help="dump face frames as PLY vector glyphs")
    f.add_argument("--mesh", required=True)
    f.add_argument("--source", type=int, nargs="+", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--scale", type=float, default=0.5, help="glyph length in mean edge lengths")
    f.set_defaults(func=_frames)

    for name, func, text in [
        ("train-mnist", _train_mnist, "train a single-layer network on MNIST mapped to a surface"),
        ("eval-transfer", _eval_transfer, "train on some surfaces, evaluate on an unseen one"),
        ("filter-demo", _filter_demo, "oriented edge filters on a curved surface"),
        ("singularity-study", _singularity_study, "compare vector-field sets PTC1..PTC4"),
    ]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out-dir", help="output directory (overrides the config)")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (MeshError, UnreachableError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
