"""Config-driven experiments behind the CLI subcommands.

Every runner takes a plain dict (usually parsed from JSON), writes its outputs
under ``out_dir`` when one is given, and returns a dict of results.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from .geodesic import detect_singularities
from .io import load_mesh, save_ply
from .kernel import assemble, edge_detector_template
from .mesh import SurfaceSpec, TriangleMesh, generate_surface
from .net import (
    Dataset,
    TrainConfig,
    build_domain,
    build_network,
    evaluate,
    load_mnist,
    map_images_to_mesh,
    save_checkpoint,
    train,
)
from .net.data import sample_image

__all__ = [
    "make_mesh",
    "run_mnist",
    "run_transfer",
    "filter_demo",
    "singularity_study",
    "plaid_image",
    "FIELD_SETS",
    "TRANSFER_SURFACES",
]

log = logging.getLogger(__name__)

DEFAULT_DATA = {"mnist_dir": "/root/data/mnist", "train_size": 10000, "test_size": 2000}

# canonical field sets of the singularity study; sources in (u, v)
FIELD_SETS = {
    "PTC1": ["corner"],
    "PTC2": ["center"],
    "PTC3": [{"uv": [[0.3, 0.3]]}, {"uv": [[0.7, 0.7]]}],
    "PTC4": [{"uv": [[0.3, 0.3]]}, {"uv": [[0.7, 0.3]]}, {"uv": [[0.3, 0.7]]}, {"uv": [[0.7, 0.7]]}],
}


def _grid(function, **params):
    return {"function": function, "params": params, "resolution": [28, 28], "extent": 27.0}


# stand-in surface family for the transfer experiments (the published surfaces are not available)
TRANSFER_SURFACES = {
    "bump_a": _grid("gaussian_bump", height=0.3, center=[0.5, 0.5], sigma=0.25),
    "saddle": _grid("saddle", amplitude=0.25),
    "wave": _grid("wave", amplitude=0.1, freq_u=1.0, freq_v=1.0),
    "two_bumps": _grid(
        "bumps",
        bumps=[
            {"height": 0.25, "center": [0.3, 0.3], "sigma": 0.2},
            {"height": 0.25, "center": [0.7, 0.7], "sigma": 0.2},
        ],
    ),
    "unseen": _grid("bumps", bumps=[
        {"height": 0.3, "center": [0.4, 0.6], "sigma": 0.22},
        {"height": -0.15, "center": [0.7, 0.3], "sigma": 0.2},
    ]),
}


def make_mesh(cfg) -> TriangleMesh:
    """A mesh from ``{"mesh": path}`` or a surface spec dict (optionally under ``"surface"``)."""
    if isinstance(cfg, TriangleMesh):
        return cfg
    if isinstance(cfg, str):
        cfg = TRANSFER_SURFACES[cfg] if cfg in TRANSFER_SURFACES else {"mesh": cfg}
    if "mesh" in cfg:
        return load_mesh(cfg["mesh"])
    return generate_surface(SurfaceSpec.from_dict(cfg.get("surface", cfg)))


def _load_data(data_cfg):
    d = {**DEFAULT_DATA, **(data_cfg or {})}
    tr = load_mnist(d["mnist_dir"], "train", limit=d["train_size"])
    te = load_mnist(d["mnist_dir"], "test", limit=d["test_size"])
    return tr, te


def _write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _outdir(cfg) -> Path | None:
    out = cfg.get("out_dir")
    if out is None:
        return None
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _domains(cfg, surfaces):
    return [
        build_domain(
            make_mesh(s),
            sources=cfg.get("sources", ["corner"]),
            radius=cfg.get("radius"),
            n_r=cfg.get("n_r", 3),
            n_theta=cfg.get("n_theta", 8),
            name=s if isinstance(s, str) else "",
        )
        for s in surfaces
    ]


def _network(cfg, n_vertices, grid_shape, seed):
    return build_network(
        conv=cfg.get("conv", "ptc"),
        n_vertices=n_vertices,
        filters=cfg.get("filters", 16),
        n_r=cfg.get("n_r", 3),
        n_theta=cfg.get("n_theta", 8),
        n_fields=len(cfg.get("sources", ["corner"])),
        readout=cfg.get("readout", "flatten"),
        kernel_size=cfg.get("kernel_size", 5),
        grid_shape=grid_shape,
        seed=seed,
    )


def _train_on(cfg, train_surfaces, data=None):
    tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    (tr_x, tr_y), (te_x, te_y) = data if data is not None else _load_data(cfg.get("data"))
    domains = _domains(cfg, train_surfaces)
    mesh = domains[0].mesh
    for d in domains[1:]:
        if d.n_vertices != mesh.n_vertices:
            raise ValueError("training surfaces must share the vertex layout")
    sig_tr = map_images_to_mesh(tr_x, mesh)
    sig_te = map_images_to_mesh(te_x, mesh)
    rr = lambda n: np.arange(n) % len(domains)  # noqa: E731
    train_set = Dataset(sig_tr, tr_y, domains, rr(len(tr_y)))
    test_set = Dataset(sig_te, te_y, domains, rr(len(te_y)))
    net = _network(cfg, mesh.n_vertices, mesh.grid_shape, tcfg.seed)
    t0 = time.perf_counter()
    net, records = train(net, train_set, tcfg, eval_set=test_set)
    elapsed = time.perf_counter() - t0
    return net, records, test_set, (te_x, te_y), elapsed


def run_mnist(cfg: dict, data=None) -> dict:
    """Train one network on MNIST mapped to a single surface and evaluate it.

    Config keys: ``surface`` (spec dict) or ``mesh``, ``sources``, ``radius``,
    ``n_r``, ``n_theta``, ``conv`` ("ptc" | "dense"), ``filters``, ``readout``,
    ``train`` (TrainConfig fields), ``data``, ``out_dir``.
    """
    surf = cfg.get("surface", cfg.get("mesh") and {"mesh": cfg["mesh"]}) or _grid("flat")
    net, records, test_set, _, elapsed = _train_on(cfg, [surf], data)
    acc = evaluate(net, test_set)
    out = _outdir(cfg)
    if out is not None:
        _write_rows(out / "metrics.csv", records)
        save_checkpoint(net, out / "model.ptcn")
    return {"accuracy": acc, "log": records, "seconds": elapsed, "net": net}


def run_transfer(cfg: dict, data=None) -> dict:
    """Train on ``train_surfaces`` and evaluate frozen weights on ``test_surface``.

    Surfaces are spec dicts or names from ``TRANSFER_SURFACES``.  Only the
    domain (fields, frames, bases) is rebuilt for the unseen surface.
    """
    trains = cfg.get("train_surfaces", ["bump_a"])
    net, records, test_set, (te_x, te_y), elapsed = _train_on(cfg, trains, data)
    in_domain = evaluate(net, test_set)
    target = _domains(cfg, [cfg.get("test_surface", "unseen")])[0]
    before = [p.copy() for _, p in net.parameters()]
    transfer = evaluate(net, Dataset(map_images_to_mesh(te_x, target.mesh), te_y, [target]))
    assert all(np.array_equal(a, p) for a, (_, p) in zip(before, net.parameters()))
    out = _outdir(cfg)
    result = {"in_domain": in_domain, "transfer": transfer, "drop": in_domain - transfer, "seconds": elapsed}
    if out is not None:
        _write_rows(out / "metrics.csv", records)
        _write_rows(out / "transfer.csv", [{k: result[k] for k in ("in_domain", "transfer", "drop")}])
        save_checkpoint(net, out / "model.ptcn")
    result["log"] = records
    result["net"] = net
    return result


def plaid_image(size: int = 64, period: int = 16, width: int = 8) -> np.ndarray:
    """Vertical stripes on the left half, horizontal stripes on the right half."""
    idx = (np.arange(size) % period) < width
    vert = np.tile(idx, (size, 1))
    img = np.where(np.arange(size)[None, :] < size // 2, vert, vert.T)
    return img.astype(np.float64)


def filter_demo(cfg: dict) -> dict:
    """Oriented edge filters on a curved surface carrying a plaid image.

    Edge vertices are where the image jumps across neighbouring grid columns
    (vertical edges, left half) or rows (horizontal edges, right half), at
    least one kernel radius away from the boundary and the seam.  Kernels are
    normalized per vertex unless ``normalize`` is false.  Reports the
    mean absolute response of the 0 and 90 degree filters on both sets and of
    the max over a rotation sweep.
    """
    spec = cfg.get("surface", {"function": "gaussian_bump", "params": {"height": 0.3},
                               "resolution": [64, 64], "extent": 63.0})
    mesh = make_mesh({"surface": spec})
    img_cfg = {"size": 64, "period": 16, "width": 8, **cfg.get("image", {})}
    image = plaid_image(img_cfg["size"], img_cfg["period"], img_cfg["width"])
    n_r, n_theta = cfg.get("n_r", 3), cfg.get("n_theta", 8)
    dom = build_domain(mesh, cfg.get("sources", ["left_edge"]), cfg.get("radius"), n_r, n_theta)
    basis = dom.bases[0]
    f = sample_image(image, mesh.uv[:, 0], mesh.uv[:, 1])
    Mf = dom.mass.weights * f
    normalize = cfg.get("normalize", True)

    def response(orientation, angle=0.0):
        t = edge_detector_template(orientation, basis.radius, n_r, n_theta)
        return assemble(basis, t, angle=angle, normalize=normalize).stencil @ Mf

    r0 = response(0.0)
    r90 = response(np.pi / 2)
    n_angles = cfg.get("n_angles", 16)
    sweep = np.max(np.abs([response(0.0, 2 * np.pi * k / n_angles) for k in range(n_angles)]), axis=0)

    n_v, n_u = mesh.grid_shape
    S = f.reshape(n_v, n_u)
    margin = int(np.ceil(basis.radius / mesh.mean_edge_length)) + 2
    jj, ii = np.meshgrid(np.arange(n_v), np.arange(n_u), indexing="ij")
    du = np.zeros_like(S)
    dv = np.zeros_like(S)
    du[:, 1:-1] = np.abs(S[:, 2:] - S[:, :-2])
    dv[1:-1, :] = np.abs(S[2:, :] - S[:-2, :])
    inner = (ii >= margin) & (ii < n_u - margin) & (jj >= margin) & (jj < n_v - margin)
    seam = np.abs(ii - n_u // 2) < margin
    vert_set = np.flatnonzero((inner & ~seam & (ii < n_u // 2) & (du > 0.5)).ravel())
    horiz_set = np.flatnonzero((inner & ~seam & (ii >= n_u // 2) & (dv > 0.5)).ravel())

    m = lambda r, s: float(np.mean(np.abs(r[s])))  # noqa: E731
    res = {
        "vertical_aligned": m(r0, vert_set),
        "vertical_rotated": m(r90, vert_set),
        "horizontal_aligned": m(r90, horiz_set),
        "horizontal_rotated": m(r0, horiz_set),
        "vertical_sweep": m(sweep, vert_set),
        "horizontal_sweep": m(sweep, horiz_set),
        "n_vertical": int(vert_set.size),
        "n_horizontal": int(horiz_set.size),
    }
    res["vertical_ratio"] = res["vertical_aligned"] / res["vertical_rotated"]
    res["horizontal_ratio"] = res["horizontal_aligned"] / res["horizontal_rotated"]
    res["vertical_sweep_fraction"] = res["vertical_sweep"] / res["vertical_aligned"]
    res["horizontal_sweep_fraction"] = res["horizontal_sweep"] / res["horizontal_aligned"]
    out = _outdir(cfg)
    if out is not None:
        save_ply(mesh, out / "responses.ply", {"signal": f, "edge_0": r0, "edge_90": r90, "sweep_max": sweep})
        _write_rows(out / "metrics.csv", [res])
    return res


def singularity_study(cfg: dict, data=None) -> dict:
    """Train one network per (field set, seed) on a single surface.

    ``field_sets`` maps names to source lists (default: PTC1..PTC4); filters
    are assigned to fields round-robin.  Returns per-run accuracies, the mean
    per field set, and the number of faces flagged singular per field set.
    """
    sets = cfg.get("field_sets", FIELD_SETS)
    seeds = cfg.get("seeds", [0, 1, 2])
    surface = cfg.get("surface", TRANSFER_SURFACES["bump_a"])
    data = data if data is not None else _load_data(cfg.get("data"))
    mesh = make_mesh(surface)
    rows = []
    flagged = {}
    for name, sources in sets.items():
        dom = build_domain(mesh, sources, cfg.get("radius"), cfg.get("n_r", 3), cfg.get("n_theta", 8))
        flagged[name] = int(sum(detect_singularities(fld).size for fld in dom.fields))
        for seed in seeds:
            run_cfg = {**cfg, "surface": surface, "sources": sources,
                       "train": {**cfg.get("train", {}), "seed": seed}, "out_dir": None}
            r = run_mnist(run_cfg, data)
            rows.append({"field_set": name, "n_fields": len(sources), "seed": seed, "accuracy": r["accuracy"]})
            log.info("%s seed %d: %.4f", name, seed, r["accuracy"])
    means = {n: float(np.mean([r["accuracy"] for r in rows if r["field_set"] == n])) for n in sets}
    out = _outdir(cfg)
    if out is not None:
        _write_rows(out / "runs.csv", rows)
        _write_rows(out / "summary.csv", [{"field_set": n, "mean_accuracy": means[n],
                                           "flagged_faces": flagged[n]} for n in sets])
    return {"runs": rows, "mean": means, "flagged_faces": flagged}


def load_config(path) -> dict:
    return json.loads(Path(path).read_text())
