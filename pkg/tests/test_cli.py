import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ptconv.cli import main
from ptconv.geodesic import fast_marching
from ptconv.io import load_signal, save_mesh
from ptconv.net import load_checkpoint

from conftest import flat_grid

MNIST_DIR = "/root/data/mnist"
needs_mnist = pytest.mark.skipif(not os.path.isdir(MNIST_DIR), reason="MNIST IDX files not present")
TINY = {"data": {"mnist_dir": MNIST_DIR, "train_size": 100, "test_size": 40},
        "train": {"iterations": 4, "batch_size": 20, "log_every": 2}, "filters": 2}


@pytest.fixture
def grid_off(tmp_path):
    m = flat_grid(8)
    path = tmp_path / "grid.off"
    save_mesh(m, path)
    return m, path


def test_geodesic(tmp_path, grid_off, capsys):
    m, path = grid_off
    out = tmp_path / "d.csv"
    ply = tmp_path / "d.ply"
    assert main(["geodesic", "--mesh", str(path), "--source", "0", "--out", str(out), "--ply", str(ply)]) == 0
    d = load_signal(out)
    assert np.allclose(d.ravel(), fast_marching(m, [0]).distance, atol=1e-12)
    assert "property double distance" in ply.read_text()
    assert "wrote 64 distances" in capsys.readouterr().out


def test_frames(tmp_path, grid_off):
    m, path = grid_off
    out = tmp_path / "frames.ply"
    assert main(["frames", "--mesh", str(path), "--source", "0", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    n = m.n_faces
    assert f"element vertex {3 * n}" in lines and f"element edge {2 * n}" in lines
    body = lines[lines.index("end_header") + 1:]
    pts = np.array([[float(x) for x in l.split()] for l in body[:3 * n]])
    # corner source on a flat grid: b1 glyphs point away from the origin, in the plane
    b1 = pts[n:2 * n] - pts[:n]
    assert np.allclose(b1[:, 2], 0) and np.all(b1[:, :2] @ np.array([1.0, 1.0]) > 0)


@pytest.mark.parametrize("args", [
    ["geodesic", "--mesh", "/nonexistent.off", "--source", "0", "--out", "x.csv"],
    ["geodesic", "--mesh", "{mesh}", "--source", "999", "--out", "{tmp}/x.csv"],
    ["train-mnist", "--config", "/nonexistent.json"],
])
def test_errors_exit_2(tmp_path, grid_off, capsys, args):
    args = [a.format(mesh=grid_off[1], tmp=tmp_path) for a in args]
    assert main(args) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_mesh_file(tmp_path):
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")
    assert main(["geodesic", "--mesh", str(bad), "--source", "0", "--out", str(tmp_path / "x.csv")]) == 2


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_filter_demo(tmp_path, capsys):
    assert main(["filter-demo", "--out-dir", str(tmp_path)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["vertical_ratio"] >= 2 and res["horizontal_ratio"] >= 2
    assert (tmp_path / "responses.ply").exists() and (tmp_path / "metrics.csv").exists()


def _config(tmp_path, extra):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**TINY, **extra}))
    return str(p)


@needs_mnist
def test_train_mnist(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train-mnist", "--config", _config(tmp_path, {}), "--out-dir", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0 <= res["accuracy"] <= 1
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0] == "iteration,loss,accuracy" and len(rows) == 3
    net = load_checkpoint(out / "model.ptcn")
    assert net.layers[0].params["weights"].shape == (1, 2, 24)


@needs_mnist
def test_eval_transfer(tmp_path, capsys):
    cfg = _config(tmp_path, {"train_surfaces": ["bump_a", "wave"], "test_surface": "unseen"})
    assert main(["eval-transfer", "--config", cfg, "--out-dir", str(tmp_path / "t")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert np.isclose(res["drop"], res["in_domain"] - res["transfer"])
    assert (tmp_path / "t" / "transfer.csv").exists()


@needs_mnist
def test_singularity_study(tmp_path, capsys):
    cfg = _config(tmp_path, {"field_sets": {"A": ["corner"], "B": ["center", "corner"]}, "seeds": [0]})
    assert main(["singularity-study", "--config", cfg, "--out-dir", str(tmp_path / "s")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert set(res["mean"]) == {"A", "B"} and res["flagged_faces"]["B"] >= res["flagged_faces"]["A"]
    assert (tmp_path / "s" / "summary.csv").read_text().startswith("field_set,mean_accuracy,flagged_faces")


def test_console_module(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ptconv.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("geodesic", "frames", "train-mnist", "eval-transfer", "filter-demo", "singularity-study"):
        assert cmd in r.stdout


CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)) if os.path.isdir(CONFIG_DIR) else [])
def test_shipped_configs_parse(name):
    from ptconv.experiments import TRANSFER_SURFACES, load_config, make_mesh
    from ptconv.net import TrainConfig

    cfg = load_config(os.path.join(CONFIG_DIR, name))
    TrainConfig.from_dict(cfg.get("train", {}))
    for s in [cfg.get("surface")] + cfg.get("train_surfaces", []) + [cfg.get("test_surface")]:
        if s is not None:
            assert make_mesh(s).n_vertices > 0
    assert set(TRANSFER_SURFACES) >= {s for s in cfg.get("train_surfaces", []) if isinstance(s, str)}
