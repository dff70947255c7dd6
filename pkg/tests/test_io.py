import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptconv.io import load_mesh, load_signal, save_mesh, save_ply, save_signal
from ptconv.mesh import IndexRangeError, ParseError, icosahedron, icosphere

from conftest import bump_grid


def test_off_single_triangle(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    m = load_mesh(p)
    assert m.n_faces == 1 and len(m.boundary_edges) == 3


def test_obj_icosahedron(tmp_path):
    v, f = icosahedron()
    lines = [f"v {a} {b} {c}" for a, b, c in v] + [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f]
    p = tmp_path / "ico.obj"
    p.write_text("\n".join(lines))
    m = load_mesh(p)
    assert (m.n_vertices, m.n_faces, len(m.boundary_edges)) == (12, 20, 0)


def test_obj_slash_indices_and_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n")
    m = load_mesh(p)
    assert m.n_faces == 2 and np.isclose(m.surface_area, 1.0)


def test_off_index_out_of_range(tmp_path):
    p = tmp_path / "bad.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")
    with pytest.raises(IndexRangeError):
        load_mesh(p)


@pytest.mark.parametrize("text", ["", "OFF\n3 1 0\n0 0 0\n", "OFF\nx y z\n", "COFF?\n"])
def test_off_parse_errors(tmp_path, text):
    p = tmp_path / "bad.off"
    p.write_text(text)
    with pytest.raises(ParseError):
        load_mesh(p)


def test_unknown_format(tmp_path):
    p = tmp_path / "m.stl"
    p.write_text("solid")
    with pytest.raises(ParseError):
        load_mesh(p)


@pytest.mark.parametrize("fmt", ["off", "obj"])
def test_roundtrip_bitwise(tmp_path, fmt):
    m = bump_grid(7)
    p = tmp_path / f"m.{fmt}"
    save_mesh(m, p)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_ply_scalars(tmp_path):
    m = icosphere(1)
    d = np.linspace(0, 1, m.n_vertices)
    p = tmp_path / "m.ply"
    save_ply(m, p, {"distance": d})
    text = p.read_text().splitlines()
    assert "property double distance" in text
    end = text.index("end_header")
    assert float(text[end + 1].split()[3]) == d[0]
    assert text[end + m.n_vertices + 1].startswith("3 ")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(1, 4), st.sampled_from([".csv", ".bin"]), st.integers(0, 2**32 - 1))
def test_signal_roundtrip(tmp_path_factory, n, q, suffix, seed):
    vals = np.random.default_rng(seed).normal(size=(n, q))
    p = tmp_path_factory.mktemp("sig") / f"s{suffix}"
    save_signal(vals, p)
    assert np.array_equal(load_signal(p), vals)


def test_signal_binary_layout(tmp_path):
    vals = np.arange(6, dtype=np.float64).reshape(3, 2)
    p = tmp_path / "s.bin"
    save_signal(vals, p)
    raw = p.read_bytes()
    assert raw[:4] == b"PTSG"
    assert int.from_bytes(raw[4:12], "little") == 3 and int.from_bytes(raw[12:20], "little") == 2
    assert np.array_equal(np.frombuffer(raw[20:], "<f8"), np.arange(6.0))


def test_signal_bad_magic(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ParseError):
        load_signal(p)
