import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import io as spio
from scipy import sparse

from ptconv.geodesic import fast_marching, local_distances
from ptconv.kernel import (
    CoverageWarning,
    EmptyNeighborhoodError,
    KernelTemplate,
    assemble,
    build_basis,
    edge_detector_template,
    export_matrix_market,
    gaussian_template,
    load_template,
    polar_weights,
    save_template,
)
from ptconv.mesh import mass_matrix
from ptconv.transport import build_frames

from conftest import flat_grid


def _constant_basis(n=20, radius_h=3.0, n_r=3, n_theta=8, coverage=None):
    m = flat_grid(n)
    f = fast_marching(m, np.flatnonzero(np.isclose(m.uv[:, 0], 0)))
    h = 1 / (n - 1)
    cov = None if coverage is None else coverage * h
    return m, build_basis(m, build_frames(m, f), f, radius=radius_h * h, n_r=n_r, n_theta=n_theta, coverage=cov)


@pytest.fixture(scope="module")
def flat_basis():
    return _constant_basis()


@pytest.fixture(scope="module")
def bump_basis(bump20):
    f = fast_marching(bump20, [0])
    return build_basis(bump20, build_frames(bump20, f), f)


# polar interpolation ---------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(-10, 10), st.integers(1, 5), st.integers(1, 12))
def test_polar_weights_partition_of_unity(r, phi, n_r, n_theta):
    rows, bins, w = polar_weights(np.array([r]), np.array([phi]), 1.0, n_r, n_theta)
    assert np.isclose(w.sum(), 1.0, atol=1e-12)
    assert np.all(w > 0) and np.all((bins >= 0) & (bins < n_r * n_theta))


def test_polar_weights_outside_and_nodes():
    rows, _, _ = polar_weights(np.array([1.5]), np.array([0.0]), 1.0, 3, 8)
    assert rows.size == 0
    t = KernelTemplate(0, 1.0, 3, 8, np.arange(24.0))
    rr, pp = np.meshgrid(t.radial_nodes, t.angular_nodes, indexing="ij")
    # a template evaluated at its own nodes returns its weights
    assert np.allclose(t.evaluate(rr.ravel(), pp.ravel()), np.arange(24.0), atol=1e-12)
    # centre spreads evenly over the first ring
    assert np.isclose(t.evaluate([0.0], [0.0])[0], np.arange(8.0).mean())


def test_template_validation(tmp_path):
    with pytest.raises(ValueError):
        KernelTemplate(0, 0.0, 3, 8)
    with pytest.raises(ValueError):
        KernelTemplate(0, 1.0, 0, 8)
    with pytest.raises(ValueError):
        KernelTemplate(0, 1.0, 1, 2, [np.nan, 0])
    t = gaussian_template(0.7, 3, 8, stretch=2.0, anchor=4)
    p = tmp_path / "t.json"
    save_template(t, p)
    back = load_template(p)
    assert back.anchor == 4 and back.radius == 0.7 and np.array_equal(back.weights, t.weights)


# basis -------------------------------------------------------------------------

def _row_signature(m, basis, x, W):
    lo, hi = basis.indptr[x], basis.indptr[x + 1]
    off = np.round((m.vertices[basis.indices[lo:hi]] - m.vertices[x])[:, :2] * (m.grid_shape[0] - 1)).astype(int)
    return {tuple(o): W[lo + k].toarray().ravel() for k, o in enumerate(off)}


def test_flat_rows_are_translates(flat_basis):
    m, B = flat_basis
    W = B.interpolation()
    x0 = m.nearest_vertex_uv(0.5, 0.5)
    ref = _row_signature(m, B, x0, W)
    for x in (m.nearest_vertex_uv(0.3, 0.6), m.nearest_vertex_uv(0.7, 0.25)):
        sig = _row_signature(m, B, x, W)
        assert sig.keys() == ref.keys()
        assert all(np.allclose(sig[k], ref[k], atol=1e-12) for k in ref)


def test_single_bin_is_indicator():
    m, B = _constant_basis(n_r=1, n_theta=1)
    S = B.bin_matrix(0)
    h = 1 / 19
    for x in range(0, m.n_vertices, 37):
        d = np.linalg.norm(m.vertices - m.vertices[x], axis=1)
        disc = np.flatnonzero(d <= 3 * h * (1 + 1e-12))
        row = S.getrow(x)
        assert sorted(row.indices.tolist()) == disc.tolist()
        assert np.allclose(row.data, 1.0)


def test_partition_of_unity(bump_basis):
    W = bump_basis.interpolation()
    total = np.asarray(W.sum(axis=1)).ravel()
    inside = bump_basis.r < bump_basis.radius * (1 - 1e-9)
    assert np.allclose(total[inside], 1.0, atol=1e-12)


def test_sphere_support_matches_brute_force(sphere3):
    f = fast_marching(sphere3, [0])
    B = build_basis(sphere3, build_frames(sphere3, f), f, radius=0.3)
    for x in range(0, sphere3.n_vertices, 41):
        d = fast_marching(sphere3, [x]).distance
        assert sorted(B.neighborhood(x).tolist()) == np.flatnonzero(d <= 0.3).tolist()


def test_support_within_radius(bump_basis, bump20):
    L = local_distances(bump20, bump_basis.radius)
    for x in range(0, bump20.n_vertices, 13):
        assert np.all(L[x, bump_basis.neighborhood(x)].toarray() <= bump_basis.radius * (1 + 1e-9))


def test_empty_neighbourhood():
    m = flat_grid(6)
    f = fast_marching(m, [0])
    with pytest.raises(EmptyNeighborhoodError) as exc:
        build_basis(m, build_frames(m, f), f, radius=0.01)
    assert len(exc.value.vertices) == m.n_vertices


def test_stacked_matches_bins(bump_basis):
    S = bump_basis.stacked(1.25, 0.4)
    n = bump_basis.n_vertices
    for b in (0, 5, bump_basis.n_bins - 1):
        block = S[b * n:(b + 1) * n]
        assert abs(block - bump_basis.bin_matrix(b, 1.25, 0.4)).max() == 0


# assembly ----------------------------------------------------------------------

def _rand_template(basis, seed):
    rng = np.random.default_rng(seed)
    return KernelTemplate(basis.anchor, basis.radius, basis.n_r, basis.n_theta, rng.normal(size=basis.n_bins))


def test_identity_transform(bump_basis):
    t = _rand_template(bump_basis, 0)
    K = assemble(bump_basis, t).stencil
    ref = sum(w * bump_basis.bin_matrix(b) for b, w in enumerate(t.weights.ravel()))
    assert abs(K - ref).max() <= 1e-15


def test_angle_wrap(bump_basis):
    t = _rand_template(bump_basis, 1)
    a = assemble(bump_basis, t, angle=0.0).stencil
    b = assemble(bump_basis, t, angle=2 * np.pi).stencil
    assert abs(a - b).max() <= 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0.5, 2.0), st.floats(-7, 7))
def test_linear_in_weights(bump_basis, seed, s, theta):
    t1, t2 = _rand_template(bump_basis, seed), _rand_template(bump_basis, seed + 1)
    t12 = KernelTemplate(t1.anchor, t1.radius, t1.n_r, t1.n_theta, t1.weights + t2.weights)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        k1, k2, k12 = (assemble(bump_basis, t, s, theta).stencil for t in (t1, t2, t12))
    assert abs(k12 - (k1 + k2)).max() <= 1e-12 * max(1.0, abs(k12).max())
    # pattern fixed by the basis
    assert np.array_equal(k12.indices, bump_basis.indices) and np.array_equal(k12.indptr, bump_basis.indptr)


def test_anchor_fidelity(bump_basis):
    t = _rand_template(bump_basis, 2)
    K = assemble(bump_basis, t).stencil
    x0 = bump_basis.anchor
    lo, hi = bump_basis.indptr[x0], bump_basis.indptr[x0 + 1]
    expect = t.evaluate(bump_basis.r[lo:hi], bump_basis.phi[lo:hi])
    assert np.allclose(K.getrow(x0).toarray().ravel()[bump_basis.indices[lo:hi]], expect, atol=1e-14)


def test_matrix_orientation(bump_basis):
    t = _rand_template(bump_basis, 3)
    K = assemble(bump_basis, t)
    assert abs(K.matrix - K.stencil.T).max() == 0


def test_sparsity_bound(bump_basis):
    K = assemble(bump_basis, _rand_template(bump_basis, 4)).stencil
    assert K.nnz <= bump_basis.n_vertices * np.diff(bump_basis.indptr).max()


def test_rotation_oracle():
    # anisotropic Gaussian rotated by 90 degrees against the analytic rotated kernel
    n = 41
    h = 1 / (n - 1)
    m = flat_grid(n)
    f = fast_marching(m, np.flatnonzero(np.isclose(m.uv[:, 0], 0)))
    delta = 5 * h
    B = build_basis(m, build_frames(m, f), f, radius=delta, n_r=8, n_theta=32)
    sigma = delta / 2
    t = gaussian_template(delta, 8, 32, sigma=sigma, stretch=2.0)
    x = m.nearest_vertex_uv(0.5, 0.5)
    row = assemble(B, t, angle=np.pi / 2).stencil.getrow(x)
    d = m.vertices[row.indices] - m.vertices[x]
    # rotating by 90 degrees swaps the stretched axis onto b2
    oracle = np.exp(-(d[:, 0] ** 2 + (d[:, 1] / 2.0) ** 2) / (2 * sigma**2))
    assert np.abs(row.data - oracle).max() <= 5e-2 * oracle.max()
    # and differs clearly from the unrotated kernel
    unrot = np.exp(-((d[:, 0] / 2.0) ** 2 + d[:, 1] ** 2) / (2 * sigma**2))
    assert np.abs(unrot - oracle).max() > 0.2


def test_reflection_is_half_turn(bump_basis):
    t = _rand_template(bump_basis, 5)
    a = assemble(bump_basis, t, scale=-1.0).stencil
    b = assemble(bump_basis, t, scale=1.0, angle=np.pi).stencil
    assert abs(a - b).max() <= 1e-12


def test_coverage_warning():
    m, B = _constant_basis()
    t = gaussian_template(B.radius, 3, 8)
    with pytest.warns(CoverageWarning, match="75.0%"):
        assemble(B, t, scale=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CoverageWarning)
        assemble(B, t, scale=2.0)
    m2, B2 = _constant_basis(coverage=6.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CoverageWarning)
        K = assemble(B2, t, scale=0.5).stencil
    # half scale doubles the reach: rows now see twice the radius
    x = m2.nearest_vertex_uv(0.5, 0.5)
    assert np.isclose(np.linalg.norm(m2.vertices[K.getrow(x).indices] - m2.vertices[x], axis=1).max(), 6 / 19)
    with pytest.raises(ValueError):
        assemble(B, t, scale=0.0)


def test_grid_mismatch(bump_basis):
    with pytest.raises(ValueError):
        assemble(bump_basis, KernelTemplate(0, 1.0, 2, 8))


def test_normalization(bump_basis, bump20):
    t = _rand_template(bump_basis, 6)
    K = assemble(bump_basis, t, normalize=True)
    M = mass_matrix(bump20).weights
    l1 = abs(K.stencil) @ M
    assert np.allclose(l1, l1[bump_basis.anchor], rtol=1e-9)
    assert K.normalization is not None and K.normalization[bump_basis.anchor] == 1.0
    assert np.array_equal(K.stencil.indices, bump_basis.indices)


# edge detector -------------------------------------------------------------------

@pytest.mark.parametrize("n_theta", [8, 12, 16])
def test_edge_template_odd_zero_mean(n_theta):
    a = edge_detector_template(0.0, 1.0, 3, n_theta)
    b = edge_detector_template(np.pi, 1.0, 3, n_theta)
    assert np.allclose(a.weights, -b.weights, atol=1e-15)
    assert abs(np.sum(a.weights * a.bin_areas())) <= 1e-12
    with pytest.raises(ValueError):
        edge_detector_template(0.0, 1.0, 3, 6)


def test_edge_template_step_response():
    from scipy.signal import correlate2d

    n = 32
    m, B = _constant_basis(n=n)
    img = (m.uv[:, 0] >= 0.5).astype(float)
    t = edge_detector_template(0.0, B.radius, 3, 8)
    M = mass_matrix(m).weights
    resp = (assemble(B, t).stencil @ (M * img)).reshape(n, n)
    # dense oracle: cross-correlate with the template sampled at grid offsets
    h = 1 / (n - 1)
    R = 3
    stencil = np.zeros((2 * R + 1, 2 * R + 1))
    for dj in range(-R, R + 1):
        for di in range(-R, R + 1):
            r = np.hypot(di, dj) * h
            if r <= B.radius * (1 + 1e-9):
                stencil[dj + R, di + R] = t.evaluate([r], [np.arctan2(dj, di)])[0]
    ref = correlate2d((M * img).reshape(n, n), stencil, mode="same")
    inner = (slice(R, n - R), slice(R, n - R))
    assert np.abs(resp - ref)[inner].max() <= 1e-12 * np.abs(ref).max()
    col = np.flatnonzero(np.isclose(m.uv[:n, 0], 0.5, atol=0.6 * h))
    a = np.abs(resp[inner])
    cols = np.arange(n)[R:n - R]
    on = np.isin(cols, np.arange(col.min() - 1, col.max() + 2))
    assert a[:, on].max() >= 2 * a[:, ~on].max()
    assert np.argmax(a.max(axis=0)) in np.flatnonzero(on)


def test_matrix_market_export(tmp_path, bump_basis):
    K = assemble(bump_basis, _rand_template(bump_basis, 7))
    p = tmp_path / "k.mtx"
    export_matrix_market(K, p)
    back = sparse.csr_matrix(spio.mmread(str(p)))
    assert abs(back - K.matrix).max() <= 1e-14
