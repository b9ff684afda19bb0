import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randaudit.rng import derive_stream
from randaudit.subspace import (L2, LINF, GridSpec, Subspace, brute_force_count, grid_coords,
                                grid_size, iter_grid_chunks, lift, make_basis, project_coords,
                                sample_coords, vector_norm)


def test_basis_k1_is_normalized_first_draw():
    v = derive_stream(3).gaussians(5)
    sub = make_basis(derive_stream(3), 1, 5)
    assert np.allclose(sub.basis[0], v / np.linalg.norm(v), atol=0, rtol=1e-15)


def test_basis_orthonormal():
    assert make_basis(derive_stream(0), 2, 2).orthonormality_error() < 1e-6
    for seed in range(100):
        sub = make_basis(derive_stream(seed, [("basis", 6)]), 6, 3072)
        assert sub.basis.shape == (6, 3072)
        assert sub.orthonormality_error() < 1e-6


def test_basis_validation():
    with pytest.raises(ValueError):
        make_basis(derive_stream(0), 3, 2)
    with pytest.raises(ValueError):
        make_basis(derive_stream(0), 0, 2)


def test_gridspec_validation():
    for bins in (1, 2, 4):
        with pytest.raises(ValueError):
            GridSpec(bins, 0.5)
    with pytest.raises(ValueError):
        GridSpec(3, 0.0)
    with pytest.raises(ValueError):
        GridSpec(3, 0.5, "l1")


def test_grid_examples():
    g = grid_coords(GridSpec(3, 0.5, L2), 1)
    assert g[:, 0].tolist() == [-0.5, 0.0, 0.5]
    g = grid_coords(GridSpec(3, 1.0, L2), 2)
    assert sorted(map(tuple, g.tolist())) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]
    assert grid_size(GridSpec(51, 0.5, LINF), 2) == 2601


def test_grid_row_major_order():
    g = grid_coords(GridSpec(3, 1.0, LINF), 2)
    assert g.tolist()[:4] == [[-1, -1], [-1, 0], [-1, 1], [0, -1]]


def test_grid_chunks_concatenate_to_full():
    spec = GridSpec(9, 0.5, L2)
    small = np.concatenate(list(iter_grid_chunks(spec, 3, chunk=7)))
    assert np.array_equal(small, grid_coords(spec, 3))


@pytest.mark.parametrize("k,b", [(1, 1001), (2, 51), (3, 21), (4, 11), (5, 9), (6, 9)])
def test_count_law(k, b):
    assert grid_size(GridSpec(b, 0.5, LINF), k) == b ** k
    spec = GridSpec(b, 0.5, L2)
    assert grid_size(spec, k) == brute_force_count(spec, k)


def test_grid_cap():
    with pytest.raises(ValueError):
        grid_coords(GridSpec(201, 0.5), 4)
    with pytest.raises(ValueError):
        grid_size(GridSpec(11, 0.5, LINF), 3, cap=1000)


def test_grid_symmetric_under_negation():
    g = grid_coords(GridSpec(11, 0.5, L2), 3)
    assert set(map(tuple, g.tolist())) == set(map(tuple, (-g + 0.0).tolist()))


@pytest.mark.parametrize("norm", [L2, LINF])
def test_samples_inside_ball(norm):
    spec = GridSpec(5, 0.5, norm)
    c = sample_coords(spec, 3, 10**5, derive_stream(1))
    assert np.all(vector_norm(c, norm, axis=1) <= 0.5)
    again = sample_coords(spec, 3, 10**5, derive_stream(1))
    assert np.array_equal(c, again)


def test_sample_radius_1d():
    c = sample_coords(GridSpec(5, 0.5, L2), 1, 10**5, derive_stream(2))
    assert abs(np.mean(np.abs(c[:, 0]) / 0.5) - 0.5) < 0.01


def test_lift_identity_and_isometry():
    sub = make_basis(derive_stream(5), 3, 10)
    anchor = np.full(10, 0.5)
    p, d = lift(sub, anchor, np.zeros(3))
    assert np.array_equal(p, anchor) and d == 0.0
    rs = derive_stream(6)
    for _ in range(20):
        c1, c2 = rs.uniforms(3) * 0.2 - 0.1, rs.uniforms(3) * 0.2 - 0.1
        p1, d1 = lift(sub, anchor, c1)
        p2, _ = lift(sub, anchor, c2)
        assert abs(np.linalg.norm(p1 - p2) - np.linalg.norm(c1 - c2)) < 1e-9
        assert abs(d1 - np.linalg.norm(c1)) < 1e-9


def test_lift_clamps():
    sub = Subspace(np.array([[np.sqrt(0.5), np.sqrt(0.5)]]))
    anchor = np.array([1.0, 0.5])
    p, d = lift(sub, anchor, np.array([0.4]))
    assert p[0] == 1.0
    assert d < 0.4
    assert d == pytest.approx(0.4 * np.sqrt(0.5))


def test_lift_batch_and_mismatch():
    sub = make_basis(derive_stream(5), 2, 4)
    anchor = np.full(4, 0.5)
    cs = np.array([[0.1, 0.0], [0.0, -0.2]])
    pts, ds = lift(sub, anchor, cs)
    assert pts.shape == (2, 4) and ds.shape == (2,)
    assert np.array_equal(pts[1], lift(sub, anchor, cs[1])[0])
    with pytest.raises(ValueError):
        lift(sub, np.zeros(3), cs[0])


def test_project_coords_examples():
    assert np.allclose(project_coords(np.array([3.0, 4.0]), 1.0, L2), [0.6, 0.8])
    assert project_coords(np.array([2.0, -0.5]), 1.0, LINF).tolist() == [1.0, -0.5]
    c = np.array([0.1, 0.2])
    assert np.array_equal(project_coords(c, 1.0, L2), c)


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0.01, 5))
def test_project_coords_feasible(vals, eps):
    c = np.array(vals)
    for norm in (L2, LINF):
        out = project_coords(c, eps, norm)
        assert vector_norm(out, norm) <= eps * (1 + 1e-12)
