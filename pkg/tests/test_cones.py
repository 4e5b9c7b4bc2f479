"""Cone projections and their Jacobians."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from voltreg.conic.cones import ConeSpec, DimensionError, dproject_cone, in_cone, project_cone

SOC3 = ConeSpec(0, 0, (3,))
MIXED = ConeSpec(2, 3, (3, 4, 2))

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=MIXED.total_dim,
                   max_size=MIXED.total_dim).map(np.array)


def _soc_distance_minimizer(v):
    """Projection onto the 3-dim SOC by a generic constrained minimizer."""
    cons = [{"type": "ineq", "fun": lambda u: u[0] - np.linalg.norm(u[1:])}]
    res = minimize(lambda u: np.sum((u - v) ** 2), x0=np.array([5.0, 0.0, 0.0]),
                   constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    return res.x


def _blocks(cones):
    off = cones.zero_dim + cones.nonneg_dim
    for d in cones.soc_dims:
        yield slice(off, off + d)
        off += d


def test_soc_inside_point_is_fixed():
    assert np.array_equal(project_cone(np.array([1.0, 0.0, 0.0]), SOC3), [1.0, 0.0, 0.0])


def test_soc_polar_point_goes_to_origin():
    assert np.array_equal(project_cone(np.array([-2.0, 1.0, 0.0]), SOC3), [0.0, 0.0, 0.0])


def test_soc_boundary_case_against_minimizer():
    v = np.array([0.0, 3.0, 4.0])
    ref = _soc_distance_minimizer(v)
    np.testing.assert_allclose(ref, [2.5, 1.5, 2.0], atol=1e-5)
    np.testing.assert_allclose(project_cone(v, SOC3), [2.5, 1.5, 2.0], atol=1e-14)


def test_zero_block_primal_and_dual():
    cones = ConeSpec(2, 0, ())
    v = np.array([3.0, -1.0])
    assert np.array_equal(project_cone(v, cones), [0.0, 0.0])
    assert np.array_equal(project_cone(v, cones, dual=True), v)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        project_cone(np.zeros(4), SOC3)


def test_cone_spec_rejects_small_soc():
    with pytest.raises(ValueError):
        ConeSpec(0, 0, (1,))


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_projection_idempotent(v):
    p = project_cone(v, MIXED)
    np.testing.assert_allclose(project_cone(p, MIXED), p, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_moreau_decomposition(v):
    # K* = K for nonneg and SOC, the polar of {0} is everything
    primal = project_cone(v, MIXED)
    polar = -project_cone(-v, MIXED, dual=True)
    np.testing.assert_allclose(primal + polar, v, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_complementarity_per_block(v):
    p = project_cone(v, MIXED)
    r = v - p
    z, nn = MIXED.zero_dim, MIXED.nonneg_dim
    assert abs(r[z:z + nn] @ p[z:z + nn]) <= 1e-10
    for blk in _blocks(MIXED):
        assert abs(r[blk] @ p[blk]) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_projection_lands_in_cone(v):
    assert in_cone(project_cone(v, MIXED), MIXED, tol=1e-10)


def test_nonneg_jacobian_is_active_set():
    dpi = dproject_cone(np.array([3.0, -2.0]), ConeSpec(0, 2, ()))
    np.testing.assert_array_equal(dpi.to_dense(), np.diag([1.0, 0.0]))


def test_soc_jacobian_inside_is_identity():
    dpi = dproject_cone(np.array([2.0, 0.3, -0.5]), SOC3)
    np.testing.assert_array_equal(dpi.to_dense(), np.eye(3))


def _fd_jacobian(v, cones, h=1e-6, dual=False):
    cols = []
    for i in range(len(v)):
        e = np.zeros(len(v))
        e[i] = h
        cols.append((project_cone(v + e, cones, dual) - project_cone(v - e, cones, dual)) / (2 * h))
    return np.array(cols).T


def test_soc_jacobian_matches_fd_at_example_point():
    v = np.array([0.0, 3.0, 4.0])
    J = dproject_cone(v, SOC3).to_dense()
    assert np.abs(J - _fd_jacobian(v, SOC3)).max() <= 1e-5


def test_jacobian_matches_fd_at_random_points():
    rng = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    while checked < 100:
        v = rng.standard_normal(MIXED.total_dim) * 2
        # stay away from the nondifferentiable set
        z, nn = MIXED.zero_dim, MIXED.nonneg_dim
        if np.min(np.abs(v[z:z + nn])) < 1e-3:
            continue
        if any(abs(np.linalg.norm(v[b][1:]) - abs(v[b][0])) < 1e-3 for b in _blocks(MIXED)):
            continue
        for dual in (False, True):
            J = dproject_cone(v, MIXED, dual).to_dense()
            fd = _fd_jacobian(v, MIXED, dual=dual)
            worst = max(worst, np.linalg.norm(J - fd) / max(np.linalg.norm(fd), 1e-12))
        checked += 1
    assert worst <= 1e-4


def test_jacobian_apply_matches_dense_on_batches():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(MIXED.total_dim)
    dpi = dproject_cone(v, MIXED, dual=True)
    U = rng.standard_normal((5, MIXED.total_dim))
    np.testing.assert_allclose(dpi.apply(U), U @ dpi.to_dense().T, atol=1e-14)
    np.testing.assert_allclose(dpi.to_dense(), dpi.to_dense().T, atol=1e-14)
