"""Polytope primitives: redundancy, centers, facets, projection."""

import numpy as np
import pytest

from lmpspike.errors import InfeasibleError
from lmpspike.polytope import Polytope, box_polytope, fourier_motzkin


def unit_square():
    return box_polytope([0.0, 0.0], [1.0, 1.0])


def test_chebyshev_of_square():
    center, radius = unit_square().chebyshev()
    assert np.allclose(center, [0.5, 0.5], atol=1e-9)
    assert abs(radius - 0.5) < 1e-9


def test_contains():
    p = unit_square()
    assert p.contains([0.5, 0.5])
    assert p.contains([1.0, 1.0])  # boundary counts
    assert not p.contains([1.1, 0.5])


def test_redundancy_removal_drops_slack_row():
    p = unit_square()
    loose = Polytope(np.vstack([p.G, [[1.0, 0.0]]]),
                     np.concatenate([p.w, [5.0]]))
    minimal = loose.remove_redundancy()
    assert minimal.n_rows == 4


def test_duplicate_rows_collapse():
    p = Polytope(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0],
                           [0.0, 1.0], [0.0, -1.0]]),
                 np.array([1.0, 1.0, 0.0, 1.0, 0.0]))
    assert p.remove_redundancy().n_rows == 4


def test_empty_detection():
    p = Polytope(np.array([[1.0], [-1.0]]), np.array([1.0, -2.0]))
    assert p.is_empty()
    assert not Polytope(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0])).is_empty()


def test_facet_point_lies_on_facet():
    p = unit_square().remove_redundancy()
    for i in range(p.n_rows):
        fp = p.facet_point(i)
        assert fp is not None
        assert abs(p.G[i] @ fp - p.w[i]) < 1e-9
        assert p.contains(fp, tol=1e-9)


def test_support_and_bounding_box():
    p = unit_square()
    assert abs(p.support([1.0, 1.0]) - 2.0) < 1e-9
    lo, hi = p.bounding_box()
    assert np.allclose(lo, [0.0, 0.0], atol=1e-9)
    assert np.allclose(hi, [1.0, 1.0], atol=1e-9)


def test_projection_of_a_cube_is_a_square():
    cube = box_polytope([0.0] * 3, [1.0] * 3)
    G, w = fourier_motzkin(cube.G, cube.w, eliminate=[2])
    sq = Polytope.from_rows(G, w)
    assert sq.dim == 2
    lo, hi = sq.bounding_box()
    assert np.allclose(lo, [0.0, 0.0], atol=1e-9)
    assert np.allclose(hi, [1.0, 1.0], atol=1e-9)


def test_projection_couples_variables():
    # {(x, t): 0 <= t <= 1, t <= x <= t + 1} projects to 0 <= x <= 2
    A = np.array([[0.0, -1.0], [0.0, 1.0], [-1.0, 1.0], [1.0, -1.0]])
    b = np.array([0.0, 1.0, 0.0, 1.0])
    G, w = fourier_motzkin(A, b, eliminate=[1])
    p = Polytope.from_rows(G, w)
    lo, hi = p.bounding_box()
    assert abs(lo[0] - 0.0) < 1e-9 and abs(hi[0] - 2.0) < 1e-9


def test_projection_of_empty_set_raises():
    A = np.array([[1.0, 0.0], [-1.0, 0.0]])
    b = np.array([1.0, -2.0])
    with pytest.raises(InfeasibleError):
        fourier_motzkin(A, b, eliminate=[1])


def test_roundtrip_dict():
    p = unit_square()
    q = Polytope.from_dict(p.to_dict())
    assert np.array_equal(p.G, q.G) and np.array_equal(p.w, q.w)
