import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reachkit.geometry import (AxisAlignedBox, Ellipsoid, GeometryError, box_to_ellipsoid,
                               convex_hull, ellipsoid_volume, hull_contains, hull_volume,
                               hull_volume_mc, minkowski_outer, outer_box, project_box,
                               project_ellipsoid)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _brute_force_vertices(points):
    """A point is a vertex iff it lies outside the hull of the others."""
    keep = []
    for i in range(len(points)):
        others = np.delete(points, i, axis=0)
        if not convex_hull(others).contains(points[i], tol=1e-12):
            keep.append(i)
    return points[keep]


class TestConvexHull:
    def test_unit_square(self):
        h = convex_hull(SQUARE)
        assert len(h.vertices) == 4
        assert len(h.facets) == 4
        assert hull_volume(h) == pytest.approx(1.0)

    def test_single_point(self):
        p = np.array([0.3, -0.2, 1.0])
        h = convex_hull(p[None])
        assert h.degenerate_rank == 0
        assert h.is_degenerate
        assert h.contains(p)
        assert not h.contains(p + 1e-3)

    def test_interior_points_do_not_change_vertices(self, rng):
        pts = np.vstack([rng.random((100, 2)), SQUARE])
        h = convex_hull(pts)
        expected = _brute_force_vertices(pts)
        assert sorted(map(tuple, h.vertices)) == sorted(map(tuple, expected))
        assert sorted(map(tuple, h.vertices)) == sorted(map(tuple, SQUARE))

    def test_errors(self):
        with pytest.raises(ValueError):
            convex_hull(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            convex_hull([[0.0, 1.0], [1.0]])

    def test_segment_in_plane(self):
        h = convex_hull([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
        assert h.degenerate_rank == 1
        assert h.contains([0.25, 0.25])
        assert not h.contains([0.25, 0.3])
        assert not h.contains([1.5, 1.5])

    def test_flat_cloud_in_3d(self, rng):
        pts = np.c_[rng.random((30, 2)), np.zeros(30)]
        h = convex_hull(pts)
        assert h.degenerate_rank == 2
        assert np.all(h.contains(pts))
        assert not h.contains(pts.mean(axis=0) + [0, 0, 1e-3])
        with pytest.raises(GeometryError):
            hull_volume(h)


class TestContains:
    def test_examples(self):
        h = convex_hull(SQUARE)
        assert h.contains([0.5, 0.5])
        assert hull_contains(h, [1.0 + 1e-12, 0.5], tol=1e-9)
        assert not h.contains([2.0, 0.0])

    def test_batch(self):
        h = convex_hull(SQUARE)
        out = h.contains(np.array([[0.5, 0.5], [2.0, 0.0]]))
        assert out.tolist() == [True, False]

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            convex_hull(SQUARE).contains([0.1, 0.1, 0.1])


class TestVolume:
    def test_cube(self):
        corners = np.array(np.meshgrid(*[[-1.5, 1.5]] * 3)).reshape(3, -1).T
        assert hull_volume(convex_hull(corners)) == pytest.approx(27.0)

    def test_disk_from_below(self):
        rng = np.random.default_rng(0)
        vols = []
        for m in (50, 500, 5000):
            r = np.sqrt(rng.random(m))
            a = 2 * np.pi * rng.random(m)
            vols.append(hull_volume(convex_hull(np.c_[r * np.cos(a), r * np.sin(a)])))
        assert all(v < math.pi for v in vols)
        assert vols[0] < vols[1] < vols[2]
        assert vols[-1] == pytest.approx(math.pi, rel=0.02)

    def test_exact_matches_monte_carlo(self):
        rng = np.random.default_rng(7)
        for n in (2, 3, 4):
            h = convex_hull(rng.normal(size=(40, n)))
            mc, se = hull_volume_mc(h, n_samples=200_000, seed=n)
            assert abs(hull_volume(h) - mc) <= 4 * se

    def test_high_dim_uses_monte_carlo(self):
        corners = np.array(np.meshgrid(*[[0.0, 1.0]] * 5)).reshape(5, -1).T
        vol, se = hull_volume(convex_hull(corners), return_stderr=True)
        assert vol == pytest.approx(1.0)
        assert se == 0.0


class TestBoxes:
    def test_outer_box_example(self):
        b = outer_box([[1, 0], [-1, 0], [0, 2]], center=[0, 0])
        np.testing.assert_allclose(b.lower, [-1, -2])
        np.testing.assert_allclose(b.upper, [1, 2])

    def test_outer_box_single_point(self):
        b = outer_box([[0.5, 0.5]], center=[0.5, 0.5])
        assert b.volume == 0.0

    def test_outer_box_contains_all(self, rng):
        pts = rng.normal(size=(1000, 3))
        b = outer_box(pts, center=rng.normal(size=3))
        assert np.all(b.contains(pts))

    def test_box_to_ellipsoid_examples(self):
        e = box_to_ellipsoid(AxisAlignedBox([-1, -1], [1, 1]), 2)
        np.testing.assert_allclose(e.shape, np.diag([2.0, 2.0]))
        assert e.mahalanobis_sq(np.array([1.0, 1.0])) == pytest.approx(1.0)
        e1 = box_to_ellipsoid(AxisAlignedBox([-2], [2]), 1)
        np.testing.assert_allclose(e1.shape, [[4.0]])

    def test_box_to_ellipsoid_contains_box(self, rng):
        box = AxisAlignedBox.from_center(rng.normal(size=3), rng.random(3) + 0.1)
        e = box_to_ellipsoid(box, 3)
        pts = box.lower + (box.upper - box.lower) * rng.random((10_000, 3))
        assert np.all(e.contains(pts, tol=1e-12))

    def test_box_to_ellipsoid_too_many_dims(self):
        with pytest.raises(GeometryError):
            box_to_ellipsoid(AxisAlignedBox([0], [1]), 2)

    def test_invalid_box(self):
        with pytest.raises(GeometryError):
            AxisAlignedBox([1.0], [0.0])


class TestEllipsoids:
    def test_volume_examples(self):
        assert ellipsoid_volume(Ellipsoid(np.zeros(2), np.eye(2))) == pytest.approx(math.pi)
        assert ellipsoid_volume(Ellipsoid(np.zeros(3), np.eye(3))) == pytest.approx(4 * math.pi / 3)

    def test_volume_monte_carlo(self):
        e = Ellipsoid(np.zeros(2), np.diag([4.0, 1.0]))
        rng = np.random.default_rng(3)
        pts = rng.uniform([-2, -1], [2, 1], size=(400_000, 2))
        mc = 8.0 * np.mean(e.contains(pts))
        assert ellipsoid_volume(e) == pytest.approx(2 * math.pi)
        assert mc == pytest.approx(2 * math.pi, rel=0.01)

    def test_volume_singular(self):
        with pytest.raises(GeometryError):
            ellipsoid_volume(Ellipsoid(np.zeros(2), np.diag([1.0, 0.0])))

    def test_minkowski_examples(self):
        np.testing.assert_allclose(minkowski_outer(np.eye(2), np.eye(2)), 4 * np.eye(2))
        np.testing.assert_allclose(minkowski_outer(np.eye(2), np.zeros((2, 2))), np.eye(2))
        np.testing.assert_allclose(minkowski_outer(np.zeros((2, 2)), np.zeros((2, 2))),
                                   np.zeros((2, 2)))

    def test_minkowski_centers_add(self):
        e = minkowski_outer(Ellipsoid([1.0, 0.0], np.eye(2)), Ellipsoid([0.0, 2.0], np.eye(2)))
        np.testing.assert_allclose(e.center, [1.0, 2.0])

    def test_minkowski_contains_sums(self, rng):
        for _ in range(10):
            a1, a2 = rng.normal(size=(2, 3, 3))
            q1, q2 = a1 @ a1.T + 0.01 * np.eye(3), a2 @ a2.T + 0.01 * np.eye(3)
            q = minkowski_outer(q1, q2)
            s1 = _sample_ellipsoid(q1, 1000, rng)
            s2 = _sample_ellipsoid(q2, 1000, rng)
            e = Ellipsoid(np.zeros(3), q)
            assert np.all(e.contains(s1 + s2, tol=1e-9))


def _sample_ellipsoid(Q, m, rng):
    """Points on the boundary of B(0, Q) (the worst case for containment)."""
    g = rng.normal(size=(m, Q.shape[0]))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    lam, vecs = np.linalg.eigh(Q)
    return g @ (vecs * np.sqrt(lam)).T


class TestProjections:
    def test_project_box_examples(self):
        box = AxisAlignedBox([-1, -1], [1, 1])
        np.testing.assert_allclose(project_box([2, -3], box), [1, -1])
        np.testing.assert_allclose(project_box([0.2, -0.4], box), [0.2, -0.4])

    def test_project_box_grid_oracle(self, rng):
        box = AxisAlignedBox([-1, -0.5], [1, 0.5])
        g = np.stack(np.meshgrid(np.linspace(-1, 1, 1001), np.linspace(-0.5, 0.5, 1001)), -1).reshape(-1, 2)
        for _ in range(5):
            z = rng.normal(scale=2, size=2)
            best = g[np.argmin(np.sum((g - z) ** 2, axis=1))]
            np.testing.assert_allclose(project_box(z, box), best, atol=2e-3)

    def test_project_ellipsoid_examples(self):
        e = Ellipsoid(np.zeros(2), np.diag([4.0, 1.0]))
        np.testing.assert_allclose(project_ellipsoid([4.0, 0.0], e), [2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(project_ellipsoid([0.0, 0.0], e), [0.0, 0.0])

    def test_project_ellipsoid_grid_oracle(self):
        e = Ellipsoid(np.zeros(2), np.diag([4.0, 1.0]))
        z = np.array([3.0, 3.0])
        t = np.linspace(0, 2 * np.pi, 1_000_000, endpoint=False)
        boundary = np.c_[2 * np.cos(t), np.sin(t)]
        best = boundary[np.argmin(np.sum((boundary - z) ** 2, axis=1))]
        np.testing.assert_allclose(project_ellipsoid(z, e), best, atol=1e-4)

    def test_project_ellipsoid_batch(self, rng):
        e = Ellipsoid(rng.normal(size=3), np.diag([1.0, 2.0, 0.5]))
        z = rng.normal(scale=3, size=(20, 3))
        batch = project_ellipsoid(z, e)
        single = np.array([project_ellipsoid(zi, e) for zi in z])
        np.testing.assert_allclose(batch, single, atol=1e-12)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=finite))
def test_project_box_idempotent(z):
    box = AxisAlignedBox([-1, 0, -2], [1, 0.5, 2])
    p = project_box(z, box)
    np.testing.assert_array_equal(project_box(p, box), p)
    assert box.contains(p)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite))
def test_project_ellipsoid_idempotent(z):
    e = Ellipsoid([0.5, -0.5], np.array([[2.0, 0.3], [0.3, 1.0]]))
    p = project_ellipsoid(z, e)
    assert e.contains(p, tol=1e-9)
    np.testing.assert_allclose(project_ellipsoid(p, e), p, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(5, 40))
def test_hull_monotone_and_inner(seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(m + 10, 2))
    small, big = convex_hull(pts[:m]), convex_hull(pts)
    assert np.all(big.contains(small.vertices))
    assert hull_volume(small) <= hull_volume(big) + 1e-12
    # inner approximation of the sampling box
    assert hull_volume(big) <= 4.0
