import numpy as np
import pytest

from reachkit.geometry import Ellipsoid, ellipsoid_volume
from reachkit.lipschitz import (LipschitzModelInfo, LipschitzOverflow, lipschitz_propagate,
                                lipschitz_step, tube_to_dict)


def di_residual_info(controls, L=(1.0, 1.0, 0.0, 0.0)):
    """True double-integrator residual ``g(x) = [v, u_k]`` with ``h`` the identity."""
    controls = np.asarray(controls, dtype=float)

    def g(x, k):
        u = np.broadcast_to(controls[k], x.shape[:-1] + (2,))
        return np.concatenate([x[..., 2:4], u], axis=-1)

    return LipschitzModelInfo(np.eye(4), np.zeros(4), g, np.asarray(L))


def sample_in(e, m, rng):
    g = rng.normal(size=(m, e.dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random((m, 1)) ** (1.0 / e.dim)
    lam, vecs = np.linalg.eigh(e.shape)
    return e.center + (r * g) @ (vecs * np.sqrt(lam)).T


class TestStep:
    def test_affine_exact(self, rng):
        A = rng.normal(size=(3, 3))
        Q0 = A @ A.T
        info = LipschitzModelInfo(np.eye(3), [1.0, -2.0, 0.5], lambda x, k: np.zeros_like(x), np.zeros(3))
        e = lipschitz_step(info, Ellipsoid(np.ones(3), Q0))
        np.testing.assert_allclose(e.shape, Q0)
        np.testing.assert_allclose(e.center, [2.0, -1.0, 1.5])

    def test_scalar_hand_value(self):
        info = LipschitzModelInfo(np.eye(1), np.zeros(1), lambda x, k: np.zeros_like(x), [1.0])
        e = lipschitz_step(info, Ellipsoid([0.0], [[1.0]]))
        np.testing.assert_allclose(e.shape, [[4.0]])
        e_lit = lipschitz_step(info, Ellipsoid([0.0], [[1.0]]), paper_literal=True)
        np.testing.assert_allclose(e_lit.shape, [[4.0]])

    def test_radius_conventions_differ(self):
        info = LipschitzModelInfo(np.eye(1), np.zeros(1), lambda x, k: np.zeros_like(x), [1.0])
        sound = lipschitz_step(info, Ellipsoid([0.0], [[0.25]]))
        literal = lipschitz_step(info, Ellipsoid([0.0], [[0.25]]), paper_literal=True)
        # radius 0.5 vs 0.25: trace rule gives (sqrt(q1) + sqrt(q2))^2 in 1-D
        np.testing.assert_allclose(sound.shape, [[1.0]])
        np.testing.assert_allclose(literal.shape, [[0.5 ** 2 + 0.25 ** 2 + 2 * 0.5 * 0.25]])

    def test_containment(self, rng):
        info = di_residual_info(rng.uniform(-0.1, 0.1, size=(1, 2)))
        e = Ellipsoid(rng.normal(size=4), 1e-3 * np.diag([10.0, 10.0, 2.0, 2.0]))
        pts = sample_in(e, 10_000, rng)
        e1 = lipschitz_step(info, e)
        assert np.all(e1.contains(info(pts, 0)))

    def test_dimension_mismatch(self):
        info = LipschitzModelInfo(np.eye(2), np.zeros(2), lambda x, k: 0 * x, [1.0, 1.0])
        with pytest.raises(ValueError):
            lipschitz_step(info, Ellipsoid([0.0], [[1.0]]))

    def test_invalid_info(self):
        with pytest.raises(ValueError):
            LipschitzModelInfo(np.eye(2), np.zeros(2), lambda x, k: 0 * x, [1.0, -1.0])
        with pytest.raises(ValueError):
            LipschitzModelInfo(np.eye(2), np.zeros(2), lambda x, k: 0 * x, [1.0])


class TestPropagate:
    def test_identity_tube(self):
        info = LipschitzModelInfo(np.eye(2), np.zeros(2), lambda x, k: np.zeros_like(x), np.zeros(2))
        e0 = Ellipsoid([1.0, 2.0], np.diag([0.5, 2.0]))
        for e in lipschitz_propagate(info, e0, 4):
            np.testing.assert_array_equal(e.shape, e0.shape)
            np.testing.assert_array_equal(e.center, e0.center)

    def test_point_start_tracks_nominal(self):
        controls = np.array([[0.1, 0.0], [0.0, -0.1], [0.05, 0.05]])
        info = di_residual_info(controls, L=np.zeros(4))
        x = np.array([1.0, -1.0, 0.2, 0.3])
        tube = lipschitz_propagate(info, Ellipsoid(x, np.zeros((4, 4))), 3)
        for k, e in enumerate(tube[1:]):
            x = info(x, k)
            np.testing.assert_allclose(e.center, x)
            np.testing.assert_array_equal(e.shape, 0.0)

    def test_sampled_trajectories_contained(self, rng):
        controls = rng.uniform(-0.1, 0.1, size=(5, 2))
        info = di_residual_info(controls)
        e0 = Ellipsoid(rng.uniform(-5, 5, 4), 1e-3 * np.diag([10.0, 10.0, 2.0, 2.0]))
        tube = lipschitz_propagate(info, e0, 5)
        x = sample_in(e0, 1000, rng)
        for k in range(5):
            x = info(x, k)
            assert np.all(tube[k + 1].contains(x))

    def test_monotone_in_lipschitz_constants(self, rng):
        controls = rng.uniform(-0.1, 0.1, size=(4, 2))
        e0 = Ellipsoid(np.zeros(4), 1e-2 * np.eye(4))
        small = lipschitz_propagate(di_residual_info(controls, (1, 1, 0, 0)), e0, 4)
        big = lipschitz_propagate(di_residual_info(controls, (1.5, 1, 0.2, 0)), e0, 4)
        for a, b in zip(small[1:], big[1:]):
            assert ellipsoid_volume(b) >= ellipsoid_volume(a)

    def test_overflow_reports_step(self):
        info = LipschitzModelInfo(np.eye(1), np.zeros(1), lambda x, k: np.zeros_like(x), [1e200])
        with pytest.raises(LipschitzOverflow) as err:
            lipschitz_propagate(info, Ellipsoid([0.0], [[1.0]]), 5)
        assert err.value.step == 0

    def test_json(self):
        info = LipschitzModelInfo(np.eye(1), np.zeros(1), lambda x, k: np.zeros_like(x), [1.0])
        doc = tube_to_dict(lipschitz_propagate(info, Ellipsoid([0.0], [[1.0]]), 2))
        assert doc["horizon"] == 2 and len(doc["steps"]) == 3
