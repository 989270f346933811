import json

import numpy as np
import pytest

from conftest import MODEL_NAMES, central_difference, random_instance, rel_error
from reachkit.dynamics import (AdditiveLinear, DoubleIntegrator, MlpResidual, MlpWeights,
                               ParamTuple, PlanarSpacecraft, PropagationError, Spacecraft13D,
                               rollout, rollout_gradient)
from reachkit.dynamics.spacecraft import omega_matrix, skew


class TestStep:
    def test_additive_linear(self):
        assert AdditiveLinear(1).step([0.5], [-0.2]) == pytest.approx([0.3])

    def test_double_integrator(self):
        out = DoubleIntegrator().step([1, 1, 0.5, 0], [0, 0.1])
        np.testing.assert_allclose(out, [1.5, 1, 0.5, 0.1])

    def test_non_finite_inputs(self):
        with pytest.raises(ValueError):
            AdditiveLinear(1).step([np.nan], [0.0])
        with pytest.raises(ValueError):
            DoubleIntegrator().step([0, 0, 0, 0], [np.inf, 0])

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            DoubleIntegrator().step([0, 0, 0], [0, 0])

    def test_batched(self, rng):
        model = DoubleIntegrator()
        x, u = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
        np.testing.assert_allclose(model.step(x, u), np.array([model.step(a, b) for a, b in zip(x, u)]))


class TestJacobians:
    def test_additive_linear(self):
        A, B, C, D = AdditiveLinear(2).jacobians(np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(A, np.eye(2))
        np.testing.assert_array_equal(B, np.eye(2))
        assert C.shape == (2, 0) and D.shape == (2, 0)

    @pytest.mark.parametrize("name", MODEL_NAMES)
    def test_finite_differences(self, name, rng):
        for _ in range(10):
            model, z, _ = random_instance(name, rng, horizon=1)
            args = [z.x0, z.controls[0], z.theta, z.disturbances[0]]
            jac = model.jacobians(*args)
            for pos in range(4):
                if args[pos].size == 0:
                    continue
                fd = np.zeros((model.n, args[pos].size))
                for i in range(args[pos].size):
                    e = np.zeros_like(args[pos])
                    e[i] = 1e-5
                    hi = [a + e if j == pos else a for j, a in enumerate(args)]
                    lo = [a - e if j == pos else a for j, a in enumerate(args)]
                    fd[:, i] = (model.step(*hi) - model.step(*lo)) / 2e-5
                assert rel_error(jac[pos], fd) <= 1e-4


class TestRollout:
    def test_constant_velocity(self):
        model = DoubleIntegrator()
        z = model.zero_params(3, x0=[0, 0, 1, 0])
        traj = rollout(model, z)
        np.testing.assert_allclose(traj.states[:, :2], [[0, 0], [1, 0], [2, 0], [3, 0]])

    def test_additive_one_step(self):
        model = AdditiveLinear(1)
        z = ParamTuple(np.array([0.7]), np.array([[0.3]]), np.zeros(0), np.zeros((1, 0)))
        np.testing.assert_allclose(rollout(model, z).states[:, 0], [0.7, 1.0])

    def test_replay_bit_identical(self, rng):
        model, z, N = random_instance("spacecraft13", rng, horizon=5)
        a, b = rollout(model, z, N), rollout(model, z, N)
        assert np.array_equal(a.states, b.states)

    def test_non_finite_reports_step(self):
        model = PlanarSpacecraft()
        z = model.zero_params(4)
        z = ParamTuple(z.x0, np.full((4, 3), 1e300), np.array([1e-300, 1.0]), z.disturbances)
        with pytest.raises(PropagationError) as err:
            rollout(model, z)
        assert err.value.step == 0

    def test_keep_masks_failed_particles(self):
        model = PlanarSpacecraft()
        z = model.zero_params(2, batch=(2,))
        controls = z.controls.copy()
        controls[1] = 1e300
        theta = np.array([[7.2, 0.07], [1e-300, 0.07]])
        z = ParamTuple(z.x0, controls, theta, z.disturbances)
        traj = rollout(model, z, on_nonfinite="keep")
        assert np.all(np.isfinite(traj.states[0]))
        assert np.all(np.isnan(traj.states[1]))

    def test_short_params_rejected(self):
        model = DoubleIntegrator()
        with pytest.raises(ValueError):
            rollout(model, model.zero_params(2), horizon=3)


class TestRolloutGradient:
    def test_additive_one_step(self):
        model = AdditiveLinear(1)
        z = ParamTuple(np.array([0.2]), np.array([[0.1]]), np.zeros(0), np.zeros((1, 0)))
        g = rollout_gradient(model, z, np.ones((1, 1)))
        assert g.x0[0] == pytest.approx(1.0)
        assert g.controls[0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("name", MODEL_NAMES)
    def test_finite_differences(self, name, rng):
        tol = 1e-5 if name in ("additive_linear", "double_integrator") else 1e-4
        for _ in range(5):
            model, z, N = random_instance(name, rng, horizon=3)
            seeds = rng.normal(size=(N, model.n))

            def f(zz):
                return float(np.sum(seeds * rollout(model, zz, N).states[1:]))

            g = rollout_gradient(model, z, seeds).flatten()
            assert rel_error(g, central_difference(f, z)) <= tol

    def test_seed_scaling(self, rng):
        model, z, N = random_instance("spacecraft13", rng)
        seeds = rng.normal(size=(N, model.n))
        g1 = rollout_gradient(model, z, seeds).flatten()
        g2 = rollout_gradient(model, z, 2 * seeds).flatten()
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-15)

    def test_batched_matches_single(self, rng):
        model = DoubleIntegrator(additive_disturbance=True)
        zs = [random_instance("double_integrator", rng)[1] for _ in range(3)]
        seeds = rng.normal(size=(3, 3, 4))
        batch = rollout_gradient(model, ParamTuple.concatenate([z.map(lambda a: a[None]) for z in zs]), seeds)
        for i, z in enumerate(zs):
            np.testing.assert_allclose(batch[i].flatten(), rollout_gradient(model, z, seeds[i]).flatten())

    def test_seed_shape_checked(self):
        model = DoubleIntegrator()
        with pytest.raises(ValueError):
            rollout_gradient(model, model.zero_params(3), np.zeros((2, 4)))


class TestMlp:
    def test_zero_weights_identity(self, rng):
        model = MlpResidual(MlpWeights.zeros((6, 8, 4)), 4, 2)
        x = rng.normal(size=4)
        np.testing.assert_array_equal(model.step(x, rng.normal(size=2)), x)

    def test_json_round_trip(self, tmp_path, rng):
        w = MlpWeights.random((6, 5, 4), rng)
        path = tmp_path / "w.json"
        w.save(path)
        back = MlpWeights.load(path)
        inp = rng.normal(size=(3, 6))
        np.testing.assert_array_equal(back(inp), w(inp))
        assert json.loads(path.read_text()) == w.to_dict()

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            MlpResidual(MlpWeights.random((6, 5, 3), rng), 4, 2)

    def test_no_hidden_layer(self, rng):
        w = MlpWeights.random((6, 4), rng)
        np.testing.assert_allclose(w.input_jacobian(rng.normal(size=6)), w.layers[0][0])


class TestSpacecraft:
    def test_equilibrium(self):
        model = Spacecraft13D()
        x = np.zeros(13)
        x[9] = 1.0
        out = model.step(x, np.zeros(6), [7.2, 0.07, 0.07, 0.07])
        np.testing.assert_array_equal(out, x)

    def test_skew_and_omega(self, rng):
        v, x = rng.normal(size=(2, 3))
        np.testing.assert_allclose(skew(v) @ x, np.cross(v, x))
        w = rng.normal(size=3)
        O = omega_matrix(w)
        np.testing.assert_allclose(O, -O.T)

    def test_momentum_drift_halves_quadratically(self):
        theta = np.array([7.2, 0.065, 0.07, 0.075])
        x = np.zeros(13)
        x[9] = 1.0
        x[10:13] = [0.02, -0.03, 0.01]
        drifts = []
        for dt in (1.0, 0.5):
            out = Spacecraft13D(dt).step(x, np.zeros(6), theta)
            drifts.append(abs(np.linalg.norm(theta[1:] * out[10:]) - np.linalg.norm(theta[1:] * x[10:])))
        assert drifts[0] / drifts[1] == pytest.approx(4.0, rel=0.05)

    def test_quaternion_drift_finite(self, rng):
        model = Spacecraft13D(5.0)
        z = model.zero_params(21)
        x0 = z.x0.copy()
        x0[9] = 1.0
        x0[10:13] = 0.01
        z = ParamTuple(x0, z.controls, np.array([7.2, 0.07, 0.07, 0.07]), z.disturbances)
        q = rollout(model, z).states[-1, 6:10]
        drift = abs(np.linalg.norm(q) - 1.0)
        assert np.isfinite(drift) and drift > 0.0

    def test_planar_translation(self):
        model = PlanarSpacecraft(dt=2.0)
        out = model.step([0, 0, 0, 0, 0, 0], [1.0, 0, 0], [2.0, 1.0])
        np.testing.assert_allclose(out, [0, 0, 1.0, 0, 0, 0])
