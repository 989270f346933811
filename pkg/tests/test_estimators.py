import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from reachkit.cli import data_path
from reachkit.dynamics import AdditiveLinear, MlpResidual, MlpWeights
from reachkit.estimators import LipschitzTube, RandUP, RobUP
from reachkit.geometry import AxisAlignedBox, Ellipsoid
from reachkit.randup import UncertaintySpec


def linear_spec(n=2, ubar=0.5):
    return UncertaintySpec.build(AxisAlignedBox(-np.ones(n), np.ones(n)),
                                 AxisAlignedBox(-ubar * np.ones(n), ubar * np.ones(n)), 1)


TRUE_BOX = AxisAlignedBox(-1.5 * np.ones(2), 1.5 * np.ones(2))


class TestSampling:
    def test_params_and_clone(self):
        est = RobUP(AdditiveLinear(2), n_particles=50, n_adv=2)
        params = est.get_params()
        assert params["n_particles"] == 50 and params["n_adv"] == 2
        twin = clone(est).set_params(seed=3)
        assert twin.seed == 3 and est.seed == 0

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            RandUP(AdditiveLinear(2)).predict(np.zeros((1, 2)))

    def test_fit_requires_model_and_spec(self):
        with pytest.raises(ValueError):
            RandUP().fit(linear_spec())
        with pytest.raises(TypeError):
            RandUP(AdditiveLinear(2)).fit(np.zeros((3, 2)))

    def test_predict_and_score(self):
        est = RandUP(AdditiveLinear(2), n_particles=2000, seed=1).fit(linear_spec())
        inside = est.predict([[0.0, 0.0], [5.0, 0.0]])
        np.testing.assert_array_equal(inside, [True, False])
        s = est.score(TRUE_BOX)
        assert 0.8 < s <= 1.0
        assert est.predict([[0.0, 0.0]], k=0)[0]

    def test_robup_covers_more(self):
        spec = linear_spec()
        rnd = RandUP(AdditiveLinear(2), n_particles=100, seed=2).fit(spec).score(TRUE_BOX)
        rob = RobUP(AdditiveLinear(2), n_particles=100, seed=2).fit(spec).score(TRUE_BOX)
        assert rob >= rnd

    def test_beta_distribution_param(self):
        est = RandUP(AdditiveLinear(2), n_particles=500, distribution=(0.5, 0.5)).fit(linear_spec())
        assert est.score(TRUE_BOX) > 0.0

    def test_seed_determinism(self):
        a = RandUP(AdditiveLinear(2), n_particles=100, seed=9).fit(linear_spec())
        b = RandUP(AdditiveLinear(2), n_particles=100, seed=9).fit(linear_spec())
        np.testing.assert_array_equal(a.estimate_.states, b.estimate_.states)


class TestLipschitzTube:
    @pytest.fixture
    def model(self):
        return MlpResidual(MlpWeights.load(data_path("double_integrator_mlp.json")), 4, 2)

    def test_fit_predict(self, model):
        x0 = Ellipsoid(np.zeros(4), 1e-3 * np.eye(4))
        spec = UncertaintySpec.build(x0, np.full((3, 2), 0.05), 3)
        est = LipschitzTube(model, [1, 1, 0, 0]).fit(spec)
        assert len(est.tube_) == 4
        assert est.predict(est.tube_[2].center[None], k=2)[0]
        lit = LipschitzTube(model, [1, 1, 0, 0], paper_literal=True).fit(spec)
        assert lit.tube_[3].shape.trace() < est.tube_[3].shape.trace()

    def test_requires_pinned_controls(self, model):
        spec = UncertaintySpec.build(Ellipsoid(np.zeros(4), np.eye(4)),
                                     AxisAlignedBox([-0.1, -0.1], [0.1, 0.1]), 2)
        with pytest.raises(ValueError):
            LipschitzTube(model, [1, 1, 0, 0]).fit(spec)

    def test_requires_constants(self, model):
        spec = UncertaintySpec.build(Ellipsoid(np.zeros(4), np.eye(4)), np.zeros((2, 2)), 2)
        with pytest.raises(ValueError):
            LipschitzTube(model).fit(spec)
