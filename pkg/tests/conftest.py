import numpy as np
import pytest

from reachkit.dynamics.base import ParamTuple


def central_difference(fn, z: ParamTuple, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of a flattened parameter tuple."""
    flat = z.flatten()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        grad[i] = (fn(z.unflatten(flat + e)) - fn(z.unflatten(flat - e))) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_instance(name: str, rng, horizon: int = 3):
    """A model and a random parameter tuple in its typical operating range."""
    from reachkit.dynamics import (AdditiveLinear, DoubleIntegrator, MlpResidual, MlpWeights,
                                   PlanarSpacecraft, Spacecraft13D)
    if name == "additive_linear":
        model, horizon = AdditiveLinear(3, 0.5), 1
    elif name == "double_integrator":
        model = DoubleIntegrator(additive_disturbance=True)
    elif name == "mlp_residual":
        weights = MlpWeights.random((6, 16, 16, 4), rng, scale=0.5)
        model = MlpResidual(weights, 4, 2)
    elif name == "spacecraft13":
        model = Spacecraft13D(dt=5.0)
    elif name == "planar_spacecraft":
        model = PlanarSpacecraft(dt=5.0)
    else:
        raise KeyError(name)
    z = model.zero_params(horizon)
    x0 = rng.normal(size=model.n)
    controls = rng.normal(scale=0.1, size=(horizon, model.m))
    theta = np.zeros(model.p)
    w = rng.normal(scale=1e-3, size=(horizon, model.q))
    if name == "spacecraft13":
        x0[3:6] *= 0.1
        q = rng.normal(size=4)
        x0[6:10] = q / np.linalg.norm(q)
        x0[10:13] = rng.normal(scale=0.02, size=3)
        controls[:, 3:] *= 0.01
        theta = np.array([7.2, 0.07, 0.068, 0.072]) + rng.uniform(-0.002, 0.002, 4)
    elif name == "planar_spacecraft":
        x0[2:4] *= 0.1
        x0[5] = rng.normal(scale=0.02)
        controls[:, 2] *= 0.01
        theta = np.array([7.2, 0.07]) + rng.uniform(-0.002, 0.002, 2)
    return model, z.__class__(x0, controls, theta, w[:, :model.q]), horizon


MODEL_NAMES = ("additive_linear", "double_integrator", "mlp_residual", "spacecraft13",
               "planar_spacecraft")


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE", {}) if module else {}
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
