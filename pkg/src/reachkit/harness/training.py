"""Training the residual MLP on double-integrator data (numpy, Adam)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from reachkit.dynamics.linear import DoubleIntegrator
from reachkit.dynamics.mlp import MlpWeights

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"training loss became non-finite at step {step}")


@dataclass(frozen=True)
class DatasetSpec:
    """Box from which ``(x, u)`` pairs are re-sampled each step.

    Targets are the residual ``f(x, u) - x`` of ``ground_truth``.
    """

    state_low: Sequence[float] = (-50.0, -50.0, -3.5, -3.5)
    state_high: Sequence[float] = (50.0, 50.0, 3.5, 3.5)
    control_low: Sequence[float] = (-0.5, -0.5)
    control_high: Sequence[float] = (0.5, 0.5)
    ground_truth: Callable = field(default_factory=DoubleIntegrator, compare=False)

    def sample(self, rng, size: int):
        lo = np.concatenate([self.state_low, self.control_low])
        hi = np.concatenate([self.state_high, self.control_high])
        inp = lo + (hi - lo) * rng.random((size, lo.size))
        n = len(self.state_low)
        x, u = inp[:, :n], inp[:, n:]
        return inp, self.ground_truth.step(x, u) - x

    def input_scale(self, shrink: float = 1.0):
        """Shift and scale mapping the sampling box onto ``[-shrink, shrink]``."""
        lo = np.concatenate([self.state_low, self.control_low])
        hi = np.concatenate([self.state_high, self.control_high])
        return 0.5 * (hi + lo), 0.5 * (hi - lo) / shrink


@dataclass(frozen=True)
class TrainingConfig:
    hidden: Tuple[int, ...] = (128, 128)
    steps: int = 10_000
    batch_size: int = 20
    learning_rate: float = 0.002
    lr_decay: float = 1.0 - 1e-6
    l2: float = 1e-6
    seed: int = 0
    #: inputs are mapped to [-input_shrink, input_shrink] so tanh stays near-linear
    input_shrink: float = 0.003
    #: refit the output layer by ridge least squares after Adam (0 disables)
    polish_samples: int = 100_000
    polish_ridge: float = 1e-10
    log_every: int = 0


def _init(sizes, rng):
    layers = []
    for i, o in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(i)
        layers.append([rng.uniform(-bound, bound, (o, i)), rng.uniform(-bound, bound, o)])
    return layers


def mlp_loss_and_grad(layers, inp, target, l2: float = 0.0):
    """Summed squared error plus ``l2 * ||W||^2`` and its gradient (tanh MLP)."""
    acts = [inp]
    a = inp
    for W, b in layers[:-1]:
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    W, b = layers[-1]
    out = a @ W.T + b
    err = out - target
    loss = float(np.sum(err ** 2)) + l2 * sum(float(np.sum(W ** 2)) for W, _ in layers)
    grads = [None] * len(layers)
    delta = 2.0 * err
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = [delta.T @ acts[i] + 2.0 * l2 * W, delta.sum(axis=0)]
        if i > 0:
            delta = (delta @ W) * (1.0 - acts[i] ** 2)
    return loss, grads


def _fold_scaling(layers, shift, scale) -> MlpWeights:
    """Absorb ``(inp - shift) / scale`` into the first layer."""
    W0, b0 = layers[0]
    W = W0 / scale
    b = b0 - W @ shift
    return MlpWeights(((W, b),) + tuple((W_, b_) for W_, b_ in layers[1:]))


def validation_loss(weights: MlpWeights, data: DatasetSpec, size: int = 20_000, seed: int = 12345) -> float:
    """Mean over samples of the squared residual error."""
    inp, target = data.sample(np.random.default_rng(seed), size)
    return float(np.mean(np.sum((weights(inp) - target) ** 2, axis=1)))


def train_mlp(data: DatasetSpec = DatasetSpec(), cfg: TrainingConfig = TrainingConfig(),
              callback: Optional[Callable[[int, float], None]] = None) -> MlpWeights:
    """Adam on freshly re-sampled mini-batches, then an output-layer polish."""
    rng = np.random.default_rng(cfg.seed)
    shift, scale = data.input_scale(cfg.input_shrink)
    n_in = shift.size
    n_out = len(data.state_low)
    layers = _init((n_in,) + tuple(cfg.hidden) + (n_out,), rng)
    m_state = [[np.zeros_like(p) for p in layer] for layer in layers]
    v_state = [[np.zeros_like(p) for p in layer] for layer in layers]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr = cfg.learning_rate
    for step in range(1, cfg.steps + 1):
        inp, target = data.sample(rng, cfg.batch_size)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = mlp_loss_and_grad(layers, (inp - shift) / scale, target, cfg.l2)
        if not np.isfinite(loss):
            raise TrainingDiverged(step)
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for layer, g_layer, m_layer, v_layer in zip(layers, grads, m_state, v_state):
            for j in range(2):
                m_layer[j] = beta1 * m_layer[j] + (1 - beta1) * g_layer[j]
                v_layer[j] = beta2 * v_layer[j] + (1 - beta2) * g_layer[j] ** 2
                with np.errstate(over="ignore", invalid="ignore"):
                    layer[j] -= lr * (m_layer[j] / c1) / (np.sqrt(v_layer[j] / c2) + eps)
        lr *= cfg.lr_decay
        if callback is not None:
            callback(step, loss)
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("step %d loss %.3e", step, loss)

    if cfg.polish_samples:
        inp, target = data.sample(rng, cfg.polish_samples)
        a = (inp - shift) / scale
        for W, b in layers[:-1]:
            a = np.tanh(a @ W.T + b)
        feats = np.hstack([a, np.ones((a.shape[0], 1))])
        gram = feats.T @ feats + cfg.polish_ridge * np.eye(feats.shape[1])
        sol = np.linalg.solve(gram, feats.T @ target)
        layers[-1] = [sol[:-1].T.copy(), sol[-1].copy()]

    return _fold_scaling(layers, shift, scale)
