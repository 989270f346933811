"""Residual tanh-MLP dynamics ``x' = x + g(x, u)``."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from reachkit.dynamics.base import DynamicsModel


@dataclass(frozen=True)
class MlpWeights:
    """Layer list ``[(W, b), ...]``; tanh on hidden layers, identity output."""

    layers: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        layers = []
        for i, (W, b) in enumerate(self.layers):
            W = np.atleast_2d(np.asarray(W, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias length {b.shape} does not match W rows {W.shape[0]}")
            if layers and layers[-1][0].shape[0] != W.shape[1]:
                raise ValueError(f"layer {i}: input width {W.shape[1]} != previous output "
                                 f"{layers[-1][0].shape[0]}")
            layers.append((W, b))
        if not layers:
            raise ValueError("MLP needs at least one layer")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def n_inputs(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1][0].shape[0]

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MlpWeights":
        return cls(tuple((np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])))

    @classmethod
    def random(cls, sizes: Sequence[int], rng=None, scale: float = 1.0) -> "MlpWeights":
        rng = np.random.default_rng(rng)
        return cls(tuple((scale * rng.normal(size=(o, i)) / np.sqrt(i), np.zeros(o))
                         for i, o in zip(sizes[:-1], sizes[1:])))

    def forward(self, inputs):
        """Output and hidden activations for a ``(..., n_inputs)`` batch."""
        a = np.asarray(inputs, dtype=float)
        hidden = []
        for W, b in self.layers[:-1]:
            a = np.tanh(a @ W.T + b)
            hidden.append(a)
        W, b = self.layers[-1]
        return a @ W.T + b, hidden

    def __call__(self, inputs):
        return self.forward(inputs)[0]

    def input_jacobian(self, inputs):
        """``d output / d inputs`` with shape ``(..., n_outputs, n_inputs)``.

        Reverse-mode through the tanh layers (``1 - a^2`` derivative).
        """
        inputs = np.asarray(inputs, dtype=float)
        _, hidden = self.forward(inputs)
        J = np.broadcast_to(self.layers[-1][0], inputs.shape[:-1] + self.layers[-1][0].shape)
        for (W, _), a in zip(reversed(self.layers[:-1]), reversed(hidden)):
            J = (J * (1.0 - a ** 2)[..., None, :]) @ W
        return J

    def to_dict(self) -> dict:
        return {"layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
                "activation": self.activation}

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpWeights":
        try:
            layers = tuple((np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float))
                           for l in doc["layers"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed MLP weights document: {exc}") from exc
        for i, (W, _) in enumerate(layers):
            if W.ndim != 2:
                raise ValueError(f"layer {i}: W must be a 2-D row-major matrix")
        return cls(layers, doc.get("activation", "tanh"))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MlpWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))


class MlpResidual(DynamicsModel):
    """Learned residual model ``x' = x + g_MLP([x, u])``."""

    name = "mlp_residual"

    def __init__(self, weights: MlpWeights, n: int, m: int):
        if weights.n_inputs != n + m or weights.n_outputs != n:
            raise ValueError(f"MLP maps {weights.n_inputs}->{weights.n_outputs}, "
                             f"expected {n + m}->{n}")
        self.weights = weights
        self.n, self.m, self.p, self.q = int(n), int(m), 0, 0

    def residual(self, x, u):
        return self.weights(np.concatenate([x, np.broadcast_to(u, x.shape[:-1] + (self.m,))], axis=-1))

    def _step(self, x, u, theta, w):
        return x + self.residual(x, u)

    def _jacobians(self, x, u, theta, w):
        inp = np.concatenate([x, np.broadcast_to(u, x.shape[:-1] + (self.m,))], axis=-1)
        J = self.weights.input_jacobian(inp)
        A = J[..., :, :self.n] + np.eye(self.n)
        B = J[..., :, self.n:]
        batch = x.shape[:-1]
        return A, B.copy(), np.zeros(batch + (self.n, 0)), np.zeros(batch + (self.n, 0))
