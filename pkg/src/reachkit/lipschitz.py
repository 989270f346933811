"""Guaranteed ellipsoidal propagation for ``x' = h(x) + g(x)`` with Lipschitz ``g``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from reachkit.geometry import Ellipsoid, minkowski_outer


class LipschitzOverflow(FloatingPointError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"ellipsoid shape overflowed at step {step}")


@dataclass(frozen=True)
class LipschitzModelInfo:
    """Affine part ``H x + offset``, residual ``g(x, k)`` and per-output constants.

    ``residual`` receives the state and the step index so that fixed
    open-loop controls can be folded into it.
    """

    affine_matrix: np.ndarray
    offset: np.ndarray
    residual: Callable[[np.ndarray, int], np.ndarray]
    lipschitz_constants: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.affine_matrix, dtype=float))
        L = np.atleast_1d(np.asarray(self.lipschitz_constants, dtype=float))
        offset = np.broadcast_to(np.asarray(self.offset, dtype=float), (H.shape[0],)).copy()
        if H.shape[0] != H.shape[1] or L.shape != (H.shape[0],):
            raise ValueError("affine map must be square and match the Lipschitz vector")
        if np.any(L < 0):
            raise ValueError("Lipschitz constants must be non-negative")
        object.__setattr__(self, "affine_matrix", H)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "lipschitz_constants", L)

    @property
    def dim(self) -> int:
        return self.affine_matrix.shape[0]

    def __call__(self, x, k: int = 0):
        x = np.asarray(x, dtype=float)
        return x @ self.affine_matrix.T + self.offset + self.residual(x, k)

    @classmethod
    def from_residual_model(cls, model, controls, lipschitz_constants) -> "LipschitzModelInfo":
        """Wrap a model with ``x' = x + g(x, u)`` (``h`` the identity).

        ``controls`` is the fixed ``(N, m)`` open-loop sequence.
        """
        controls = np.asarray(controls, dtype=float)

        def g(x, k):
            return model.residual(x, np.broadcast_to(controls[k], x.shape[:-1] + controls.shape[-1:]))

        return cls(np.eye(model.n), np.zeros(model.n), g, lipschitz_constants)


def lipschitz_step(info: LipschitzModelInfo, e: Ellipsoid, k: int = 0,
                   paper_literal: bool = False) -> Ellipsoid:
    """One step of the outer ellipsoid recursion.

    The residual deviation is bounded per component by ``L_i * r`` where
    ``r = sqrt(lambda_max(Q))`` is the Euclidean radius of ``B(0, Q)``.
    ``paper_literal=True`` uses ``r = lambda_max(Q)`` instead; that variant
    is only sound when ``lambda_max(Q) >= 1``.
    """
    if e.dim != info.dim:
        raise ValueError(f"ellipsoid dim {e.dim} != model dim {info.dim}")
    H = info.affine_matrix
    center = info(e.center, k)
    q_nom = H @ e.shape @ H.T
    lam_max = max(float(np.linalg.eigvalsh(e.shape)[-1]), 0.0)
    radius = lam_max if paper_literal else np.sqrt(lam_max)
    n = info.dim
    with np.errstate(over="ignore", invalid="ignore"):
        q_g = n * np.diag((info.lipschitz_constants * radius) ** 2)
    if not (np.all(np.isfinite(q_g)) and np.all(np.isfinite(q_nom))):
        raise LipschitzOverflow(k)
    shape = minkowski_outer(q_nom, q_g)
    if not np.all(np.isfinite(shape)) or not np.all(np.isfinite(center)):
        raise LipschitzOverflow(k)
    return Ellipsoid(center, shape)


def lipschitz_propagate(info: LipschitzModelInfo, e0: Ellipsoid, horizon: int,
                        paper_literal: bool = False) -> List[Ellipsoid]:
    """Ellipsoid tube ``[E_0, ..., E_N]``."""
    tube = [e0]
    for k in range(int(horizon)):
        tube.append(lipschitz_step(info, tube[-1], k, paper_literal=paper_literal))
    return tube


def tube_to_dict(tube: List[Ellipsoid]) -> dict:
    return {"method": "lipschitz", "horizon": len(tube) - 1,
            "steps": [{"k": k, "center": e.center.tolist(),
                       "outer_ellipsoid": {"center": e.center.tolist(), "shape": e.shape.tolist()}}
                      for k, e in enumerate(tube)]}
