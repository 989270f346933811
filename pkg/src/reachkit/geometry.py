"""Computational-geometry kernel: boxes, ellipsoids, convex hulls, projections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull as _QhullHull
from scipy.spatial import QhullError
from scipy.special import gammaln

from reachkit.utils.validation import check_points, check_vector

HULL_TOL = 1e-9
BOX_WIDTH_FLOOR = 1e-12
_EXACT_VOLUME_MAX_DIM = 4


class GeometryError(ValueError):
    """Raised for invalid geometric input (empty clouds, singular shapes...)."""


@dataclass(frozen=True)
class AxisAlignedBox:
    """Box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise GeometryError("box bounds must be vectors of equal length")
        if np.any(lower > upper):
            raise GeometryError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_center(cls, center, half_widths) -> "AxisAlignedBox":
        center = np.asarray(center, dtype=float)
        half_widths = np.broadcast_to(np.asarray(half_widths, dtype=float), center.shape)
        return cls(center - half_widths, center + half_widths)

    @classmethod
    def point(cls, x) -> "AxisAlignedBox":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.copy(), x.copy())

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, tol: float = HULL_TOL):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def restrict(self, dims) -> "AxisAlignedBox":
        dims = _as_dims(dims, self.dim)
        return AxisAlignedBox(self.lower[dims], self.upper[dims])


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid ``{x : (x - center)^T shape^+ (x - center) <= 1}``.

    ``shape`` may be singular; directions in its null space only admit
    ``x = center``.
    """

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        n = center.shape[0]
        if center.ndim != 1 or shape.shape != (n, n):
            raise GeometryError("ellipsoid shape must be (n, n) for an n-vector center")
        scale = max(1.0, float(np.max(np.abs(shape))))
        if np.max(np.abs(shape - shape.T)) > 1e-12 * scale:
            raise GeometryError("ellipsoid shape matrix is not symmetric")
        shape = 0.5 * (shape + shape.T)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def mahalanobis_sq(self, x) -> np.ndarray:
        """Squared ellipsoidal norm of ``x - center`` (``inf`` off the range of ``shape``)."""
        x = np.asarray(x, dtype=float)
        eigvals, eigvecs = np.linalg.eigh(self.shape)
        scale = max(float(np.max(np.abs(eigvals))), 1e-300)
        pos = eigvals > 1e-14 * scale
        y = (x - self.center) @ eigvecs
        val = np.sum(y[..., pos] ** 2 / eigvals[pos], axis=-1)
        off = y[..., ~pos]
        if off.shape[-1]:
            val = np.where(np.any(np.abs(off) > 1e-12, axis=-1), np.inf, val)
        return val

    def contains(self, x, tol: float = 1e-9):
        return self.mahalanobis_sq(x) <= 1.0 + tol

    @property
    def volume(self) -> float:
        return ellipsoid_volume(self)

    def restrict(self, dims) -> "Ellipsoid":
        """Projection of the ellipsoid onto the coordinates ``dims``."""
        dims = _as_dims(dims, self.dim)
        return Ellipsoid(self.center[dims], self.shape[np.ix_(dims, dims)])


@dataclass(frozen=True)
class ConvexHullSet:
    """Convex hull of a finite point cloud.

    Facets are stored as halfspaces ``normals @ x <= offsets``. For a cloud
    of affine rank ``r < dimension`` the facets live in the ``r``-dimensional
    affine span parameterised by ``span_origin + span_basis.T @ y``.
    """

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    dimension: int
    degenerate_rank: int
    span_origin: np.ndarray
    span_basis: np.ndarray
    simplices: np.ndarray = field(repr=False)

    @property
    def is_degenerate(self) -> bool:
        return self.degenerate_rank < self.dimension

    @property
    def facets(self):
        return list(zip(self.normals, self.offsets))

    def to_span(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.span_origin) @ self.span_basis.T

    def contains(self, x, tol: float = HULL_TOL):
        return hull_contains(self, x, tol)

    @property
    def volume(self) -> float:
        return hull_volume(self)


def _as_dims(dims, n) -> np.ndarray:
    if dims is None:
        return np.arange(n)
    if isinstance(dims, (int, np.integer)):
        return np.arange(int(dims))
    dims = np.asarray(dims, dtype=int)
    if dims.size and (dims.min() < 0 or dims.max() >= n):
        raise GeometryError(f"dimension indices {dims.tolist()} out of range for dim {n}")
    return dims


def _affine_span(points: np.ndarray):
    origin = points.mean(axis=0)
    centered = points - origin
    if points.shape[0] == 1:
        return origin, np.zeros((0, points.shape[1]))
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.max(np.abs(points))))
    rank = int(np.sum(s > HULL_TOL * scale))
    return origin, vt[:rank]


def convex_hull(points) -> ConvexHullSet:
    """Convex hull of a point cloud in any dimension.

    Qhull (quickhull) does the full-dimensional work; clouds whose affine
    rank is below the ambient dimension are hulled inside their span.
    """
    pts = check_points(points, name="points")
    n = pts.shape[1]
    origin, basis = _affine_span(pts)
    rank = basis.shape[0]

    if rank == 0:
        return ConvexHullSet(
            vertices=pts[:1].copy(), normals=np.zeros((0, 0)), offsets=np.zeros(0),
            dimension=n, degenerate_rank=0, span_origin=pts[0].copy(),
            span_basis=np.zeros((0, n)), simplices=np.zeros((0, 1), dtype=int))

    if rank == n:
        # Axis-aligned frame keeps vertices, facets and containment in native coordinates.
        origin, basis = np.zeros(n), np.eye(n)
    local = (pts - origin) @ basis.T

    if rank == 1:
        lo, hi = int(np.argmin(local[:, 0])), int(np.argmax(local[:, 0]))
        normals = np.array([[-1.0], [1.0]])
        offsets = np.array([-local[lo, 0], local[hi, 0]])
        return ConvexHullSet(
            vertices=pts[[lo, hi]].copy(), normals=normals, offsets=offsets,
            dimension=n, degenerate_rank=1, span_origin=origin, span_basis=basis,
            simplices=np.array([[0], [1]]))

    try:
        qh = _QhullHull(local)
    except QhullError as exc:  # pragma: no cover - generic clouds do not hit this
        raise GeometryError(f"hull construction failed: {exc}") from exc
    vertex_idx = np.sort(qh.vertices)
    remap = -np.ones(len(pts), dtype=int)
    remap[vertex_idx] = np.arange(len(vertex_idx))
    normals = qh.equations[:, :-1]
    offsets = -qh.equations[:, -1]
    return ConvexHullSet(
        vertices=pts[vertex_idx].copy(), normals=normals, offsets=offsets,
        dimension=n, degenerate_rank=rank, span_origin=origin, span_basis=basis,
        simplices=remap[qh.simplices])


def hull_contains(hull: ConvexHullSet, x, tol: float = HULL_TOL):
    """Membership test; accepts a single point or an ``(..., n)`` batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != hull.dimension:
        raise GeometryError(f"point dimension {x.shape[-1]} != hull dimension {hull.dimension}")
    rel = x - hull.span_origin
    local = rel @ hull.span_basis.T
    inside = np.ones(x.shape[:-1], dtype=bool)
    if hull.is_degenerate:
        residual = rel - local @ hull.span_basis
        inside &= np.linalg.norm(residual, axis=-1) <= tol
    if hull.degenerate_rank > 0:
        inside &= np.all(local @ hull.normals.T - hull.offsets <= tol, axis=-1)
    return inside


def _bounding_box(hull: ConvexHullSet) -> AxisAlignedBox:
    return AxisAlignedBox(hull.vertices.min(axis=0), hull.vertices.max(axis=0))


def hull_volume_mc(hull: ConvexHullSet, n_samples: int = 200_000, seed: int = 0):
    """Monte-Carlo volume over the bounding box; returns ``(volume, stderr)``."""
    box = _bounding_box(hull)
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = int(n_samples)
    while remaining > 0:
        chunk = min(remaining, 100_000)
        pts = box.lower + (box.upper - box.lower) * rng.random((chunk, hull.dimension))
        hits += int(np.count_nonzero(hull_contains(hull, pts)))
        remaining -= chunk
    frac = hits / n_samples
    stderr = box.volume * math.sqrt(max(frac * (1.0 - frac), 0.0) / n_samples)
    return box.volume * frac, stderr


def hull_volume(hull: ConvexHullSet, n_samples: int = 200_000, seed: int = 0,
                return_stderr: bool = False):
    """Volume of a full-dimensional hull.

    Exact (facet simplices coned to an interior point) up to dimension 4,
    Monte-Carlo above that.
    """
    if hull.is_degenerate:
        raise GeometryError("zero volume / degenerate hull")
    n = hull.dimension
    if n > _EXACT_VOLUME_MAX_DIM:
        vol, err = hull_volume_mc(hull, n_samples=n_samples, seed=seed)
        return (vol, err) if return_stderr else vol
    interior = hull.vertices.mean(axis=0)
    tri = hull.vertices[hull.simplices] - interior
    vol = float(np.sum(np.abs(np.linalg.det(tri)))) / math.factorial(n)
    return (vol, 0.0) if return_stderr else vol


def outer_box(points, center=None) -> AxisAlignedBox:
    """Smallest box centred at ``center`` containing every point."""
    pts = check_points(points, name="points")
    if center is None:
        center = pts.mean(axis=0)
    center = check_vector(center, pts.shape[1], name="center")
    delta = np.max(np.abs(pts - center), axis=0)
    return AxisAlignedBox(center - delta, center + delta)


def box_to_ellipsoid(box: AxisAlignedBox, dims: Optional[Union[int, Sequence[int]]] = None) -> Ellipsoid:
    """Outer ellipsoid ``s * diag(delta_i^2)`` of the box restricted to ``dims``.

    An integer ``dims`` keeps the first ``dims`` coordinates. Half-widths are
    floored at ``BOX_WIDTH_FLOOR`` so the shape stays invertible.
    """
    if isinstance(dims, (int, np.integer)) and dims > box.dim:
        raise GeometryError(f"s={dims} exceeds box dimension {box.dim}")
    sub = box.restrict(dims)
    delta = np.maximum(sub.half_widths, BOX_WIDTH_FLOOR)
    return Ellipsoid(sub.center, sub.dim * np.diag(delta ** 2))


def ellipsoid_volume(e: Ellipsoid) -> float:
    """``pi^(n/2) / Gamma(n/2 + 1) * sqrt(det Q)``."""
    n = e.dim
    sign, logdet = np.linalg.slogdet(e.shape)
    if sign <= 0 or not np.isfinite(logdet):
        raise GeometryError("singular ellipsoid shape")
    return float(np.exp(0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0) + 0.5 * logdet))


def minkowski_outer(e1: Union[Ellipsoid, np.ndarray], e2: Union[Ellipsoid, np.ndarray]):
    """Trace-rule outer ellipsoid of ``B(0, Q1) + B(0, Q2)``.

    Accepts ellipsoids (centers are summed) or bare shape matrices, and
    returns the same kind.
    """
    as_matrix = not isinstance(e1, Ellipsoid)
    q1 = np.asarray(e1 if as_matrix else e1.shape, dtype=float)
    q2 = np.asarray(e2 if as_matrix else e2.shape, dtype=float)
    if q1.shape != q2.shape:
        raise GeometryError("ellipsoid dimensions differ")
    t1, t2 = float(np.trace(q1)), float(np.trace(q2))
    if t1 <= 0.0 and t2 <= 0.0:
        q = np.zeros_like(q1)
    elif t2 <= 0.0:
        q = q1.copy()
    elif t1 <= 0.0:
        q = q2.copy()
    else:
        q = (1.0 + math.sqrt(t2 / t1)) * q1 + (1.0 + math.sqrt(t1 / t2)) * q2
    q = 0.5 * (q + q.T)
    if as_matrix:
        return q
    return Ellipsoid(e1.center + e2.center, q)


def project_box(z, box: AxisAlignedBox) -> np.ndarray:
    """Euclidean projection onto a box (component-wise clamp)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != box.dim:
        raise GeometryError("dimension mismatch in box projection")
    return np.clip(z, box.lower, box.upper)


def project_ellipsoid(z, e: Ellipsoid, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Euclidean projection onto an ellipsoid; ``z`` may be a ``(..., n)`` batch.

    In the eigenbasis of Q the projection of ``y`` is ``lam*y / (lam + t)``
    with the multiplier ``t >= 0`` the root of the boundary equation. Newton
    runs on ``1/||.|| - 1``, which is concave in ``t`` and therefore
    approaches the root monotonically from below.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != e.dim:
        raise GeometryError("dimension mismatch in ellipsoid projection")
    lam, vecs = np.linalg.eigh(e.shape)
    if lam.min() <= 0.0:
        raise GeometryError("singular ellipsoid shape")
    y = (z - e.center) @ vecs
    a = lam * y ** 2  # (..., n)
    outside = np.sum(y ** 2 / lam, axis=-1) > 1.0
    t = np.zeros(z.shape[:-1])
    for _ in range(max_iter):
        denom = lam + t[..., None]
        s2 = np.sum(a / denom ** 2, axis=-1)
        s2 = np.where(outside, s2, 1.0)
        s = np.sqrt(s2)
        resid = np.where(outside, 1.0 / s - 1.0, 0.0)
        if np.all(np.abs(resid) <= tol):
            break
        ds = np.where(outside, -np.sum(a / denom ** 3, axis=-1) / s, -1.0)
        step = resid / (ds / s2)
        t = np.where(outside, np.maximum(t + step, 0.0), t)
    proj = lam * y / (lam + t[..., None])
    out = e.center + proj @ vecs.T
    return np.where(outside[..., None], out, z)
