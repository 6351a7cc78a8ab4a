from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METHODS = ("quantile1d", "sinkhorn", "lp_oracle")


@dataclass(frozen=True)
class AtomicMeasure:
    """Weighted points on the torus; ``points`` has shape (k, d)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size or w.size == 0:
            raise ValueError("points and weights must have the same nonzero length")
        if np.any(w < 0):
            raise ValueError("negative atom weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", np.mod(pts, 1.0))
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def uniform(cls, points) -> "AtomicMeasure":
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @classmethod
    def from_field(cls, field, drop_empty: bool = True) -> "AtomicMeasure":
        """Cells as atoms at their centres (the nodes), weights = cell masses."""
        grid = field.grid
        w = np.asarray(field.values, dtype=float).ravel() * grid.cell_volume
        pts = np.stack([m.ravel() for m in grid.mesh()], axis=1)
        if drop_empty:
            keep = w > 0
            pts, w = pts[keep], w[keep]
        return cls(pts, w / w.sum())


@dataclass(frozen=True)
class GeodesicData1D:
    """Optimal circle map between two 1D densities, sampled at the nodes.

    ``theta`` is the optimal level shift: the plan pairs ``Q_u(t)`` with
    ``Q_v(t - theta)``. ``cut`` is a point where the unrolled CDFs differ by
    ``theta``. ``v0`` is the displacement ``T(x) - x`` at the ``u`` end;
    ``v1`` is ``y - T^-1(y)``, the geodesic velocity at the ``v`` end.
    """

    cut: float
    theta: float
    x: np.ndarray
    transport_map: np.ndarray
    v0: np.ndarray
    inverse_map: np.ndarray
    v1: np.ndarray


@dataclass
class TransportResult:
    distance: float
    method: str
    metadata: dict = field(default_factory=dict)
    geodesic: GeodesicData1D | None = None
    plan: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.distance >= 0:
            raise ValueError(f"distance must be nonnegative, got {self.distance}")

    def to_dict(self) -> dict:
        meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.metadata.items()}
        return {"distance": self.distance, "method": self.method, "metadata": meta}


def torus_sq_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared torus distances, shapes (k, d) x (l, d) -> (k, l)."""
    diff = np.abs(x[:, None, :] - y[None, :, :])
    diff = np.minimum(diff, 1.0 - diff)
    return np.sum(diff * diff, axis=-1)
