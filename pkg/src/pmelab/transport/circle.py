"""Exact W2 on the circle by lifted quantile matching.

Each measure is unrolled from an origin and described by its lifted quantile
function ``Q`` (``Q(t + 1) = Q(t) + 1``) as a list of segments: on the level
interval ``[P_j, P_j+1]`` the quantile runs linearly from ``start_j`` to
``end_j``. A cell of constant density is a linear segment; an atom is a
constant one. For a level shift ``theta``

    cost(theta) = integral_0^1 (Q_u(t) - Q_v(t - theta))^2 dt

is convex, and ``W2^2 = min_theta cost(theta)``. Every admissible ``theta``
equals ``F_u(c) - F_v(c)`` for some cut ``c``, so sampling the breakpoints of
both CDFs gives a bracket, refined by bounded scalar minimisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from pmelab._accel import core
from pmelab.grid import GridField
from pmelab.transport.types import AtomicMeasure, GeodesicData1D, TransportResult


@dataclass(frozen=True)
class CircleQuantile:
    P: np.ndarray  # level breakpoints, P[0] = 0, P[-1] = 1 exactly
    start: np.ndarray
    end: np.ndarray

    @property
    def origin(self) -> float:
        return float(self.start[0])

    @classmethod
    def from_cells(cls, values: np.ndarray, atomic: bool = False) -> "CircleQuantile":
        values = np.asarray(values, dtype=float)
        n = values.size
        h = 1.0 / n
        w = np.maximum(values, 0.0) * h
        total = w.sum()
        if not total > 0:
            raise ValueError("measure has no mass")
        P = np.concatenate([[0.0], np.cumsum(w / total)])
        P[-1] = 1.0
        x = np.arange(n) * h
        if atomic:
            return cls(P, x.copy(), x.copy())
        return cls(P, x - 0.5 * h, x + 0.5 * h)

    @classmethod
    def from_atoms(cls, points, weights) -> "CircleQuantile":
        pts = np.mod(np.asarray(points, dtype=float).ravel(), 1.0)
        w = np.asarray(weights, dtype=float).ravel()
        order = np.argsort(pts, kind="stable")
        pts, w = pts[order], w[order]
        P = np.concatenate([[0.0], np.cumsum(w / w.sum())])
        P[-1] = 1.0
        return cls(P, pts, pts.copy())

    def quantile(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.floor(t)
        t0 = t - k
        j = np.clip(np.searchsorted(self.P, t0, side="right") - 1, 0, self.start.size - 1)
        w = self.P[j + 1] - self.P[j]
        lam = np.where(w > 0, (t0 - self.P[j]) / np.where(w > 0, w, 1.0), 0.0)
        return self.start[j] + (self.end[j] - self.start[j]) * lam + k

    def cdf(self, x) -> np.ndarray:
        """Lifted right-continuous CDF, ``F(origin) = 0`` (or the atom there)."""
        x = np.asarray(x, dtype=float)
        k = np.floor(x - self.origin)
        x0 = x - k
        j = np.clip(np.searchsorted(self.start, x0, side="right") - 1, 0, self.start.size - 1)
        width = self.end[j] - self.start[j]
        inside = (x0 < self.end[j]) & (width > 0)
        lam = np.where(inside, (x0 - self.start[j]) / np.where(width > 0, width, 1.0), 1.0)
        return self.P[j] + (self.P[j + 1] - self.P[j]) * lam + k

    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([self.start, self.end]))


def _arrays(q: CircleQuantile):
    return (np.ascontiguousarray(q.P), np.ascontiguousarray(q.start), np.ascontiguousarray(q.end))


def circle_cost(qu: CircleQuantile, qv: CircleQuantile, theta: float) -> float:
    return float(core.circle_cost(*_arrays(qu), *_arrays(qv), float(theta)))


def _optimal_shift(qu: CircleQuantile, qv: CircleQuantile, xatol: float = 1e-12):
    cuts = np.unique(np.concatenate([qu.breakpoints(), qv.breakpoints()]))
    thetas = qu.cdf(cuts) - qv.cdf(cuts)
    thetas = np.unique(thetas)
    costs = core.circle_costs(*_arrays(qu), *_arrays(qv), np.ascontiguousarray(thetas))
    i = int(np.argmin(costs))
    best_theta, best_cost = float(thetas[i]), float(costs[i])
    # bracket by the nearest distinct candidates; near-duplicates survive np.unique
    gap = 1e-12 * max(1.0, abs(best_theta))
    below = thetas[thetas < best_theta - gap]
    above = thetas[thetas > best_theta + gap]
    lo = float(below.max()) if below.size else best_theta
    hi = float(above.min()) if above.size else best_theta
    evals = thetas.size
    if hi > lo:
        res = minimize_scalar(lambda th: circle_cost(qu, qv, th), bounds=(lo, hi), method="bounded",
                              options={"xatol": xatol})
        evals += int(res.nfev)
        if res.fun < best_cost:
            best_theta, best_cost = float(res.x), float(res.fun)
    cut_idx = int(np.argmin(np.abs(qu.cdf(cuts) - qv.cdf(cuts) - best_theta)))
    return best_theta, max(best_cost, 0.0), float(cuts[cut_idx]), thetas, costs, evals


def _wrap_half(z: np.ndarray) -> np.ndarray:
    """Wrap to (-1/2, 1/2]."""
    return -np.mod(-z + 0.5, 1.0) + 0.5


def _density_values(f) -> np.ndarray:
    if isinstance(f, GridField):
        if f.grid.dim != 1:
            raise ValueError("w2_circle_1d needs one-dimensional fields")
        vals = np.asarray(f.values, dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.ndim != 1:
            raise ValueError("w2_circle_1d needs one-dimensional fields")
    if vals.min() < -1e-12:
        raise ValueError("w2_circle_1d needs nonnegative densities")
    mass = vals.sum() / vals.size
    if abs(mass - 1.0) > 1e-8:
        raise ValueError(f"w2_circle_1d needs unit mass, got {mass!r}")
    return vals


def w2_circle_1d(u, v, atomic: bool = False, with_map: bool = True) -> TransportResult:
    """W2 between two 1D grid densities (piecewise constant, or cell atoms if ``atomic``)."""
    uv, vv = _density_values(u), _density_values(v)
    if uv.size != vv.size:
        raise ValueError("densities live on different grids")
    qu = CircleQuantile.from_cells(uv, atomic)
    qv = CircleQuantile.from_cells(vv, atomic)
    theta, cost, cut, thetas, costs, evals = _optimal_shift(qu, qv)
    geo = None
    if with_map and not atomic:
        x = np.arange(uv.size) / uv.size
        T = qv.quantile(qu.cdf(x) - theta)
        S = qu.quantile(qv.cdf(x) + theta)
        geo = GeodesicData1D(cut=cut, theta=theta, x=x, transport_map=T, v0=_wrap_half(T - x),
                             inverse_map=S, v1=_wrap_half(x - S))
    meta = {"theta": theta, "cut": cut, "cost": cost, "candidates": int(thetas.size),
            "evaluations": evals, "atomic": atomic,
            "coarse_min": float(costs.min())}
    return TransportResult(math.sqrt(cost), "quantile1d", meta, geodesic=geo)


def w2_circle_atoms(a: AtomicMeasure, b: AtomicMeasure) -> TransportResult:
    """Exact circle W2 between two 1D atomic measures."""
    if a.dim != 1 or b.dim != 1:
        raise ValueError("circle W2 is one-dimensional")
    qa = CircleQuantile.from_atoms(a.points, a.weights)
    qb = CircleQuantile.from_atoms(b.points, b.weights)
    theta, cost, cut, thetas, _, evals = _optimal_shift(qa, qb)
    return TransportResult(math.sqrt(cost), "quantile1d",
                           {"theta": theta, "cut": cut, "cost": cost, "candidates": int(thetas.size),
                            "evaluations": evals})


def w2_circle_cells_atoms(u, ens_points, weights=None) -> TransportResult:
    """Exact circle W2 between a piecewise-constant density and an atomic measure."""
    uv = _density_values(u)
    pts = np.asarray(ens_points, dtype=float).ravel()
    w = np.full(pts.size, 1.0 / pts.size) if weights is None else np.asarray(weights, dtype=float)
    qu = CircleQuantile.from_cells(uv)
    qa = CircleQuantile.from_atoms(pts, w)
    theta, cost, cut, thetas, _, evals = _optimal_shift(qu, qa)
    return TransportResult(math.sqrt(cost), "quantile1d",
                           {"theta": theta, "cut": cut, "cost": cost, "candidates": int(thetas.size),
                            "evaluations": evals})
