"""Periodic grids on the unit torus and FFT-based calculus on them.

Fields are stored as cell values on a uniform lattice of ``n`` cells per axis.
Cell ``j`` is centred at the node ``x_j = j * h``; spectral operations treat the
cell values as collocation samples at those nodes.

Fourier convention: ``f_hat(m) = integral of f(x) exp(-2 pi i m.x) dx`` over the
torus, discretised as ``fft(values) / n**dim``. With this convention the
zero-frequency coefficient of a field is its mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("density", "scalar", "velocity")

# values in [-DENSITY_CLAMP, 0) are spectral ringing and are clamped to 0
DENSITY_CLAMP = 1e-12
DENSITY_MASS_TOL = 1e-8


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform lattice of ``n**dim`` cells on the torus ``[0, 1)**dim``."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def nodes(self) -> np.ndarray:
        """1D node coordinates ``j * h``."""
        return np.arange(self.n) * self.h

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays (one per axis) broadcast to ``shape``."""
        x = self.nodes()
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def frequencies(self) -> list[np.ndarray]:
        """Integer lattice frequencies per axis, FFT ordering, broadcastable."""
        m = np.fft.fftfreq(self.n, d=1.0 / self.n)
        out = []
        for axis in range(self.dim):
            shp = [1] * self.dim
            shp[axis] = self.n
            out.append(m.reshape(shp))
        return out

    def frequency_norm(self) -> np.ndarray:
        """``|m|`` on the full frequency lattice."""
        sq = sum(mj**2 for mj in self.frequencies())
        return np.sqrt(np.broadcast_to(sq, self.shape))

    def torus_distance_to_origin(self) -> np.ndarray:
        """Per-cell torus distance of the node to the origin."""
        x = self.nodes()
        d1 = np.minimum(x, 1.0 - x)
        sq = np.zeros(self.shape)
        for axis in range(self.dim):
            shp = [1] * self.dim
            shp[axis] = self.n
            sq = sq + (d1**2).reshape(shp)
        return np.sqrt(sq)


@dataclass(frozen=True)
class GridField:
    grid: PeriodicGrid
    values: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridMismatchError(f"values of shape {vals.shape} on grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite values")
        if self.kind == "density":
            lo = vals.min()
            if lo < -DENSITY_CLAMP:
                raise ValueError(f"density has negative value {lo:.3e}")
            if lo < 0:
                vals = np.maximum(vals, 0.0)
            m = vals.sum() * self.grid.cell_volume
            if abs(m - 1.0) > DENSITY_MASS_TOL:
                raise ValueError(f"density has mass {m!r}, expected 1")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray, kind: str | None = None) -> "GridField":
        return GridField(self.grid, values, self.kind if kind is None else kind)


@dataclass(frozen=True)
class SpectralCoefficients:
    grid: PeriodicGrid
    coeffs: np.ndarray = field(repr=False)

    def at(self, m: Sequence[int]) -> complex:
        idx = tuple(int(mj) % self.grid.n for mj in m)
        return complex(self.coeffs[idx])


def _check_same_grid(*fields: GridField) -> PeriodicGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid {f.grid} differs from {grid}")
    return grid


def forward_transform(f: GridField) -> SpectralCoefficients:
    return SpectralCoefficients(f.grid, np.fft.fftn(f.values) / f.grid.size)


def inverse_transform(c: SpectralCoefficients, kind: str = "scalar") -> GridField:
    vals = np.fft.ifftn(c.coeffs).real * c.grid.size
    return GridField(c.grid, vals, kind)


def apply_multiplier(values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Real field times a Fourier multiplier, back in physical space."""
    return np.fft.ifftn(np.fft.fftn(values) * multiplier).real


def convolve_periodic(f: GridField, g: GridField, kind: str = "scalar") -> GridField:
    """``(f * g)(x) = integral f(x - y) g(y) dy`` on the torus."""
    grid = _check_same_grid(f, g)
    vals = np.fft.ifftn(np.fft.fftn(f.values) * np.fft.fftn(g.values)).real * grid.cell_volume
    return GridField(grid, vals, kind)


def derivative_multipliers(grid: PeriodicGrid) -> list[np.ndarray]:
    """``2 pi i m_j`` per axis with the Nyquist mode zeroed (even ``n``)."""
    out = []
    for mj in grid.frequencies():
        mult = 2j * np.pi * mj
        if grid.n % 2 == 0:
            mult = np.where(mj == -grid.n // 2, 0.0, mult)
        out.append(mult)
    return out


def gradient_values(values: np.ndarray, grid: PeriodicGrid) -> list[np.ndarray]:
    fh = np.fft.fftn(values)
    return [np.fft.ifftn(fh * mult).real for mult in derivative_multipliers(grid)]


def gradient_spectral(f: GridField) -> list[GridField]:
    return [GridField(f.grid, g, "velocity") for g in gradient_values(f.values, f.grid)]


def mass(f: GridField) -> float:
    return float(f.values.sum() * f.grid.cell_volume)


def normalize_density(f: GridField) -> GridField:
    vals = np.array(f.values, dtype=float)
    if vals.min() < -DENSITY_CLAMP:
        raise ValueError(f"cannot normalise: negative value {vals.min():.3e}")
    vals = np.maximum(vals, 0.0)
    total = vals.sum() * f.grid.cell_volume
    if not total > 0:
        raise ValueError("cannot normalise a field with nonpositive mass")
    return GridField(f.grid, vals / total, "density")


def lp_norm(f: GridField, p: float = 2.0) -> float:
    if p == np.inf:
        return float(np.abs(f.values).max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return float((np.sum(np.abs(f.values) ** p) * f.grid.cell_volume) ** (1.0 / p))


def sample_at(f: GridField, x) -> np.ndarray | float:
    """Periodic multilinear interpolation of the nodal values at point(s) ``x``.

    A single point returns a float; an array of points (shape ``(k, dim)``, or
    ``(k,)`` in 1D) returns an array.
    """
    from pmelab._accel import core

    arr = np.asarray(x, dtype=float)
    dim = f.grid.dim
    if dim == 1:
        single = arr.ndim == 0
    else:
        single = arr.ndim == 1
    pts = np.ascontiguousarray(arr.reshape(-1, dim))
    out = core.interp_periodic(np.ascontiguousarray(f.values, dtype=float), pts)
    return float(out[0]) if single else out


def uniform_density(grid: PeriodicGrid) -> GridField:
    return GridField(grid, np.ones(grid.shape), "density")


def discrete_delta(grid: PeriodicGrid, index=None) -> GridField:
    vals = np.zeros(grid.shape)
    vals[tuple(index) if index is not None else (0,) * grid.dim] = 1.0 / grid.cell_volume
    return GridField(grid, vals, "density")


def density_from_function(grid: PeriodicGrid, func) -> GridField:
    """Evaluate ``func(*mesh)`` at the nodes and normalise to unit mass."""
    vals = np.broadcast_to(np.asarray(func(*grid.mesh()), dtype=float), grid.shape)
    return normalize_density(GridField(grid, np.array(vals), "scalar"))


def resample_spectral(values: np.ndarray, n_new: int) -> np.ndarray:
    """Fourier truncation or zero-padding of nodal values onto ``n_new**dim`` nodes.

    Mass (the zero mode) is preserved exactly. The Nyquist mode of the source
    is dropped when refining and when coarsening, which keeps the output real.
    """
    values = np.asarray(values, dtype=float)
    d = values.ndim
    n_old = values.shape[0]
    if n_new == n_old:
        return values.copy()
    fh = np.fft.fftn(values) / n_old**d
    keep = min(n_old, n_new)
    half = (keep - 1) // 2  # modes -half..half, Nyquist excluded
    out = np.zeros((n_new,) * d, dtype=complex)
    idx_old = np.r_[0 : half + 1, n_old - half : n_old]
    idx_new = np.r_[0 : half + 1, n_new - half : n_new]
    out[np.ix_(*([idx_new] * d))] = fh[np.ix_(*([idx_old] * d))]
    return np.fft.ifftn(out).real * n_new**d
