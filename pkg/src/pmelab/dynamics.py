"""Time evolution: particles, the mollified aggregation PDE and the porous medium reference.

Sign convention: particles repel, ``dx_i/dt = -(1/N) sum_j grad R_eps(x_i - x_j)``,
which is the Lagrangian form of ``u_t + div(V u) = 0`` with ``V = -grad R_eps * u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pmelab._accel import core
from pmelab.grid import (
    DENSITY_CLAMP,
    GridField,
    PeriodicGrid,
    derivative_multipliers,
    resample_spectral,
)
from pmelab.kernels import TorusKernel, UnresolvedKernelError, default_nshift, periodized_gradient

INTEGRATORS = ("euler", "rk4")


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] not in (1, 2, 3):
            raise ValueError(f"positions must have shape (N, d) with N >= 1, d <= 3; got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite particle position")
        pos = np.mod(pos, 1.0)
        pos[pos >= 1.0] = 0.0  # mod can round up to exactly 1
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weight(self) -> float:
        return 1.0 / self.count


@dataclass(frozen=True)
class SolverConfig:
    horizon: float
    cfl_factor: float = 0.5
    snapshot_times: tuple[float, ...] | None = None
    integrator: str = "rk4"
    pme_dt_coef: float = 0.2
    pme_floor: float = 1e-6
    max_steps: int = 10**9
    track_energy: bool = False

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.cfl_factor <= 1:
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        times = self.snapshot_times
        if times is None:
            times = tuple(np.linspace(0.0, self.horizon, 11))
        times = tuple(float(t) for t in times)
        if list(times) != sorted(times) or times[0] < 0 or times[-1] > self.horizon * (1 + 1e-12):
            raise ValueError("snapshot_times must be sorted and lie in [0, horizon]")
        object.__setattr__(self, "snapshot_times", times)


@dataclass
class Trajectory:
    times: list[float]
    snapshots: list
    config: SolverConfig
    steps: list[dict] = field(default_factory=list)
    # cumulative quantities sampled at snapshot times (energy integrals etc.)
    extras: dict[str, list[float]] = field(default_factory=dict)
    kernel: TorusKernel | None = None
    solver: str = ""

    def masses(self) -> list[float]:
        out = []
        for s in self.snapshots:
            if isinstance(s, GridField):
                out.append(float(s.values.sum() * s.grid.cell_volume))
            else:
                out.append(1.0)
        return out

    def final(self):
        return self.snapshots[-1]


# ---------------------------------------------------------------- particles


def deposit_particles(ens: ParticleEnsemble, grid: PeriodicGrid) -> GridField:
    if ens.dim != grid.dim:
        raise ValueError("ensemble and grid dimensions differ")
    vals = core.cic_deposit(np.ascontiguousarray(ens.positions), grid.n)
    return GridField(grid, vals, "density")


def _direct_velocity(pos: np.ndarray, K: TorusKernel) -> np.ndarray:
    spec = K.spec
    d = pos.shape[1]
    if spec.has_closed_form and spec.dim == d:
        nshift = default_nshift(spec, K.epsilon, d)
        return core.direct_velocity(np.ascontiguousarray(pos), spec.length * K.epsilon, spec.s, nshift)
    # no closed form: pairwise sum of the periodised gradient is the only option left
    z = (pos[:, None, :] - pos[None, :, :]).reshape(-1, d)
    g = periodized_gradient(spec, K.epsilon, z).reshape(pos.shape[0], pos.shape[0], d)
    return -g.sum(axis=1) / pos.shape[0]


def _grid_velocity(pos: np.ndarray, K: TorusKernel) -> np.ndarray:
    grid = K.grid
    if K.epsilon < 2 * grid.h * (1 - 1e-12):
        raise UnresolvedKernelError(f"epsilon={K.epsilon} below 2h on the velocity grid")
    rho = core.cic_deposit(np.ascontiguousarray(pos), grid.n)
    comps = K.gradient_apply(rho)
    return np.stack([-core.interp_periodic(np.ascontiguousarray(c), pos) for c in comps], axis=1)


def particle_velocity(ens: ParticleEnsemble, K: TorusKernel, mode: str = "direct") -> np.ndarray:
    """Velocities of all particles, shape ``(N, d)``."""
    if mode == "direct":
        v = _direct_velocity(ens.positions, K)
    elif mode == "grid":
        v = _grid_velocity(ens.positions, K)
    else:
        raise ValueError(f"unknown velocity mode {mode!r}")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite particle velocity")
    return v


def step_particles(ens: ParticleEnsemble, K: TorusKernel, dt: float, integrator: str = "rk4",
                   mode: str = "direct") -> ParticleEnsemble:
    if not dt > 0:
        raise ValueError("dt must be positive")

    def vel(p):
        return particle_velocity(ParticleEnsemble(p), K, mode)

    x = ens.positions
    if integrator == "euler":
        return ParticleEnsemble(x + dt * vel(x))
    if integrator == "rk4":
        k1 = vel(x)
        k2 = vel(x + 0.5 * dt * k1)
        k3 = vel(x + 0.5 * dt * k2)
        k4 = vel(x + dt * k3)
        return ParticleEnsemble(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
    raise ValueError(f"unknown integrator {integrator!r}")


def particle_stiffness(K: TorusKernel) -> float:
    """Largest rate ``(2 pi |m|)^2 Rhat(eps m)`` over the kernel's frequency lattice."""
    m2 = K.grid.frequency_norm() ** 2
    return float(np.max((2 * np.pi) ** 2 * m2 * np.abs(K.multipliers)))


def solve_particles(ens: ParticleEnsemble, K: TorusKernel, cfg: SolverConfig,
                    mode: str = "direct") -> Trajectory:
    """Integrate the particle system with ``dt = cfl * min(eps / max|v|, 2 / lam)``.

    The displacement rule alone lets ``dt`` grow without bound as the
    velocities vanish. ``lam`` is the largest decay rate of the system
    linearised about the uniform state, ``max (2 pi |m|)^2 Rhat(eps m)``,
    of order ``eps^-2``; without the second cap roundoff is amplified.
    Steps are also cut at snapshot times.
    """
    traj = Trajectory([], [], cfg, kernel=K, solver="particles")
    t = 0.0
    current = ens
    dt_stiff = cfg.cfl_factor * 2.0 / particle_stiffness(K)
    for t_snap in cfg.snapshot_times:
        while t < t_snap - 1e-14:
            v = particle_velocity(current, K, mode)
            vmax = float(np.abs(v).max())
            dt = dt_stiff
            if vmax > 0:
                dt = min(dt, cfg.cfl_factor * K.epsilon / vmax)
            dt = min(dt, t_snap - t)
            current = step_particles(current, K, dt, cfg.integrator, mode)
            t += dt
            traj.steps.append({"time": t, "dt": dt, "max_velocity": vmax})
        traj.times.append(t_snap)
        traj.snapshots.append(current)
    return traj


def inverse_cdf_positions(u: GridField, count: int) -> np.ndarray:
    """Deterministic 1D placement at the ``(i + 1/2)/N`` quantiles of ``u``.

    Cell ``j`` covers ``[x_j - h/2, x_j + h/2)`` with constant density, so the
    CDF is piecewise linear and the quantiles are exact.
    """
    if u.grid.dim != 1:
        raise ValueError("inverse-CDF placement is one-dimensional")
    h = u.grid.h
    w = np.maximum(u.values, 0.0) * h
    w = w / w.sum()
    cdf = np.concatenate([[0.0], np.cumsum(w)])
    cdf[-1] = 1.0
    edges = (np.arange(u.grid.n + 1) - 0.5) * h
    levels = (np.arange(count) + 0.5) / count
    j = np.clip(np.searchsorted(cdf, levels, side="right") - 1, 0, u.grid.n - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(w[j] > 0, (levels - cdf[j]) / w[j], 0.5)
    return np.mod(edges[j] + frac * h, 1.0)


def _stratified(vals: np.ndarray, h: float, counts_per_axis: int, levels_prefix=()) -> list:
    """Knothe-Rosenblatt placement: marginal of axis 0, then conditionals."""
    n = vals.shape[0]
    marg = vals.reshape(n, -1).sum(axis=1) if vals.ndim > 1 else vals
    w = np.maximum(marg, 0.0)
    w = w / w.sum()
    cdf = np.concatenate([[0.0], np.cumsum(w)])
    cdf[-1] = 1.0
    levels = (np.arange(counts_per_axis) + 0.5) / counts_per_axis
    j = np.clip(np.searchsorted(cdf, levels, side="right") - 1, 0, n - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(w[j] > 0, (levels - cdf[j]) / w[j], 0.5)
    coords = (j - 0.5 + frac) * h
    if vals.ndim == 1:
        return [levels_prefix + (c,) for c in coords]
    out = []
    for jj, c in zip(j, coords):
        out.extend(_stratified(vals[jj], h, counts_per_axis, levels_prefix + (c,)))
    return out


def stratified_positions(u: GridField, count: int) -> np.ndarray:
    """Deterministic placement: inverse CDF in 1D, tensorised conditional quantiles in d >= 2.

    In d >= 2 the count is rounded to the nearest perfect power ``k**d``.
    """
    if u.grid.dim == 1:
        return inverse_cdf_positions(u, count)[:, None]
    k = max(1, int(round(count ** (1.0 / u.grid.dim))))
    pts = np.array(_stratified(np.asarray(u.values), u.grid.h, k))
    return np.mod(pts, 1.0)


# ---------------------------------------------------------------- grid aggregation


class _AggregationOperator:
    """Spectral pieces of ``V = -grad R * u`` at nodes and at cell faces."""

    def __init__(self, K: TorusKernel):
        self.K = K
        grid = K.grid
        self.dmult = derivative_multipliers(grid)
        self.face_mult = []
        for axis, mj in enumerate(grid.frequencies()):
            shift = np.exp(1j * np.pi * mj / grid.n)  # evaluate at x + h/2 along this axis
            self.face_mult.append(-K.multipliers * self.dmult[axis] * shift)
        self.node_mult = [-K.multipliers * dm for dm in self.dmult]
        self.sqrt_grad_mult = [np.sqrt(K.multipliers) * dm for dm in self.dmult]
        # largest symbol of the linearised operator u |2 pi m|^2 R_hat(eps m), per unit u
        self.parabolic_rate = float(np.max(sum(np.abs(dm) ** 2 for dm in self.dmult) * K.multipliers))

    def face_velocities(self, uh: np.ndarray) -> list[np.ndarray]:
        return [np.fft.ifftn(uh * m).real for m in self.face_mult]

    def dissipation(self, u: np.ndarray, uh: np.ndarray) -> tuple[float, float]:
        """``(integral u |V|^2, ||grad R^1/2 * u||^2)`` at the current state."""
        cell = self.K.grid.cell_volume
        quad = 0.0
        ent = 0.0
        for nm, sm in zip(self.node_mult, self.sqrt_grad_mult):
            v = np.fft.ifftn(uh * nm).real
            g = np.fft.ifftn(uh * sm).real
            quad += float(np.sum(u * v * v))
            ent += float(np.sum(g * g))
        return quad * cell, ent * cell


def _upwind_divergence(u: np.ndarray, faces: list[np.ndarray], h: float) -> np.ndarray:
    div = np.zeros_like(u)
    for axis, vf in enumerate(faces):
        up = np.roll(u, -1, axis)
        flux = np.where(vf > 0, vf * u, vf * up)
        div += (flux - np.roll(flux, 1, axis)) / h
    return div


def solve_aggregation_grid(u0: GridField, K: TorusKernel, cfg: SolverConfig) -> Trajectory:
    """First-order upwind finite volume for ``u_t + div(V u) = 0``, ``V = -grad R_eps * u``.

    With ``cfg.track_energy`` the dissipation integrals of the interaction
    energy and of the entropy are accumulated per step (trapezoid rule) and
    stored in ``extras`` at every snapshot.
    """
    if u0.grid != K.grid:
        raise ValueError("initial field and kernel live on different grids")
    grid = K.grid
    if K.epsilon < 2 * grid.h * (1 - 1e-12):
        raise UnresolvedKernelError(f"epsilon={K.epsilon} below 2h")
    op = _AggregationOperator(K)
    h, d = grid.h, grid.dim
    u = np.array(u0.values, dtype=float)
    kind = u0.kind
    traj = Trajectory([], [], cfg, kernel=K, solver="aggregation")
    track = cfg.track_energy
    if track:
        traj.extras = {"quadratic_dissipation": [], "entropy_dissipation": []}
    cum_q = cum_e = 0.0
    t = 0.0
    uh = np.fft.fftn(u)
    if track:
        dq, de = op.dissipation(u, uh)
    nsteps = 0
    for t_snap in cfg.snapshot_times:
        while t < t_snap - 1e-14:
            if nsteps >= cfg.max_steps:
                raise RuntimeError("aggregation solver: step limit reached")
            faces = op.face_velocities(uh)
            vmax = max(float(np.abs(f).max()) for f in faces)
            if not math.isfinite(vmax):
                raise FloatingPointError("velocity blow-up")
            remaining = t_snap - t
            # transport CFL plus the parabolic cap, which binds once eps is near h
            dt = min(remaining, cfg.cfl_factor / (op.parabolic_rate * max(float(u.max()), 1e-300)))
            if vmax > 0:
                dt = min(dt, cfg.cfl_factor * h / (d * vmax))
            u = u - dt * _upwind_divergence(u, faces, h)
            lo = u.min()
            if lo < -DENSITY_CLAMP:
                raise FloatingPointError(f"aggregation solver produced negative density {lo:.3e}")
            if lo < 0:
                u = np.maximum(u, 0.0)
            uh = np.fft.fftn(u)
            if track:
                dq_new, de_new = op.dissipation(u, uh)
                cum_q += 0.5 * dt * (dq + dq_new)
                cum_e += 0.5 * dt * (de + de_new)
                dq, de = dq_new, de_new
            t += dt
            nsteps += 1
            traj.steps.append({"time": t, "dt": dt, "max_velocity": vmax})
        traj.times.append(t_snap)
        traj.snapshots.append(GridField(grid, u.copy(), kind))
        if track:
            traj.extras["quadratic_dissipation"].append(cum_q)
            traj.extras["entropy_dissipation"].append(cum_e)
    return traj


# ---------------------------------------------------------------- porous medium reference


def pme_dt_coefficient(dim: int, requested: float = 0.2) -> float:
    """Explicit stability needs ``coef <= 1/(2 d)``; 0.2 is safe for d <= 2 only."""
    return min(requested, 0.8 / (2 * dim))


def solve_pme_reference(u0: GridField, cfg: SolverConfig, reference_n: int | None = None) -> Trajectory:
    """Explicit conservative scheme for ``u_t = (1/2) Lap(u^2)``.

    ``reference_n`` solves on a coarser grid (Fourier truncation of ``u0``) and
    returns snapshots spectrally interpolated back to the grid of ``u0``.
    Any nonnegative field is accepted, not only unit-mass densities.
    """
    if u0.values.min() < -DENSITY_CLAMP:
        raise ValueError("PME initial data must be nonnegative")
    fine = u0.grid
    n_solve = fine.n if reference_n is None or reference_n >= fine.n else int(reference_n)
    grid = PeriodicGrid(fine.dim, n_solve)
    u = np.maximum(np.asarray(u0.values, dtype=float), 0.0)
    if n_solve != fine.n:
        u = resample_spectral(u, n_solve)
        if u.min() < -1e-10:
            raise ValueError("initial data not resolved on the reference grid")
        u = np.maximum(u, 0.0)
    coef = pme_dt_coefficient(grid.dim, cfg.pme_dt_coef)
    if coef * grid.h**2 / max(float(u.max()), cfg.pme_floor) < 1e-300:
        raise FloatingPointError("PME time step underflow")
    traj = Trajectory([], [], cfg, solver="pme")
    traj.extras = {"steps": [], "halvings": [], "max": []}
    t = 0.0
    total_steps = total_halv = 0
    for t_snap in cfg.snapshot_times:
        if t_snap > t:
            u, steps, halv = core.pme_advance(u, grid.h, t_snap - t, coef, cfg.pme_floor,
                                              cfg.max_steps - total_steps)
            total_steps += int(steps)
            total_halv += int(halv)
            t = t_snap
        out = u if n_solve == fine.n else resample_spectral(u, fine.n)
        lo = out.min()
        if lo < -1e-10:
            raise FloatingPointError(f"PME solution negative ({lo:.3e})")
        traj.times.append(t_snap)
        traj.snapshots.append(GridField(fine, np.maximum(out, 0.0), "scalar" if u0.kind != "density" else "density"))
        traj.extras["steps"].append(total_steps)
        traj.extras["halvings"].append(total_halv)
        traj.extras["max"].append(float(u.max()))
    return traj
