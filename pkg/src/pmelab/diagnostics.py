"""Energies, dissipation ledgers, spectral inequality checks and the 1D commutator."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from pmelab.grid import GridField, PeriodicGrid, apply_multiplier, derivative_multipliers
from pmelab.kernels import (
    KernelSpec,
    TorusKernel,
    realize_on_torus,
    sqrt_gradient_ratio,
)
from pmelab.transport import w2_circle_1d


def _check_density(u: GridField):
    if u.values.min() < -1e-12:
        raise ValueError(f"negative density value {u.values.min():.3e}")


def quadratic_energy(u: GridField) -> float:
    _check_density(u)
    return float(0.5 * np.sum(u.values**2) * u.grid.cell_volume)


def interaction_energy(u: GridField, K: TorusKernel) -> float:
    _check_density(u)
    return float(0.5 * np.sum(u.values * K.apply(u.values)) * u.grid.cell_volume)


def entropy(u: GridField) -> float:
    _check_density(u)
    v = np.maximum(u.values, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
    return float(np.sum(terms) * u.grid.cell_volume)


def sqrt_norm_sq(u: GridField, K: TorusKernel) -> float:
    """``||R^1/2 * u||_2^2``."""
    w = apply_multiplier(u.values, np.sqrt(K.multipliers))
    return float(np.sum(w * w) * u.grid.cell_volume)


def quadratic_dissipation(u: GridField, K: TorusKernel) -> float:
    """``integral u |grad(R * u)|^2``."""
    fh = np.fft.fftn(u.values) * K.multipliers
    total = 0.0
    for dm in derivative_multipliers(u.grid):
        g = np.fft.ifftn(fh * dm).real
        total += float(np.sum(u.values * g * g))
    return total * u.grid.cell_volume


def entropy_dissipation(u: GridField, K: TorusKernel) -> float:
    """``||grad R^1/2 * u||_2^2``."""
    fh = np.fft.fftn(u.values) * np.sqrt(K.multipliers)
    total = 0.0
    for dm in derivative_multipliers(u.grid):
        g = np.fft.ifftn(fh * dm).real
        total += float(np.sum(g * g))
    return total * u.grid.cell_volume


def _trapezoid_cumulative(times, values) -> list[float]:
    out = [0.0]
    for i in range(1, len(times)):
        out.append(out[-1] + 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]))
    return out


@dataclass
class EnergyLedger:
    times: list[float]
    quadratic: list[float]
    interaction: list[float]
    entropy: list[float]
    sqrt_norm_sq: list[float]
    quadratic_dissipation_rate: list[float]
    entropy_dissipation_rate: list[float]
    quadratic_dissipation_integral: list[float]
    entropy_dissipation_integral: list[float]
    integration: str
    rel_tol: float
    energy_excess: list[float] = field(default_factory=list)
    entropy_excess: list[float] = field(default_factory=list)
    energy_ok: bool = True
    entropy_ok: bool = True

    @property
    def passed(self) -> bool:
        return self.energy_ok and self.entropy_ok

    def rows(self) -> list[dict]:
        keys = ["times", "quadratic", "interaction", "entropy", "sqrt_norm_sq",
                "quadratic_dissipation_rate", "entropy_dissipation_rate",
                "quadratic_dissipation_integral", "entropy_dissipation_integral",
                "energy_excess", "entropy_excess"]
        return [{("time" if k == "times" else k): getattr(self, k)[i] for k in keys}
                for i in range(len(self.times))]

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()) if rows else ["time"])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) for k, v in r.items()})
        return buf.getvalue()

    def summary(self) -> dict:
        return {"energy_ok": self.energy_ok, "entropy_ok": self.entropy_ok, "passed": self.passed,
                "max_energy_excess": max(self.energy_excess, default=0.0),
                "max_entropy_excess": max(self.entropy_excess, default=0.0),
                "integration": self.integration, "rel_tol": self.rel_tol}


def check_energy_dissipation(traj, K: TorusKernel, rel_tol: float = 1e-6) -> EnergyLedger:
    """Evaluate both energy-dissipation inequalities at every snapshot.

    (a) ``||R^1/2 * u(t)||^2 + int_0^t int u |grad u_eps|^2 <= ||R^1/2 * u0||^2``
    (b) ``int u log u (t) + int_0^t ||grad R^1/2 * u||^2 <= int u0 log u0``

    Time integrals come from the solver's per-step accumulation when present,
    otherwise from the trapezoid rule on snapshots. The excess columns hold
    ``(lhs - rhs) / scale`` where ``scale`` is the largest magnitude among the
    terms; an inequality fails when the excess exceeds ``rel_tol``.
    """
    if traj.kernel is not None and (traj.kernel.grid != K.grid or
                                    not np.array_equal(traj.kernel.multipliers, K.multipliers)):
        raise ValueError("trajectory was produced with a different kernel")
    snaps = traj.snapshots
    if not snaps or snaps[0].grid != K.grid:
        raise ValueError("trajectory and kernel grids differ")
    times = list(traj.times)
    q = [quadratic_energy(s) for s in snaps]
    e_int = [interaction_energy(s, K) for s in snaps]
    ent = [entropy(s) for s in snaps]
    sq = [sqrt_norm_sq(s, K) for s in snaps]
    dq = [quadratic_dissipation(s, K) for s in snaps]
    de = [entropy_dissipation(s, K) for s in snaps]
    if "quadratic_dissipation" in traj.extras:
        iq = list(traj.extras["quadratic_dissipation"])
        ie = list(traj.extras["entropy_dissipation"])
        integration = "per-step trapezoid"
    else:
        iq = _trapezoid_cumulative(times, dq)
        ie = _trapezoid_cumulative(times, de)
        integration = "snapshot trapezoid"
    led = EnergyLedger(times, q, e_int, ent, sq, dq, de, iq, ie, integration, rel_tol)
    for i in range(len(times)):
        lhs1, rhs1 = sq[i] + iq[i], sq[0]
        s1 = max(abs(sq[i]), abs(iq[i]), abs(rhs1), 1e-300)
        lhs2, rhs2 = ent[i] + ie[i], ent[0]
        s2 = max(abs(ent[i]), abs(ie[i]), abs(rhs2), 1e-300)
        led.energy_excess.append((lhs1 - rhs1) / s1)
        led.entropy_excess.append((lhs2 - rhs2) / s2)
    led.energy_ok = all(x <= rel_tol for x in led.energy_excess)
    led.entropy_ok = all(x <= rel_tol for x in led.entropy_excess)
    return led


# ---------------------------------------------------------------- spectral inequalities


def random_fields(grid: PeriodicGrid, kind: str, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Trial fields: ``smooth`` (decaying random modes), ``white`` (cell noise),
    ``dnoise`` (spectral derivative of white noise), ``nonneg`` (positive mixtures)."""
    out = []
    freqs = grid.frequency_norm()
    for _ in range(count):
        if kind == "smooth":
            coef = np.fft.fftn(rng.standard_normal(grid.shape)) * np.exp(-0.5 * (freqs / 3.0) ** 2)
            f = np.fft.ifftn(coef).real
        elif kind == "white":
            f = rng.standard_normal(grid.shape)
        elif kind == "dnoise":
            axis = int(rng.integers(grid.dim))
            f = np.fft.ifftn(np.fft.fftn(rng.standard_normal(grid.shape)) * derivative_multipliers(grid)[axis]).real
        elif kind == "nonneg":
            f = _nonneg_field(grid, rng)
        else:
            raise ValueError(f"unknown field kind {kind!r}")
        out.append(f)
    return out


def _nonneg_field(grid: PeriodicGrid, rng: np.random.Generator) -> np.ndarray:
    choice = int(rng.integers(4))
    freqs = grid.frequency_norm()
    if choice == 0:  # log-normal smooth
        width = rng.uniform(2.0, 8.0)
        g = np.fft.ifftn(np.fft.fftn(rng.standard_normal(grid.shape)) * np.exp(-0.5 * (freqs / width) ** 2)).real
        return np.exp(g / (g.std() + 1e-300))
    if choice == 1:  # rectified noise
        return np.abs(rng.standard_normal(grid.shape))
    if choice == 2:  # few spikes
        f = np.zeros(grid.shape)
        for _ in range(int(rng.integers(1, 6))):
            f[tuple(rng.integers(grid.n, size=grid.dim))] += rng.uniform(0.5, 2.0)
        return f
    # indicator of a random box
    mesh = grid.mesh()
    c = rng.random(grid.dim)
    w = rng.uniform(0.05, 0.4, grid.dim)
    mask = np.ones(grid.shape, dtype=bool)
    for x, cj, wj in zip(mesh, c, w):
        dist = np.abs(x - cj)
        mask &= np.minimum(dist, 1 - dist) < wj / 2
    return mask.astype(float) + 1e-3


def intermediate1_ratio(f: np.ndarray, spec: KernelSpec, epsilon: float, eta: float,
                        grid: PeriodicGrid) -> float:
    """``||R_eta * f|| / ((eps/eta)^k ||R_eps^1/2 * f||)`` via Parseval."""
    k = spec.envelope.k
    xi = grid.frequency_norm()
    fh = np.abs(np.fft.fftn(f)) ** 2
    num = np.sum(fh * spec.fourier(eta * xi) ** 2)
    den = np.sum(fh * spec.fourier(epsilon * xi))
    return float(math.sqrt(num / den) / (epsilon / eta) ** k)


@dataclass
class SpectralCheckReport:
    name: str
    params: dict
    ratios: dict
    bound: float | None
    max_ratio: float
    spread: float | None
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["group", "trial", "ratio"])
        for group, vals in self.ratios.items():
            for i, r in enumerate(vals):
                w.writerow([group, i, repr(r)])
        return buf.getvalue()


def check_lemma_intermediate1(spec: KernelSpec, epsilon: float, eta: float, grid: PeriodicGrid,
                              trials: int = 20, seed: int = 0,
                              kinds=("smooth", "white", "dnoise")) -> SpectralCheckReport:
    """Intermediate-scale L2 bound with the explicit envelope constant."""
    if not 0 < eta < epsilon:
        raise ValueError("need 0 < eta < epsilon")
    if spec.envelope is None:
        raise ValueError("kernel has no analytic envelope constants")
    rng = np.random.default_rng(seed)
    C = spec.envelope.lemma_constant()
    ratios = {}
    for kind in kinds:
        ratios[kind] = [intermediate1_ratio(f, spec, epsilon, eta, grid)
                        for f in random_fields(grid, kind, trials, rng)]
    mx = max(max(v) for v in ratios.values())
    return SpectralCheckReport("intermediate-scale L2 bound",
                               {"epsilon": epsilon, "eta": eta, "n": grid.n, "dim": grid.dim,
                                "trials": trials, "seed": seed, "kernel": spec.name},
                               ratios, C, mx, None, bool(mx <= C))


def check_lemma_intermediate2(spec: KernelSpec, eps_list, grid: PeriodicGrid, trials: int = 20,
                              seed: int = 0, max_spread: float = 2.0) -> SpectralCheckReport:
    """Square-root gradient bound: ``eps || |grad R^1/2| * f || / || R^1/2 * f ||`` stable in eps."""
    rng = np.random.default_rng(seed)
    fields = random_fields(grid, "nonneg", trials, rng)
    ratios = {}
    for eps in eps_list:
        K = realize_on_torus(spec, eps, grid)
        ratios[f"eps={eps:g}"] = [sqrt_gradient_ratio(K, f) for f in fields]
    maxima = [max(v) for v in ratios.values()]
    per_field = np.array(list(ratios.values()))  # (n_eps, trials)
    spread_max = float(max(maxima) / min(maxima))
    spread_field = float(np.max(per_field.max(axis=0) / per_field.min(axis=0)))
    spread = max(spread_max, spread_field)
    return SpectralCheckReport("square-root gradient bound",
                               {"eps": list(eps_list), "n": grid.n, "dim": grid.dim, "trials": trials,
                                "seed": seed, "kernel": spec.name, "spread_of_maxima": spread_max,
                                "spread_per_field": spread_field},
                               ratios, None, max(maxima), spread, bool(spread <= max_spread))


# ---------------------------------------------------------------- L2 error and commutator


def l2_mollified_error(u_traj, ut_traj, K: TorusKernel) -> float:
    """``||u - R^1/2 * ut||`` in L2 over space-time (trapezoid rule in time)."""
    if len(u_traj.times) != len(ut_traj.times) or not np.allclose(u_traj.times, ut_traj.times, atol=1e-12):
        raise ValueError("snapshot times differ")
    half = np.sqrt(K.multipliers)
    vals = []
    for a, b in zip(u_traj.snapshots, ut_traj.snapshots):
        if a.grid != K.grid or b.grid != K.grid:
            raise ValueError("snapshot grid differs from kernel grid")
        diff = a.values - apply_multiplier(b.values, half)
        vals.append(float(np.sum(diff * diff) * K.grid.cell_volume))
    t = list(u_traj.times)
    if len(t) == 1:
        return 0.0
    return math.sqrt(_trapezoid_cumulative(t, vals)[-1])


@dataclass
class CommutatorEntry:
    time: float
    D: float
    G: float
    C: float
    w2: float
    identity_residual: float


@dataclass
class CommutatorLedger1D:
    epsilon: float
    entries: list[CommutatorEntry] = field(default_factory=list)
    w2sq_derivative: list[float] = field(default_factory=list)

    def max_G(self) -> float:
        return max((e.G for e in self.entries), default=-math.inf)

    def max_abs_C(self) -> float:
        return max((abs(e.C) for e in self.entries), default=0.0)

    def c_constant(self) -> float:
        return self.max_abs_C() / self.epsilon

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["time", "D", "G", "C", "w2", "identity_residual", "d_half_w2sq_dt"])
        for i, e in enumerate(self.entries):
            deriv = self.w2sq_derivative[i] if i < len(self.w2sq_derivative) else ""
            w.writerow([repr(e.time), repr(e.D), repr(e.G), repr(e.C), repr(e.w2),
                        repr(e.identity_residual), repr(deriv)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"epsilon": self.epsilon, "max_G": self.max_G(), "max_abs_C": self.max_abs_C(),
                "c_constant": self.c_constant(),
                "max_identity_residual": max((e.identity_residual for e in self.entries), default=0.0)}


def commutator_decomposition_1d(u: GridField, ut: GridField, K: TorusKernel, time: float = 0.0) -> CommutatorEntry:
    """``D``, ``G``, ``C`` for the PME solution ``u`` and the mollified solution ``ut``.

    ``D = int v1 (-d(R * ut)) ut - int v0 (-du) u``,
    ``C = -int d(u v0) (R * u - u)``, ``G = D + C``.
    """
    if u.grid.dim != 1 or ut.grid != u.grid or K.grid != u.grid:
        raise ValueError("commutator needs two 1D densities on the kernel grid")
    h = u.grid.h
    res = w2_circle_1d(u, ut)
    geo = res.geodesic
    dm = derivative_multipliers(u.grid)[0]

    def deriv(f):
        return np.fft.ifftn(np.fft.fftn(f) * dm).real

    uu, vv = np.asarray(u.values), np.asarray(ut.values)
    vel_t = -deriv(K.apply(vv))
    vel_u = -deriv(uu)
    D = float(np.sum(geo.v1 * vel_t * vv - geo.v0 * vel_u * uu) * h)
    C = float(-np.sum(deriv(uu * geo.v0) * (K.apply(uu) - uu)) * h)
    G = D + C
    return CommutatorEntry(time, D, G, C, res.distance, abs(D - (G - C)))


def commutator_ledger_1d(u_traj, ut_traj, K: TorusKernel) -> CommutatorLedger1D:
    if len(u_traj.times) != len(ut_traj.times):
        raise ValueError("snapshot times differ")
    led = CommutatorLedger1D(K.epsilon)
    for t, a, b in zip(u_traj.times, u_traj.snapshots, ut_traj.snapshots):
        led.entries.append(commutator_decomposition_1d(a, b, K, t))
    half_sq = [0.5 * e.w2**2 for e in led.entries]
    t = list(u_traj.times)
    if len(t) >= 2:
        led.w2sq_derivative = list(np.gradient(half_sq, t))
    return led


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=float)
