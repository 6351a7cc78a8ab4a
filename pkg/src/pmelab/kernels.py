"""Mollification kernels, their torus realisation and admissibility checks.

A kernel is described by its radial Fourier profile ``R_hat(|xi|)`` with
``R_hat(0) = 1``. On the torus the scaled kernel ``R_eps`` is realised
spectrally: the Fourier multiplier at lattice frequency ``m`` is
``R_hat(eps * |m|)``, which is exactly the Fourier series of the lattice sum
``sum_m R_eps(x + m)``.

Two families carry spatial closed forms. With ``nu = s - d/2`` and the Bessel
function ``K_nu``,

    g_s(r) = 2**(1 - s) / ((2 pi)**(d/2) Gamma(s)) * r**nu * K_nu(r)

has angular Fourier transform ``(1 + |omega|^2)^-s``; a kernel with profile
``(1 + (2 pi L |xi|)^2)^-s`` is then ``R(x) = L**-d g_s(|x| / L)``.
Matern uses ``L = 1/(2 pi)``; the 1D Laplace kernel ``exp(-|x|)/2`` is
``s = 1, L = 1``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gamma, kv

from pmelab.grid import (
    GridField,
    PeriodicGrid,
    apply_multiplier,
    derivative_multipliers,
)


class UnresolvedKernelError(ValueError):
    """Raised when the kernel scale is below the grid resolution guard."""


@dataclass(frozen=True)
class Envelope:
    """Constants of the two-sided Fourier envelope.

    ``1/alpha <= R_hat <= 1`` on ``|xi| <= 1`` and
    ``a |xi|^-2k <= R_hat <= b |xi|^-k`` beyond.
    """

    alpha: float
    a: float
    b: float
    k: float

    def lemma_constant(self) -> float:
        """``(alpha + (1 + b^2)/a)^(1/2)``, the intermediate-scale L2 constant."""
        return math.sqrt(self.alpha + (1.0 + self.b**2) / self.a)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    profile: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    name: str = ""
    k: float | None = None
    envelope: Envelope | None = None
    # spatial closed form, see module docstring
    s: float | None = None
    length: float | None = None
    dim: int | None = None

    def fourier(self, xi) -> np.ndarray:
        return np.asarray(self.profile(np.abs(np.asarray(xi, dtype=float))), dtype=float)

    @property
    def has_closed_form(self) -> bool:
        return self.s is not None and self.length is not None and self.dim is not None

    def spatial(self, r, epsilon: float = 1.0) -> np.ndarray:
        """Whole-space kernel ``R_eps`` at radius ``r``."""
        if not self.has_closed_form:
            raise ValueError(f"kernel {self.name!r} has no spatial closed form")
        scale = self.length * epsilon
        d, s = self.dim, self.s
        nu = s - d / 2.0
        pref = 2.0 ** (1.0 - s) / ((2.0 * math.pi) ** (d / 2.0) * gamma(s))
        rr = np.asarray(r, dtype=float) / scale
        with np.errstate(invalid="ignore", divide="ignore"):
            val = pref * rr**nu * kv(nu, rr)
        at0 = pref * 2.0 ** (nu - 1.0) * gamma(nu) if nu > 0 else np.inf
        return np.where(rr > 0, val, at0) / scale**d

    def radial_derivative(self, r, epsilon: float = 1.0) -> np.ndarray:
        """``d/dr R_eps`` (zero at the origin when it exists)."""
        if not self.has_closed_form:
            raise ValueError(f"kernel {self.name!r} has no spatial closed form")
        scale = self.length * epsilon
        d, s = self.dim, self.s
        nu = s - d / 2.0
        pref = 2.0 ** (1.0 - s) / ((2.0 * math.pi) ** (d / 2.0) * gamma(s))
        rr = np.asarray(r, dtype=float) / scale
        with np.errstate(invalid="ignore", divide="ignore"):
            val = -pref * rr**nu * kv(nu - 1.0, rr)
        return np.where(rr > 0, val, 0.0) / scale ** (d + 1)

    def decay_rate(self) -> float:
        """Exponential decay rate of the whole-space kernel in units of ``epsilon``."""
        return 1.0 / self.length if self.length else 0.0


def matern_kernel(s: float, d: int) -> KernelSpec:
    """Matern profile ``(1 + |xi|^2)^-s`` with envelope ``k = s, a = 2^-s, b = 1, alpha = 2^s``."""
    if s <= 0:
        raise ValueError(f"Matern exponent must be positive, got {s}")
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if 2 * s <= d + 2:
        warnings.warn(
            f"Matern s={s} in d={d} is below the smoothness threshold 2k > d + 2",
            stacklevel=2,
        )
    env = Envelope(alpha=2.0**s, a=2.0**-s, b=1.0, k=float(s))
    return KernelSpec(
        family="matern",
        profile=lambda r: (1.0 + r * r) ** (-s),
        name=f"matern(s={s:g})",
        k=float(s),
        envelope=env,
        s=float(s),
        length=1.0 / (2.0 * math.pi),
        dim=d,
    )


def laplace_kernel_1d(d: int = 1) -> KernelSpec:
    """``R(x) = exp(-|x|)/2`` with profile ``1/(1 + 4 pi^2 xi^2)``; convex off the origin."""
    if d != 1:
        raise ValueError("the Laplace kernel is only available in one dimension")
    c = 1.0 / (1.0 + 4.0 * math.pi**2)
    env = Envelope(alpha=1.0 + 4.0 * math.pi**2, a=c, b=c, k=1.0)
    return KernelSpec(
        family="laplace1d",
        profile=lambda r: 1.0 / (1.0 + 4.0 * math.pi**2 * r * r),
        name="laplace1d",
        k=1.0,
        envelope=env,
        s=1.0,
        length=1.0,
        dim=1,
    )


def custom_spectral(profile: Callable, name: str = "custom", k: float | None = None,
                    envelope: Envelope | None = None) -> KernelSpec:
    val0 = float(np.asarray(profile(np.array([0.0])))[0])
    if abs(val0 - 1.0) > 1e-12:
        raise ValueError(f"profile must equal 1 at the origin, got {val0}")
    return KernelSpec(family="custom", profile=profile, name=name, k=k, envelope=envelope)


def sqrt_spec(spec: KernelSpec) -> KernelSpec:
    """KernelSpec of the Fourier square root; Matern-type closed forms halve ``s``."""
    prof = spec.profile
    env = None
    if spec.envelope is not None:
        e = spec.envelope
        env = Envelope(alpha=math.sqrt(e.alpha), a=math.sqrt(e.a), b=math.sqrt(e.b), k=e.k / 2)
    return replace(
        spec,
        profile=lambda r: np.sqrt(prof(r)),
        name=f"{spec.name}^1/2",
        k=None if spec.k is None else spec.k / 2,
        envelope=env,
        s=None if spec.s is None else spec.s / 2,
    )


@dataclass(frozen=True)
class TorusKernel:
    spec: KernelSpec
    epsilon: float
    grid: PeriodicGrid
    multipliers: np.ndarray = field(repr=False)
    label: str = ""

    @property
    def spatial(self) -> GridField:
        vals = np.fft.ifftn(self.multipliers).real * self.grid.size
        return GridField(self.grid, vals, "scalar")

    def apply(self, values: np.ndarray) -> np.ndarray:
        """``K * f`` for nodal values ``f`` (spectral)."""
        return apply_multiplier(values, self.multipliers)

    def gradient_apply(self, values: np.ndarray) -> list[np.ndarray]:
        """``grad K * f`` per axis."""
        fh = np.fft.fftn(values) * self.multipliers
        return [np.fft.ifftn(fh * dm).real for dm in derivative_multipliers(self.grid)]

    def multiplier_at(self, m) -> float:
        idx = tuple(int(mj) % self.grid.n for mj in np.atleast_1d(m))
        return float(self.multipliers[idx])


def realize_on_torus(spec: KernelSpec, epsilon: float, grid: PeriodicGrid) -> TorusKernel:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon < 2 * grid.h * (1 - 1e-12):
        raise UnresolvedKernelError(f"epsilon={epsilon} below 2h={2 * grid.h}")
    if epsilon < 4 * grid.h:
        warnings.warn(f"epsilon={epsilon} is below 4h; kernel is marginally resolved", stacklevel=2)
    mult = spec.fourier(epsilon * grid.frequency_norm())
    return TorusKernel(spec, float(epsilon), grid, mult, label=f"{spec.name}@{epsilon:g}")


def sqrt_kernel(K: TorusKernel) -> TorusKernel:
    if np.any(K.multipliers <= 0):
        raise ValueError("square root needs strictly positive multipliers")
    return TorusKernel(sqrt_spec(K.spec), K.epsilon, K.grid, np.sqrt(K.multipliers),
                       label=f"{K.label}^1/2")


def intermediate_kernel(spec: KernelSpec, epsilon: float, eta: float, grid: PeriodicGrid) -> TorusKernel:
    """``L_{eps,eta}`` with multipliers ``R_hat(eps m) / R_hat(eta m)`` (only in L1)."""
    if not 0 < eta < epsilon:
        raise ValueError(f"need 0 < eta < epsilon, got eta={eta}, epsilon={epsilon}")
    xi = grid.frequency_norm()
    mult = spec.fourier(epsilon * xi) / spec.fourier(eta * xi)
    return TorusKernel(spec, float(epsilon), grid, mult, label=f"L[{epsilon:g},{eta:g}]")


def first_moment(K: TorusKernel) -> float:
    """``integral d_T(x, 0) |K(x)| dx`` over the torus."""
    g = K.grid
    return float(np.sum(g.torus_distance_to_origin() * np.abs(K.spatial.values)) * g.cell_volume)


def second_moment(K: TorusKernel) -> float:
    g = K.grid
    return float(np.sum(g.torus_distance_to_origin() ** 2 * K.spatial.values) * g.cell_volume)


def lattice_sum_spatial(spec: KernelSpec, epsilon: float, grid: PeriodicGrid, nshift: int = 8) -> np.ndarray:
    """Direct periodisation ``sum_{|shift| <= nshift} R_eps(x + shift)`` at the nodes."""
    x = grid.nodes()
    out = np.zeros(grid.shape)
    shifts = np.arange(-nshift, nshift + 1)
    for combo in np.stack(np.meshgrid(*([shifts] * grid.dim), indexing="ij"), -1).reshape(-1, grid.dim):
        sq = np.zeros(grid.shape)
        for axis in range(grid.dim):
            shp = [1] * grid.dim
            shp[axis] = grid.n
            sq = sq + ((x + combo[axis]) ** 2).reshape(shp)
        out += spec.spatial(np.sqrt(sq), epsilon)
    return out


def periodized_gradient(spec: KernelSpec, epsilon: float, z: np.ndarray, nshift: int = 8) -> np.ndarray:
    """``grad R_eps^T`` at displacements ``z`` of shape (k, d) via the lattice sum."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = z.shape[1]
    z = z - np.round(z)
    out = np.zeros_like(z)
    shifts = np.arange(-nshift, nshift + 1)
    for combo in np.stack(np.meshgrid(*([shifts] * d), indexing="ij"), -1).reshape(-1, d):
        zz = z + combo
        r = np.sqrt(np.sum(zz * zz, axis=1))
        dr = spec.radial_derivative(r, epsilon)
        out += np.where(r > 0, dr / np.where(r > 0, r, 1.0), 0.0)[:, None] * zz
    return out


def default_nshift(spec: KernelSpec, epsilon: float, dim: int, cap: int = 8) -> int:
    """Smallest lattice-shift range whose neglected tail is below ~1e-16."""
    rate = spec.decay_rate()
    if rate <= 0:
        return cap
    need = math.ceil(37.0 * epsilon / rate) + 1
    return int(min(max(need, 1), cap if dim == 1 else min(cap, 3)))


def spectral_tail(spec: KernelSpec, epsilon: float, grid: PeriodicGrid) -> float:
    """Size of the profile mass beyond the resolved frequencies, ``sum_{|m| > n/2} R_hat(eps m)``.

    Estimated by the radial integral; it bounds the pointwise truncation error
    of the spectrally realised spatial kernel.
    """
    d = grid.dim
    surface = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}[d]
    r0 = grid.n / 2.0

    def integrand(r):
        return float(spec.fourier(np.array([epsilon * r]))[0]) * surface * r ** (d - 1)

    val, _ = integrate.quad(integrand, r0, np.inf, limit=200)
    return float(val)


def sqrt_gradient_field(K: TorusKernel) -> np.ndarray:
    """``|grad R^1/2_eps|`` formed in space from the spectral gradient."""
    half = np.sqrt(K.multipliers)
    comps = [np.fft.ifftn(half * dm).real * K.grid.size for dm in derivative_multipliers(K.grid)]
    return np.sqrt(sum(c * c for c in comps))


def sqrt_gradient_ratio(K: TorusKernel, f: np.ndarray) -> float:
    """``eps * || |grad R^1/2| * f ||_2 / || R^1/2 * f ||_2`` for a nonnegative field."""
    g = K.grid
    absgrad = sqrt_gradient_field(K)
    num = np.fft.ifftn(np.fft.fftn(absgrad) * np.fft.fftn(f)).real * g.cell_volume
    den = apply_multiplier(f, np.sqrt(K.multipliers))
    return float(K.epsilon * np.sqrt(np.sum(num * num)) / np.sqrt(np.sum(den * den)))


@dataclass
class AdmissibilityReport:
    kernel: str
    dim: int
    n: int
    epsilons: list[float]
    k: float | None
    alpha_hat: float
    a_hat: float
    b_hat: float
    xi_max: float
    second_moment: list[float]
    min_spatial: list[float]
    sqrt_gradient_ratios: list[float]
    sqrt_gradient_ratio: float
    intermediate_moment_ratios: list[float]
    intermediate_moment_ratio: float
    smoothness_threshold_met: bool
    passed: dict[str, bool]
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["all_passed"] = self.all_passed
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        names = {
            "i": "non-negative, finite second moment",
            "ii": "unit mass",
            "iii": "Fourier envelope",
            "iv": "square-root gradient bound (stability)",
            "v": "intermediate first moment (stability)",
        }
        lines = [f"kernel {self.kernel}  d={self.dim}  n={self.n}  eps={self.epsilons}"]
        for key, label in names.items():
            lines.append(f"  {key:>3}  {'PASS' if self.passed[key] else 'FAIL'}  {label}")
        lines.append(
            f"  alpha_hat={self.alpha_hat:.6g} a_hat={self.a_hat:.6g} b_hat={self.b_hat:.6g} k={self.k}"
        )
        lines.append(
            f"  sqrt_gradient_ratio={self.sqrt_gradient_ratio:.6g}"
            f"  intermediate_moment_ratio={self.intermediate_moment_ratio:.6g}"
        )
        for note in self.notes:
            lines.append(f"  note: {note}")
        return "\n".join(lines)


def _validation_fields(grid: PeriodicGrid) -> list[np.ndarray]:
    """Deterministic nonnegative test fields: delta, uniform and two bumps."""
    delta = np.zeros(grid.shape)
    delta[(0,) * grid.dim] = 1.0 / grid.cell_volume
    mesh = grid.mesh()
    bump = np.exp(sum(np.cos(2 * np.pi * (x - 0.3)) for x in mesh))
    narrow = np.exp(4.0 * sum(np.cos(2 * np.pi * (x - 0.6)) for x in mesh))
    return [delta, np.ones(grid.shape), bump, narrow]


def _spread(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
        return math.inf
    return float(v.max() / v.min())


def validate_admissibility(spec: KernelSpec, grid: PeriodicGrid, eps_list,
                           eta_rule: Callable[[float], float] = lambda e: e**1.2,
                           stability_factor: float = 2.0) -> AdmissibilityReport:
    """Check the five kernel properties over the resolvable range; failures are recorded."""
    eps_list = [float(e) for e in eps_list]
    notes: list[str] = []
    passed: dict[str, bool] = {}
    k = spec.k if spec.k is not None else (spec.envelope.k if spec.envelope else None)
    d = grid.dim

    kernels = []
    for eps in eps_list:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kernels.append(realize_on_torus(spec, eps, grid))

    # (i) non-negativity up to the spectral truncation level, finite second moment
    mins, seconds, ok_i = [], [], True
    for K in kernels:
        sp = K.spatial.values
        tol = 1e-10 * sp.max() + 2.0 * spectral_tail(spec, K.epsilon, grid)
        mins.append(float(sp.min()))
        m2 = second_moment(K)
        seconds.append(m2)
        if sp.min() < -tol or not np.isfinite(m2) or m2 <= 0:
            ok_i = False
    passed["i"] = ok_i

    # (ii) unit mass
    ok_ii = True
    for K in kernels:
        m = K.spatial.values.sum() * grid.cell_volume
        if abs(K.multipliers.flat[0] - 1.0) > 1e-14 or abs(m - 1.0) > 1e-12:
            ok_ii = False
    passed["ii"] = ok_ii

    # (iii) envelope on the continuous profile up to the largest sampled frequency
    xi_max = max(eps_list) * (grid.n // 2) * math.sqrt(d)
    inner = np.linspace(0.0, 1.0, 2001)
    outer = np.geomspace(1.0, max(xi_max, 1.0), 4001)[1:] if xi_max > 1 else np.array([])
    r_in = spec.fourier(inner)
    alpha_hat = float(1.0 / r_in.min()) if r_in.min() > 0 else math.inf
    ok_iii = bool(np.all(r_in > 0) and r_in.max() <= 1.0 + 1e-12)
    a_hat = b_hat = math.nan
    if k is None:
        ok_iii = False
        notes.append("no decay exponent k supplied; envelope not checkable")
    elif outer.size:
        r_out = spec.fourier(outer)
        ok_iii &= bool(np.all(r_out > 0))
        lower = r_out * outer ** (2 * k)
        upper = r_out * outer**k
        a_hat = float(lower.min())
        b_hat = float(upper.max())
        half = outer <= max(xi_max / 2.0, outer[0])
        if a_hat < lower[half].min() / stability_factor:
            ok_iii = False
            notes.append("envelope lower bound collapses at high frequency")
        if b_hat > upper[half].max() * stability_factor:
            ok_iii = False
            notes.append("envelope upper bound grows at high frequency")
        if spec.envelope is not None:
            e = spec.envelope
            tol = 1e-9
            if alpha_hat > e.alpha * (1 + tol) or a_hat < e.a * (1 - tol) or b_hat > e.b * (1 + tol):
                ok_iii = False
                notes.append("measured envelope constants violate the analytic ones")
    else:
        notes.append("sampled range does not reach |xi| > 1")
    passed["iii"] = ok_iii
    smooth_ok = k is not None and 2 * k > d + 2
    if not smooth_ok:
        notes.append(f"below smoothness threshold 2k > d + 2 (k={k}, d={d})")

    # (iv) consequence: eps |grad R^1/2| * f bounded by R^1/2 * f uniformly in eps
    fields = _validation_fields(grid)
    per_field = [[sqrt_gradient_ratio(K, f) for K in kernels] for f in fields]
    sg = [max(col) for col in zip(*per_field)]
    passed["iv"] = _spread(sg) <= stability_factor
    worst = max(_spread(row) for row in per_field)
    if worst > stability_factor:
        notes.append(f"single-field ratio spread {worst:.3g} exceeds {stability_factor:g} (max over fields is stable)")

    # (v) first moment of the intermediate kernel scales like eps
    im = []
    for eps in eps_list:
        eta = eta_rule(eps)
        if not 0 < eta < eps:
            im.append(math.nan)
            notes.append(f"eta={eta} not in (0, {eps})")
            continue
        if eta < 2 * grid.h:
            notes.append(f"eta={eta:.4g} below 2h={2 * grid.h:.4g}: intermediate kernel under-resolved")
        im.append(first_moment(intermediate_kernel(spec, eps, eta, grid)) / eps)
    passed["v"] = _spread(im) <= stability_factor

    return AdmissibilityReport(
        kernel=spec.name,
        dim=d,
        n=grid.n,
        epsilons=eps_list,
        k=k,
        alpha_hat=alpha_hat,
        a_hat=a_hat,
        b_hat=b_hat,
        xi_max=xi_max,
        second_moment=seconds,
        min_spatial=mins,
        sqrt_gradient_ratios=sg,
        sqrt_gradient_ratio=max(sg),
        intermediate_moment_ratios=im,
        intermediate_moment_ratio=float(np.nanmax(im)) if np.any(np.isfinite(im)) else math.nan,
        smoothness_threshold_met=smooth_ok,
        passed=passed,
        notes=notes,
    )
