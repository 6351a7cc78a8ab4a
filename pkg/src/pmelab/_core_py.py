"""Pure numpy implementations of the hot kernels.

Signatures mirror the compiled ``_core`` extension one for one; ``_accel``
picks whichever is available. Keep the two in lockstep.
"""

import math

import numpy as np
from scipy.special import gamma, kv

BACKEND = "python"


def _corner_weights(pts, n):
    """Lower-corner indices and fractional offsets of points on the node lattice."""
    y = np.mod(pts, 1.0) * n
    base = np.floor(y)
    frac = y - base
    idx = base.astype(np.int64) % n
    return idx, frac


def interp_periodic(values, pts):
    """Multilinear interpolation of nodal ``values`` at ``pts`` of shape (k, d)."""
    d = values.ndim
    n = values.shape[0]
    idx, frac = _corner_weights(pts, n)
    out = np.zeros(pts.shape[0])
    for corner in range(1 << d):
        w = np.ones(pts.shape[0])
        ii = []
        for a in range(d):
            bit = (corner >> a) & 1
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            ii.append((idx[:, a] + bit) % n)
        out += w * values[tuple(ii)]
    return out


def cic_deposit(pts, n):
    """Cloud-in-cell deposition of equal-weight points; returns cell densities."""
    k, d = pts.shape
    idx, frac = _corner_weights(pts, n)
    out = np.zeros((n,) * d)
    wpart = 1.0 / k
    for corner in range(1 << d):
        w = np.full(k, wpart)
        ii = []
        for a in range(d):
            bit = (corner >> a) & 1
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            ii.append((idx[:, a] + bit) % n)
        np.add.at(out, tuple(ii), w)
    return out * float(n) ** d


def _laplacian_sq_half(u, inv_h2):
    w = 0.5 * u * u
    lap = -2.0 * u.ndim * w
    for axis in range(u.ndim):
        lap = lap + np.roll(w, 1, axis) + np.roll(w, -1, axis)
    return lap * inv_h2


def pme_advance(u, h, duration, dt_coef, floor, max_steps):
    """Explicit conservative stepping of u_t = (1/2) Lap(u^2) over ``duration``.

    Returns ``(u, steps, halvings)``. The step is ``dt_coef * h^2 / max(u, floor)``,
    truncated to land on ``duration``; a step whose maximum exceeds the previous
    one by more than 1e-8 is retried with half the step.
    """
    u = np.array(u, dtype=float)
    inv_h2 = 1.0 / (h * h)
    t = 0.0
    steps = 0
    halvings = 0
    umax = float(u.max())
    while t < duration:
        if steps >= max_steps:
            raise RuntimeError("pme_advance: step limit reached")
        dt = dt_coef * h * h / max(umax, floor)
        if t + dt > duration:
            dt = duration - t
        while True:
            unew = u + dt * _laplacian_sq_half(u, inv_h2)
            newmax = float(unew.max())
            if newmax <= umax + 1e-8 or dt < 1e-300:
                break
            dt *= 0.5
            halvings += 1
        u = unew
        umax = newmax
        t += dt
        steps += 1
    return u, steps, halvings


def matern_gradient_prefactor(s, d):
    return 2.0 ** (1.0 - s) / ((2.0 * math.pi) ** (d / 2.0) * gamma(s))


def direct_velocity(pts, scale, s, nshift):
    """O(N^2) particle velocities ``-(1/N) sum_j grad R(x_i - x_j)`` on the torus.

    ``R`` is the Matern-type kernel whose profile is ``(1 + (2 pi scale |xi|)^2)^-s``,
    periodised by summing lattice shifts up to ``nshift`` per axis.
    """
    npts, d = pts.shape
    nu = s - d / 2.0
    pref = matern_gradient_prefactor(s, d)
    z = pts[:, None, :] - pts[None, :, :]
    z = z - np.round(z)
    grids = np.meshgrid(*([np.arange(-nshift, nshift + 1)] * d), indexing="ij")
    shifts = np.stack([g.ravel() for g in grids], axis=1).astype(float)
    grad = np.zeros_like(z)
    for sh in shifts:
        zz = z + sh
        r = np.sqrt(np.sum(zz * zz, axis=-1))
        rr = r / scale
        with np.errstate(invalid="ignore", divide="ignore"):
            gp = -pref * rr**nu * kv(nu - 1.0, rr)
            coef = np.where(r > 0, gp / (scale ** (d + 1)) / np.where(r > 0, r, 1.0), 0.0)
        coef = np.where(np.isfinite(coef), coef, 0.0)
        grad += coef[..., None] * zz
    return -grad.sum(axis=1) / npts


def _eval_segments(P, start, end, t):
    j = np.searchsorted(P, t, side="right") - 1
    j = np.clip(j, 0, len(start) - 1)
    w = P[j + 1] - P[j]
    lam = np.where(w > 0, (t - P[j]) / np.where(w > 0, w, 1.0), 0.0)
    return start[j] + (end[j] - start[j]) * lam, j


def circle_cost(uP, ustart, uend, vP, vstart, vend, theta):
    """``integral_0^1 (Q_u(t) - Q_v(t - theta))^2 dt`` for lifted periodic quantiles.

    Each quantile is given per segment ``[P_j, P_j+1]`` of the level variable as a
    linear map from ``start_j`` to ``end_j``; the lift adds 1 per period.
    """
    K = math.floor(theta)
    th = theta - K
    # v breakpoints in t: period -1 for levels >= 1 - th, period 0 below
    vb = np.concatenate([vP + th - 1.0, vP + th])
    vb = vb[(vb > 0.0) & (vb < 1.0)]
    tb = np.unique(np.concatenate([uP, vb, [0.0, 1.0]]))
    a, b = tb[:-1], tb[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    mid = 0.5 * (a + b)
    # locate segments by midpoints so that zero-width segments are skipped
    _, ju = _eval_segments(uP, ustart, uend, mid)
    s_mid = mid - th
    lift = np.where(s_mid < 0.0, -1.0, 0.0)
    # rounding can push the level to exactly 1.0, onto a zero-width final segment
    s_level = np.clip(s_mid - lift, 0.0, np.nextafter(1.0, 0.0))
    _, jv = _eval_segments(vP, vstart, vend, s_level)

    def lin(P, st, en, j, t):
        w = P[j + 1] - P[j]
        return st[j] + (en[j] - st[j]) * np.clip((t - P[j]) / w, 0.0, 1.0)

    qa = lin(uP, ustart, uend, ju, a) - (lin(vP, vstart, vend, jv, a - th - lift) + lift - K)
    qb = lin(uP, ustart, uend, ju, b) - (lin(vP, vstart, vend, jv, b - th - lift) + lift - K)
    return float(np.sum((b - a) * (qa * qa + qa * qb + qb * qb)) / 3.0)


def circle_costs(uP, ustart, uend, vP, vstart, vend, thetas):
    return np.array([circle_cost(uP, ustart, uend, vP, vstart, vend, th) for th in thetas])
