"""Closed-form solutions used as oracles.

Self-similar solution of ``u_t = (1/2)(u^2)_xx``. With ``tau = t/2`` the
equation becomes ``u_tau = (u^2)_xx``, whose source-type solution is

    u = tau^(-1/3) (C - x^2 tau^(-2/3) / 12)_+

Its mass is ``(4/3) C sqrt(12 C)``, constant in time, and its support is
``|x| <= sqrt(12 C) tau^(1/3)``.
"""

from __future__ import annotations

import math

import numpy as np


def barenblatt(t, x, C: float, center: float = 0.5) -> np.ndarray:
    """Profile at time ``t > 0``, centred at ``center`` on the unit torus."""
    tau = 0.5 * t
    z = np.asarray(x, dtype=float) - center
    z = z - np.round(z)
    return tau ** (-1.0 / 3.0) * np.maximum(C - z * z * tau ** (-2.0 / 3.0) / 12.0, 0.0)


def barenblatt_mass(C: float) -> float:
    return 4.0 / 3.0 * C * math.sqrt(12.0 * C)


def barenblatt_halfwidth(t: float, C: float) -> float:
    return math.sqrt(12.0 * C) * (0.5 * t) ** (1.0 / 3.0)


def barenblatt_constant_for_support(t_end: float, halfwidth: float) -> float:
    """``C`` such that the support half-width at ``t_end`` equals ``halfwidth``."""
    return (halfwidth / (0.5 * t_end) ** (1.0 / 3.0)) ** 2 / 12.0


def barenblatt_residual(t: float, x: np.ndarray, C: float, dt: float = 1e-6) -> np.ndarray:
    """Pointwise finite-difference residual ``u_t - (1/2)(u^2)_xx`` (inside the support)."""
    h = x[1] - x[0]
    ut = (barenblatt(t + dt, x, C) - barenblatt(t - dt, x, C)) / (2 * dt)
    w = 0.5 * barenblatt(t, x, C) ** 2
    lap = (np.roll(w, -1) - 2 * w + np.roll(w, 1)) / (h * h)
    return ut - lap
