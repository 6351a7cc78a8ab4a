"""Distances between a grid density and a particle ensemble."""

from __future__ import annotations

import math

from pmelab.dynamics import ParticleEnsemble, deposit_particles
from pmelab.grid import GridField
from pmelab.transport.circle import w2_circle_cells_atoms
from pmelab.transport.sinkhorn import w2_sinkhorn
from pmelab.transport.types import TransportResult


def w2_between_grid_and_particles(u: GridField, ens: ParticleEnsemble, reg: float = 5e-4,
                                  max_iter: int = 5000) -> TransportResult:
    """Exact quantile path in 1D; deposition plus Sinkhorn in d >= 2.

    In d >= 2 the metadata carries ``deposition_bias_bound``: cloud-in-cell
    moves each particle's mass by at most ``h sqrt(d)``, which bounds the W2
    change caused by depositing.
    """
    if ens.dim != u.grid.dim:
        raise ValueError("ensemble and field dimensions differ")
    if u.grid.dim == 1:
        res = w2_circle_cells_atoms(u, ens.positions[:, 0])
        res.metadata["path"] = "exact-quantile"
        return res
    rho = deposit_particles(ens, u.grid)
    res = w2_sinkhorn(u, rho, reg=reg, max_iter=max_iter)
    res.metadata["path"] = "deposit+sinkhorn"
    res.metadata["deposition_bias_bound"] = u.grid.h * math.sqrt(u.grid.dim)
    return res
