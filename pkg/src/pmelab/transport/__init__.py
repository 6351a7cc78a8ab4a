"""Wasserstein-2 distances on the torus."""

from pmelab.transport.circle import (
    CircleQuantile,
    w2_circle_1d,
    w2_circle_atoms,
    w2_circle_cells_atoms,
)
from pmelab.transport.mixed import w2_between_grid_and_particles
from pmelab.transport.oracle import OracleSizeError, lp_oracle, network_simplex
from pmelab.transport.sinkhorn import w2_sinkhorn
from pmelab.transport.types import AtomicMeasure, GeodesicData1D, TransportResult, torus_sq_cost

__all__ = [
    "AtomicMeasure",
    "CircleQuantile",
    "GeodesicData1D",
    "OracleSizeError",
    "TransportResult",
    "lp_oracle",
    "network_simplex",
    "torus_sq_cost",
    "w2_between_grid_and_particles",
    "w2_circle_1d",
    "w2_circle_atoms",
    "w2_circle_cells_atoms",
    "w2_sinkhorn",
]
