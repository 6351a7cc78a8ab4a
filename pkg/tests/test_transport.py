import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from pmelab.dynamics import ParticleEnsemble, inverse_cdf_positions
from pmelab.grid import GridField, PeriodicGrid, density_from_function
from pmelab.kernels import matern_kernel, realize_on_torus, second_moment
from pmelab.transport.circle import circle_cost
from pmelab.transport.oracle import exhaustive_assignment
from pmelab.transport import (
    AtomicMeasure,
    CircleQuantile,
    OracleSizeError,
    TransportResult,
    lp_oracle,
    network_simplex,
    torus_sq_cost,
    w2_between_grid_and_particles,
    w2_circle_1d,
    w2_circle_atoms,
    w2_sinkhorn,
)


def density(values):
    g = PeriodicGrid(1, len(values))
    v = np.asarray(values, dtype=float)
    return GridField(g, v / v.mean(), "density")


def random_density(rng, n, sparsity=0.0):
    v = rng.random(n) + 0.05
    if sparsity:
        v[rng.random(n) < sparsity] = 0.0
        if v.sum() == 0:
            v[0] = 1.0
    return density(v)


def bump(n, center, width):
    x = np.arange(n) / n
    z = x - center
    z = z - np.round(z)
    return density(np.exp(-0.5 * (z / width) ** 2) + 1e-300)


def linprog_cost(a, b, cost):
    m, n = cost.shape
    A = []
    for i in range(m):
        row = np.zeros((m, n))
        row[i] = 1
        A.append(row.ravel())
    for j in range(n):
        col = np.zeros((m, n))
        col[:, j] = 1
        A.append(col.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(A), b_eq=np.r_[a, b], bounds=(0, None), method="highs")
    return res.fun


# ---------------------------------------------------------------- types


def test_atomic_measure_validation():
    m = AtomicMeasure.uniform([0.1, 1.3])
    assert m.size == 2 and m.dim == 1 and np.allclose(m.points[:, 0], [0.1, 0.3])
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([0.1, 0.2]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        AtomicMeasure(np.array([0.1]), np.array([-1.0]))
    f = density([0, 1, 1, 0])
    assert AtomicMeasure.from_field(f).size == 2
    assert AtomicMeasure.from_field(f, drop_empty=False).size == 4


def test_result_validation():
    with pytest.raises(ValueError):
        TransportResult(-1.0, "quantile1d")
    with pytest.raises(ValueError):
        TransportResult(1.0, "emd")
    assert TransportResult(1.0, "sinkhorn", {"a": np.arange(2)}).to_dict()["metadata"]["a"] == [0, 1]


def test_torus_cost():
    c = torus_sq_cost(np.array([[0.05]]), np.array([[0.95], [0.5]]))
    assert np.allclose(c, [[0.01, 0.2025]])


# ---------------------------------------------------------------- circle W2


def test_circle_identity_and_point_masses():
    rng = np.random.default_rng(0)
    u = random_density(rng, 64)
    assert w2_circle_1d(u, u).distance < 1e-12
    for n in (256, 1024):
        h = 1.0 / n
        d = w2_circle_1d(bump(n, 0.2, h), bump(n, 0.5, h)).distance
        assert abs(d - 0.3) <= 2 * h
    a = AtomicMeasure.uniform([0.1])
    b = AtomicMeasure.uniform([0.85])
    assert w2_circle_atoms(a, b).distance == pytest.approx(0.25)


def test_circle_quantile_cdf_inverse():
    rng = np.random.default_rng(1)
    q = CircleQuantile.from_cells(rng.random(16) + 0.1)
    t = np.linspace(0.01, 0.99, 30)
    assert np.allclose(q.cdf(q.quantile(t)), t, atol=1e-12)
    assert np.allclose(q.quantile(t + 1), q.quantile(t) + 1)


def test_circle_errors():
    with pytest.raises(ValueError):
        w2_circle_1d(np.ones(8), np.ones(16))
    with pytest.raises(ValueError):
        w2_circle_1d(np.full(8, 2.0), np.ones(8))
    with pytest.raises(ValueError):
        w2_circle_1d(density([1, 1]).values, np.r_[-1.0, 3.0])
    with pytest.raises(ValueError):
        w2_circle_1d(GridField(PeriodicGrid(2, 4), np.ones((4, 4)), "density"),
                     GridField(PeriodicGrid(2, 4), np.ones((4, 4)), "density"))


def test_circle_matches_oracle_on_atoms():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(4, 33))
        u = random_density(rng, n, 0.3)
        v = random_density(rng, n, 0.3)
        au, av = AtomicMeasure.from_field(u), AtomicMeasure.from_field(v)
        exact = lp_oracle(au, av).distance
        circ = w2_circle_1d(u, v, atomic=True).distance
        assert circ == pytest.approx(exact, rel=1e-6, abs=1e-12)


def test_circle_cost_minimised_at_returned_shift():
    rng = np.random.default_rng(3)
    u, v = random_density(rng, 32), random_density(rng, 32)
    res = w2_circle_1d(u, v)
    qu, qv = CircleQuantile.from_cells(u.values), CircleQuantile.from_cells(v.values)
    best = res.metadata["cost"]
    for th in np.linspace(-1, 1, 401):
        assert circle_cost(qu, qv, th) >= best - 1e-13
    assert res.metadata["coarse_min"] >= best - 1e-15


def test_geodesic_data():
    rng = np.random.default_rng(4)
    u, v = random_density(rng, 64), random_density(rng, 64)
    geo = w2_circle_1d(u, v).geodesic
    assert np.abs(geo.v0).max() <= 0.5 and np.abs(geo.v1).max() <= 0.5
    # unrolled from the cut the lifted map is nondecreasing
    order = np.argsort(np.mod(geo.x - geo.cut, 1.0))
    lifted = np.unwrap(geo.transport_map[order] * 2 * np.pi) / (2 * np.pi)
    assert np.all(np.diff(lifted) >= -1e-12)
    # kinetic energy of the map equals W2^2 up to quadrature error
    res = w2_circle_1d(u, v)
    assert np.sum(geo.v0**2 * u.values) / 64 == pytest.approx(res.distance**2, rel=0.05)
    # geodesic velocity is constant along rays: v1(T(x)) = v0(x)
    v1_at_T = np.interp(np.mod(geo.transport_map, 1.0), geo.x, geo.v1, period=1.0)
    assert np.abs(v1_at_T - geo.v0).max() < 2.0 / 64


@given(st.integers(0, 10**6))
def test_triangle_inequality_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_density(rng, 24, 0.2) for _ in range(3))
    ab, bc, ac = (w2_circle_1d(x, y, with_map=False).distance for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9
    assert w2_circle_1d(b, a, with_map=False).distance == pytest.approx(ab, abs=1e-12)


def test_translation_bound():
    n = 256
    rng = np.random.default_rng(5)
    u = random_density(rng, n)
    for k in (0, 13, 64, 128):
        shifted = density(np.roll(u.values, k))
        assert w2_circle_1d(u, shifted, with_map=False).distance <= k / n + 1e-12
    d = w2_circle_1d(bump(n, 0.3, 1 / n), bump(n, 0.45, 1 / n), with_map=False).distance
    assert d == pytest.approx(0.15, abs=2 / n)


def test_mollification_bound():
    g = PeriodicGrid(1, 256)
    spec = matern_kernel(2, 1)
    rng = np.random.default_rng(6)
    for eta in (0.2, 0.1, 0.05):
        K = realize_on_torus(spec, eta, g)
        bound = math.sqrt(second_moment(K))
        for _ in range(3):
            u = random_density(rng, 256)
            smooth = density(np.maximum(K.apply(u.values), 0.0))
            assert w2_circle_1d(smooth, u, with_map=False).distance <= bound


# ---------------------------------------------------------------- oracle


def test_oracle_small_cases():
    a = AtomicMeasure.uniform([0.2])
    b = AtomicMeasure.uniform([0.45])
    assert lp_oracle(a, b).distance == pytest.approx(0.25)
    a2 = AtomicMeasure.uniform([0.0, 0.5])
    b2 = AtomicMeasure.uniform([0.1, 0.55])
    c = torus_sq_cost(a2.points, b2.points)
    expected = min(c[0, 0] + c[1, 1], c[0, 1] + c[1, 0]) / 2
    assert lp_oracle(a2, b2).metadata["cost"] == pytest.approx(expected)
    with pytest.raises(OracleSizeError):
        lp_oracle(AtomicMeasure.uniform(np.linspace(0, 1, 40, endpoint=False)),
                  AtomicMeasure.uniform(np.linspace(0, 1, 40, endpoint=False)))
    with pytest.raises(ValueError):
        lp_oracle(a, AtomicMeasure(np.array([0.1, 0.2]), np.array([0.3, 0.7])), method="hungarian")


def test_network_simplex_equals_exhaustive():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = AtomicMeasure.uniform(rng.random(4))
        b = AtomicMeasure.uniform(rng.random(4))
        cost = torus_sq_cost(a.points, b.points)
        ex = np.sum(exhaustive_assignment(cost) * cost)
        plan, _ = network_simplex(a.weights, b.weights, cost)
        assert np.sum(plan * cost) == pytest.approx(ex, rel=1e-12, abs=1e-15)


def test_network_simplex_against_linprog_general_weights():
    rng = np.random.default_rng(8)
    for _ in range(10):
        m, n = rng.integers(2, 12, size=2)
        a = rng.random(m)
        a /= a.sum()
        b = rng.random(n)
        b /= b.sum()
        cost = torus_sq_cost(rng.random((m, 2)), rng.random((n, 2)))
        plan, _ = network_simplex(a, b, cost)
        assert np.allclose(plan.sum(1), a) and np.allclose(plan.sum(0), b)
        assert np.sum(plan * cost) == pytest.approx(linprog_cost(a, b, cost), rel=1e-9, abs=1e-14)


def test_hungarian_matches_exhaustive():
    rng = np.random.default_rng(9)
    for _ in range(10):
        a = AtomicMeasure.uniform(rng.random((6, 2)))
        b = AtomicMeasure.uniform(rng.random((6, 2)))
        assert lp_oracle(a, b, "hungarian").distance == pytest.approx(lp_oracle(a, b, "exhaustive").distance)


# ---------------------------------------------------------------- sinkhorn


def test_sinkhorn_identity_and_errors():
    rng = np.random.default_rng(10)
    u = random_density(rng, 64)
    assert w2_sinkhorn(u, u).distance < 1e-6
    with pytest.raises(ValueError):
        w2_sinkhorn(u, random_density(rng, 32))
    with pytest.raises(ValueError):
        w2_sinkhorn(u, u, reg=0.0)


def test_sinkhorn_matches_circle_1d():
    rng = np.random.default_rng(11)
    for _ in range(3):
        u, v = random_density(rng, 128), random_density(rng, 128)
        exact = w2_circle_1d(u, v, with_map=False).distance
        res = w2_sinkhorn(u, v)
        assert res.metadata["converged"]
        assert res.distance == pytest.approx(exact, rel=0.02)


def test_sinkhorn_tensorised_2d():
    n = 48
    x = np.arange(n) / n
    u1 = 1 + 0.6 * np.sin(2 * np.pi * x)
    v1 = 1 + 0.6 * np.cos(2 * np.pi * (x - 0.1))
    exact1 = w2_circle_1d(density(u1), density(v1), with_map=False).distance
    g = PeriodicGrid(2, n)
    U = GridField(g, np.outer(u1, u1) / np.outer(u1, u1).mean(), "density")
    V = GridField(g, np.outer(v1, v1) / np.outer(v1, v1).mean(), "density")
    assert w2_sinkhorn(U, V).distance == pytest.approx(math.sqrt(2) * exact1, rel=0.03)


def test_sinkhorn_reports_nonconvergence():
    rng = np.random.default_rng(12)
    u, v = random_density(rng, 64), random_density(rng, 64)
    with pytest.warns(RuntimeWarning):
        res = w2_sinkhorn(u, v, max_iter=10, anneal=False)
    assert not res.metadata["converged"]


# ---------------------------------------------------------------- mixed


def test_particles_vs_grid_1d():
    g = PeriodicGrid(1, 256)
    u = density_from_function(g, lambda x: 1 + 0.5 * np.sin(2 * np.pi * x))
    dists = []
    for N in (100, 1000, 10000):
        ens = ParticleEnsemble(inverse_cdf_positions(u, N)[:, None])
        dists.append(w2_between_grid_and_particles(u, ens).distance)
    assert all(b < a for a, b in zip(dists, dists[1:]))
    for N, d in zip((100, 1000, 10000), dists):
        assert d * N < 0.5  # O(1/N)
    uni = density(np.ones(64))
    for N in (7, 64, 500):
        ens = ParticleEnsemble((np.arange(N) / N)[:, None])
        assert w2_between_grid_and_particles(uni, ens).distance <= 1 / (2 * N) + 1e-12
    h = 1 / 64
    one = ParticleEnsemble(np.array([[0.25]]))
    assert w2_between_grid_and_particles(bump(64, 0.25, h), one).distance <= 2 * h


def test_particles_vs_grid_2d_path():
    g = PeriodicGrid(2, 16)
    u = GridField(g, np.ones((16, 16)), "density")
    pts = np.stack(np.meshgrid(np.arange(16) / 16, np.arange(16) / 16, indexing="ij"), -1).reshape(-1, 2)
    res = w2_between_grid_and_particles(u, ParticleEnsemble(pts))
    assert res.metadata["path"] == "deposit+sinkhorn"
    assert res.distance <= res.metadata["deposition_bias_bound"]
