import math

import numpy as np
import pytest

from pmelab.diagnostics import (
    EnergyLedger,
    check_energy_dissipation,
    check_lemma_intermediate1,
    check_lemma_intermediate2,
    commutator_decomposition_1d,
    commutator_ledger_1d,
    entropy,
    entropy_dissipation,
    intermediate1_ratio,
    interaction_energy,
    l2_mollified_error,
    quadratic_dissipation,
    quadratic_energy,
    random_fields,
    sqrt_norm_sq,
)
from pmelab.dynamics import SolverConfig, Trajectory, solve_aggregation_grid, solve_pme_reference
from pmelab.grid import GridField, PeriodicGrid, density_from_function, discrete_delta
from pmelab.kernels import (
    laplace_kernel_1d,
    matern_kernel,
    realize_on_torus,
    sqrt_gradient_field,
    sqrt_gradient_ratio,
    sqrt_kernel,
)


def sine(n, amp=0.5):
    return density_from_function(PeriodicGrid(1, n), lambda x: 1 + amp * np.sin(2 * np.pi * x))


def test_energies_constants():
    g = PeriodicGrid(1, 64)
    u = GridField(g, np.ones(64), "density")
    K = realize_on_torus(matern_kernel(2, 1), 0.1, g)
    assert quadratic_energy(u) == pytest.approx(0.5)
    assert interaction_energy(u, K) == pytest.approx(0.5)
    assert entropy(u) == pytest.approx(0.0, abs=1e-15)
    assert quadratic_dissipation(u, K) == pytest.approx(0, abs=1e-20)
    assert entropy_dissipation(u, K) == pytest.approx(0, abs=1e-20)
    half = GridField(g, np.r_[np.full(32, 2.0), np.zeros(32)], "density")
    assert quadratic_energy(half) == pytest.approx(1.0)
    assert entropy(half) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        entropy(GridField(g, np.r_[-1.0, np.ones(63)]))


def test_interaction_energy_is_half_sqrt_norm(rng):
    g = PeriodicGrid(2, 32)
    K = realize_on_torus(matern_kernel(3, 2), 0.2, g)
    H = sqrt_kernel(K)
    for _ in range(5):
        u = density_from_function(g, lambda *_: 0.1 + rng.random(g.shape))
        assert interaction_energy(u, K) == pytest.approx(0.5 * sqrt_norm_sq(u, K), rel=1e-10)
        w = H.apply(u.values)
        assert sqrt_norm_sq(u, K) == pytest.approx(np.mean(w * w), rel=1e-12)


def test_energy_ledger_uniform_and_sine():
    g = PeriodicGrid(1, 128)
    K = realize_on_torus(matern_kernel(2, 1), 0.1, g)
    cfg = SolverConfig(0.3, snapshot_times=tuple(np.linspace(0, 0.3, 7)), track_energy=True)
    flat = solve_aggregation_grid(GridField(g, np.ones(128), "density"), K, cfg)
    led = check_energy_dissipation(flat, K)
    assert led.passed and max(led.quadratic_dissipation_integral) == 0
    traj = solve_aggregation_grid(sine(128), K, cfg)
    led = check_energy_dissipation(traj, K)
    assert led.energy_ok and led.entropy_ok
    assert led.integration == "per-step trapezoid"
    assert all(b < a for a, b in zip(led.sqrt_norm_sq, led.sqrt_norm_sq[1:]))
    assert len(led.rows()) == 7 and led.to_csv().startswith("time,")
    # the snapshot-trapezoid fallback converges to the per-step integral on fine snapshots
    fine_cfg = SolverConfig(0.3, snapshot_times=tuple(np.linspace(0, 0.3, 121)), track_energy=True)
    fine = solve_aggregation_grid(sine(128), K, fine_cfg)
    led_fine = check_energy_dissipation(fine, K)
    led2 = check_energy_dissipation(Trajectory(fine.times, fine.snapshots, fine.config), K)
    assert led2.integration == "snapshot trapezoid"
    for a, b in ((led2.entropy_dissipation_integral, led_fine.entropy_dissipation_integral),
                 (led2.quadratic_dissipation_integral, led_fine.quadratic_dissipation_integral)):
        assert a[-1] == pytest.approx(b[-1], rel=0.01)


def test_energy_ledger_detects_violation():
    g = PeriodicGrid(1, 64)
    K = realize_on_torus(matern_kernel(2, 1), 0.1, g)
    # energy increasing in time: flat then concentrated
    snaps = [GridField(g, np.ones(64), "density"), sine(64)]
    led = check_energy_dissipation(Trajectory([0.0, 0.1], snaps, SolverConfig(0.1)), K)
    assert not led.energy_ok and not led.entropy_ok


def test_energy_ledger_kernel_mismatch():
    g = PeriodicGrid(1, 64)
    K = realize_on_torus(matern_kernel(2, 1), 0.1, g)
    traj = solve_aggregation_grid(sine(64), K, SolverConfig(0.01, snapshot_times=(0, 0.01)))
    with pytest.raises(ValueError):
        check_energy_dissipation(traj, realize_on_torus(matern_kernel(2, 1), 0.2, g))


def test_random_field_kinds(rng):
    g = PeriodicGrid(2, 16)
    for kind in ("smooth", "white", "dnoise", "nonneg"):
        fs = random_fields(g, kind, 3, rng)
        assert len(fs) == 3 and all(f.shape == g.shape for f in fs)
    assert all(f.min() >= 0 for f in random_fields(g, "nonneg", 10, rng))
    assert all(abs(f.mean()) < 1e-12 for f in random_fields(g, "dnoise", 3, rng))
    with pytest.raises(ValueError):
        random_fields(g, "pink", 1, rng)


def test_intermediate1_single_mode_and_constant():
    g = PeriodicGrid(1, 256)
    spec = matern_kernel(2, 1)
    eps, eta = 0.1, 0.05
    assert intermediate1_ratio(np.ones(256), spec, eps, eta, g) == pytest.approx((eta / eps) ** 2)
    m = 7
    f = np.cos(2 * np.pi * m * g.nodes())
    closed = float(spec.fourier(eta * m)) / ((eps / eta) ** 2 * math.sqrt(float(spec.fourier(eps * m))))
    assert intermediate1_ratio(f, spec, eps, eta, g) == pytest.approx(closed, rel=1e-12)


@pytest.mark.parametrize("gamma", [1.1, 1.25])
def test_intermediate1_bound_with_eta_power(gamma):
    g = PeriodicGrid(1, 512)
    spec = matern_kernel(2, 1)
    for eps in (0.2, 0.1):
        eta = eps**gamma
        rep = check_lemma_intermediate1(spec, eps, eta, g, trials=8, seed=1)
        assert rep.passed and rep.max_ratio <= rep.bound == pytest.approx(math.sqrt(12))


def test_intermediate1_errors():
    g = PeriodicGrid(1, 64)
    with pytest.raises(ValueError):
        check_lemma_intermediate1(matern_kernel(2, 1), 0.1, 0.2, g)


def test_intermediate2_delta_and_stability():
    g = PeriodicGrid(1, 256)
    spec = matern_kernel(2, 1)
    K = realize_on_torus(spec, 0.1, g)
    H = sqrt_kernel(K)
    delta = discrete_delta(g).values
    direct = 0.1 * np.linalg.norm(sqrt_gradient_field(K)) / np.linalg.norm(H.spatial.values)
    assert sqrt_gradient_ratio(K, delta) == pytest.approx(direct, rel=1e-10)
    assert np.isfinite(sqrt_gradient_ratio(K, np.ones(256)))
    rep = check_lemma_intermediate2(spec, [0.2, 0.1, 0.05], g, trials=10, seed=2)
    assert rep.passed and rep.spread <= 2
    assert "eps=0.1" in rep.to_csv()


def test_l2_mollified_error():
    g = PeriodicGrid(1, 128)
    K = realize_on_torus(matern_kernel(2, 1), 0.1, g)
    flat = [GridField(g, np.ones(128), "density")] * 3
    t = Trajectory([0, 0.5, 1.0], flat, SolverConfig(1.0))
    assert l2_mollified_error(t, t, K) == pytest.approx(0, abs=1e-14)
    u = sine(128)
    tu = Trajectory([0, 1.0], [u, u], SolverConfig(1.0))
    errs = []
    for eps in (0.2, 0.1, 0.05):
        Ke = realize_on_torus(matern_kernel(2, 1), eps, g)
        errs.append(l2_mollified_error(tu, tu, Ke))
    assert errs[0] > errs[1] > errs[2] > 0
    with pytest.raises(ValueError):
        l2_mollified_error(t, tu, K)


def test_commutator_trivial_cases():
    g = PeriodicGrid(1, 128)
    K = realize_on_torus(laplace_kernel_1d(), 0.1, g)
    u = sine(128)
    e = commutator_decomposition_1d(u, u, K)
    assert abs(e.D) < 1e-12 and abs(e.C) < 1e-12 and abs(e.G) < 1e-12
    flat = GridField(g, np.ones(128), "density")
    e2 = commutator_decomposition_1d(flat, u, K)
    # grad u = 0 and the C integrand has R * 1 - 1 = 0
    assert abs(e2.C) < 1e-12
    assert e2.G == pytest.approx(e2.D, abs=1e-14)
    assert e2.identity_residual < 1e-15
    with pytest.raises(ValueError):
        commutator_decomposition_1d(GridField(PeriodicGrid(2, 8), np.ones((8, 8)), "density"),
                                    GridField(PeriodicGrid(2, 8), np.ones((8, 8)), "density"), K)


def test_commutator_ledger_sign_of_G():
    u0 = sine(256)
    K = realize_on_torus(laplace_kernel_1d(), 0.1, u0.grid)
    cfg = SolverConfig(0.2, snapshot_times=tuple(np.linspace(0, 0.2, 5)))
    pme = solve_pme_reference(u0, cfg)
    agg = solve_aggregation_grid(u0, K, cfg)
    led = commutator_ledger_1d(pme, agg, K)
    assert led.max_G() <= 1e-8
    assert led.summary()["max_identity_residual"] <= 1e-10
    assert len(led.w2sq_derivative) == 5
    assert led.to_csv().count("\n") == 6
