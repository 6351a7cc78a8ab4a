import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmelab.grid import (
    GridField,
    GridMismatchError,
    PeriodicGrid,
    apply_multiplier,
    convolve_periodic,
    density_from_function,
    derivative_multipliers,
    discrete_delta,
    forward_transform,
    gradient_spectral,
    inverse_transform,
    lp_norm,
    mass,
    normalize_density,
    resample_spectral,
    sample_at,
    uniform_density,
)


def test_grid_geometry():
    g = PeriodicGrid(2, 8)
    assert g.h == 0.125 and g.shape == (8, 8) and g.size == 64
    assert g.cell_volume == pytest.approx(1 / 64)
    assert g.nodes()[1] == 0.125
    with pytest.raises(ValueError):
        PeriodicGrid(4, 8)
    with pytest.raises(ValueError):
        PeriodicGrid(1, 1)


def test_field_shape_and_density_checks():
    g = PeriodicGrid(1, 16)
    with pytest.raises(GridMismatchError):
        GridField(g, np.ones(15))
    with pytest.raises(ValueError):
        GridField(g, np.full(16, 2.0), "density")
    with pytest.raises(ValueError):
        GridField(g, np.r_[-1e-9, np.ones(15)], "density")
    # ringing just below zero is clamped
    vals = np.ones(16)
    vals[0] = -5e-13
    f = GridField(g, vals / (vals.sum() / 16), "density")
    assert f.values.min() >= 0
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_transform_roundtrip_and_parseval(rng):
    g = PeriodicGrid(2, 16)
    f = GridField(g, rng.standard_normal(g.shape))
    c = forward_transform(f)
    back = inverse_transform(c)
    assert np.allclose(back.values, f.values, atol=1e-13)
    parseval = np.sum(np.abs(c.coeffs) ** 2)
    assert lp_norm(f, 2) ** 2 == pytest.approx(parseval, rel=1e-10)
    assert c.at((0, 0)) == pytest.approx(f.values.mean())


def test_gradient_of_sine():
    g = PeriodicGrid(1, 128)
    x = g.nodes()
    (d,) = gradient_spectral(GridField(g, np.sin(2 * np.pi * x)))
    assert np.allclose(d.values, 2 * np.pi * np.cos(2 * np.pi * x), atol=1e-10)
    (z,) = gradient_spectral(GridField(g, np.full(128, 3.0)))
    assert np.abs(z.values).max() < 1e-12


def test_nyquist_zeroed():
    g = PeriodicGrid(1, 8)
    (dm,) = derivative_multipliers(g)
    assert dm[4] == 0
    alt = GridField(g, (-1.0) ** np.arange(8))
    (d,) = gradient_spectral(alt)
    assert np.abs(d.values).max() < 1e-12


@given(st.integers(min_value=0, max_value=2**31))
def test_gradient_has_zero_mean(seed):
    r = np.random.default_rng(seed)
    g = PeriodicGrid(2, 8)
    for comp in gradient_spectral(GridField(g, r.standard_normal(g.shape))):
        assert abs(comp.values.sum()) < 1e-10


def test_convolution_symmetry_associativity_and_derivative(rng):
    g = PeriodicGrid(1, 64)
    a, b, c = (GridField(g, rng.standard_normal(64)) for _ in range(3))
    ab = convolve_periodic(a, b)
    assert np.allclose(ab.values, convolve_periodic(b, a).values, atol=1e-10)
    lhs = convolve_periodic(ab, c).values
    rhs = convolve_periodic(a, convolve_periodic(b, c)).values
    assert np.allclose(lhs, rhs, atol=1e-10)
    (dab,) = gradient_spectral(ab)
    (da,) = gradient_spectral(a)
    assert np.allclose(dab.values, convolve_periodic(da, b).values, atol=1e-10)


def test_convolution_with_unit_mass_kernel_keeps_mass(rng):
    g = PeriodicGrid(2, 16)
    f = GridField(g, rng.random(g.shape))
    k = normalize_density(GridField(g, rng.random(g.shape)))
    assert mass(convolve_periodic(f, k)) == pytest.approx(mass(f), abs=1e-12)
    with pytest.raises(GridMismatchError):
        convolve_periodic(f, GridField(PeriodicGrid(2, 8), np.ones((8, 8))))


def test_mass_and_normalize(rng):
    g = PeriodicGrid(1, 32)
    assert mass(uniform_density(g)) == pytest.approx(1.0)
    assert mass(GridField(g, np.full(32, 2.0))) == pytest.approx(2.0)
    assert mass(discrete_delta(g)) == pytest.approx(1.0)
    assert np.allclose(normalize_density(GridField(g, np.full(32, 2.0))).values, 1.0)
    u = uniform_density(g)
    assert np.array_equal(normalize_density(u).values, u.values)
    noisy = np.clip(rng.standard_normal(32), 0, None) + 1e-3
    assert abs(mass(normalize_density(GridField(g, noisy))) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        normalize_density(GridField(g, np.zeros(32)))
    with pytest.raises(ValueError):
        normalize_density(GridField(g, np.r_[-1.0, np.ones(31)]))


def test_lp_norm_and_sampling():
    g = PeriodicGrid(2, 8)
    one = GridField(g, np.ones(g.shape))
    for p in (1, 2, 3.5, np.inf):
        assert lp_norm(one, p) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lp_norm(one, 0.5)
    g1 = PeriodicGrid(1, 10)
    f = GridField(g1, g1.nodes())
    assert sample_at(f, 0.3) == pytest.approx(0.3)
    assert sample_at(f, 0.34) == pytest.approx(0.34)
    x, y = g.mesh()
    bil = GridField(g, x + 2 * y)
    assert sample_at(bil, [0.25, 0.5]) == pytest.approx(1.25)
    assert sample_at(bil, [0.3, 0.55]) == pytest.approx(0.3 + 1.1)


def test_density_from_function_and_resample():
    g = PeriodicGrid(1, 64)
    u = density_from_function(g, lambda x: 1 + 0.5 * np.sin(2 * np.pi * x))
    assert u.kind == "density" and mass(u) == pytest.approx(1.0, abs=1e-14)
    fine = resample_spectral(u.values, 256)
    x = np.arange(256) / 256
    assert np.allclose(fine, 1 + 0.5 * np.sin(2 * np.pi * x), atol=1e-12)
    assert np.allclose(resample_spectral(fine, 64), u.values, atol=1e-12)
    g2 = PeriodicGrid(2, 16)
    r = np.random.default_rng(0).random(g2.shape)
    assert resample_spectral(r, 32).mean() == pytest.approx(r.mean(), abs=1e-14)


def test_apply_multiplier_identity(rng):
    v = rng.standard_normal((16, 16))
    assert np.allclose(apply_multiplier(v, np.ones((16, 16))), v, atol=1e-13)
