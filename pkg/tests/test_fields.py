import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from shallowstat.errors import ConfigError, EmptyAperture, NotReachedWarning
from shallowstat.fields import (
    ArrayGeometry,
    CorrelationCurve,
    array_correlation,
    correlation_curve,
    correlation_radius,
    forward_frequency,
    forward_radii,
    lag_pairs,
)
from shallowstat.modes import SourceSpec, mode_shapes, solve_modes, source_amplitudes

from conftest import omega
from oracles import gauss_legendre


def single_mode_formula(k, z_m, z_M, y):
    L = z_M - z_m
    return (np.cos(k * y) * (L - y) - (np.sin(k * (2 * z_M - y)) - np.sin(k * (2 * z_m + y))) / (2 * k)) / (L - y)


@pytest.fixture
def modes_2k(alma_env):
    return solve_modes(alma_env, omega(2000.0))


def test_zero_lag_is_one(modes_2k, source):
    Q0 = source_amplitudes(modes_2k, source)
    c = correlation_curve(modes_2k, Q0, ArrayGeometry.alma())
    assert c.values[0] == 1.0
    assert c.evaluator(0.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("j", [0, 7, 40])
def test_single_mode_curve(modes_2k, j):
    one = modes_2k.truncate([j])
    geom = ArrayGeometry(20.0, 31.0)
    y = np.linspace(0, 10.0, 41)
    c = correlation_curve(one, np.array([2.0]), geom, y)
    k = one.k_wj[0]
    expected = single_mode_formula(k, 20.0, 31.0, y) / single_mode_formula(k, 20.0, 31.0, 0.0)
    np.testing.assert_allclose(c.values, expected, rtol=1e-12, atol=1e-13)


def brute_correlation(modes, Q, z_m, z_M, y, m=40, panels=40):
    x, w = gauss_legendre(m)
    out = []
    for yy in y:
        edges = np.linspace(z_m, z_M - yy, panels + 1)
        h = edges[1] - edges[0]
        z = (edges[:-1, None] + 0.5 * h * (x + 1)).ravel()
        wz = np.tile(0.5 * h * w, panels)
        prod = mode_shapes(modes, z) * mode_shapes(modes, z + yy)
        out.append((Q / modes.beta) @ (prod @ wz) / (z_M - z_m - yy))
    out = np.array(out)
    return out / out[0]


def test_equipartition_curve_matches_quadrature(modes_2k):
    Q = np.ones(modes_2k.N)
    geom = ArrayGeometry.alma()
    y = np.linspace(0, 0.95 * geom.aperture, 25)
    c = correlation_curve(modes_2k, Q, geom, y)
    ref = brute_correlation(modes_2k, Q, geom.z_m, geom.z_M, y)
    np.testing.assert_allclose(c.values, ref, rtol=0, atol=1e-8)


def test_radius_of_a_dominant_cosine(modes_2k):
    one = modes_2k.truncate([60])
    k = one.k_wj[0]
    geom = ArrayGeometry(5.0, 105.0)
    c = correlation_curve(one, np.array([1.0]), geom)
    f = lambda y: single_mode_formula(k, 5.0, 105.0, y) / single_mode_formula(k, 5.0, 105.0, 0.0) - 0.5
    exact = brentq(f, 1e-6, math.pi / (2 * k), xtol=1e-14)
    assert c.radius == pytest.approx(exact, abs=1e-6)
    assert c.radius == pytest.approx(math.pi / (3 * k), rel=0.02)
    assert c.reached


def test_tabulated_radius_interpolates():
    curve = CorrelationCurve(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.8, 0.2]))
    assert correlation_radius(curve) == pytest.approx(1.5)


def test_flat_curve_not_reached():
    curve = CorrelationCurve(np.linspace(0, 4, 9), np.ones(9))
    with pytest.warns(NotReachedWarning):
        r = correlation_radius(curve, limit=4.5)
    assert r == 4.5 and not curve.reached


def test_lags_must_fit_aperture(modes_2k):
    geom = ArrayGeometry.alma()
    with pytest.raises(EmptyAperture):
        correlation_curve(modes_2k, np.ones(modes_2k.N), geom, [0.0, geom.aperture])
    with pytest.raises(ConfigError):
        correlation_curve(modes_2k, np.ones(modes_2k.N), ArrayGeometry(100.0, 120.0))
    with pytest.raises(ConfigError):
        correlation_curve(modes_2k, np.zeros(modes_2k.N), geom)


def test_array_geometry():
    g = ArrayGeometry.alma()
    assert len(g.hydrophone_depths) == 32
    assert g.aperture == pytest.approx(31 * 0.15)
    assert np.mean(g.depths) == pytest.approx(60.0)
    with pytest.raises(ConfigError):
        ArrayGeometry(10.0, 5.0)
    with pytest.raises(ConfigError):
        ArrayGeometry(10.0, 20.0, (5.0, 12.0))


@given(count=st.integers(2, 20), spacing=st.floats(0.05, 2.0))
def test_lag_pairs_cover_all_pairs(count, spacing):
    depths = 50.0 + spacing * np.arange(count)
    n, m, b, counts, width = lag_pairs(depths)
    assert counts.sum() == count * (count + 1) // 2
    assert counts.tolist() == [count - d for d in range(count)]
    assert width == pytest.approx(spacing)


def test_array_correlation_is_pair_average(modes_2k, source):
    Q = source_amplitudes(modes_2k, source)
    depths = ArrayGeometry.alma().depths
    c = array_correlation(modes_2k, Q, depths)
    phi = mode_shapes(modes_2k, depths)
    K = (phi.T * (Q / modes_2k.beta)) @ phi
    diag = [np.mean(np.diagonal(K, d)) for d in range(depths.size)]
    np.testing.assert_allclose(c.values, np.array(diag) / diag[0], rtol=1e-12)
    assert 0 < c.radius < ArrayGeometry.alma().aperture


def test_static_waveguide_keeps_initial_powers(alma_env, source):
    env = alma_env.replace(sigma=0.0, nu_s=0.0)
    geom = ArrayGeometry.alma()
    r = forward_frequency(env, source, geom, 2000.0)
    modes = solve_modes(env, omega(2000.0))
    np.testing.assert_array_equal(r.Qx, source_amplitudes(modes, source))
    assert r.radius == correlation_curve(modes, r.Qx, geom).radius


def test_sediment_speed_moves_radius(alma_env, source):
    geom = ArrayGeometry.alma()
    a = forward_frequency(alma_env, source, geom, 2000.0, n_max=100, quadrature="fast").radius
    b = forward_frequency(alma_env.replace(c_s=1650.0), source, geom, 2000.0, n_max=100, quadrature="fast").radius
    assert abs(a - b) > 1e-4


def test_frequency_without_modes_is_dropped(alma_env, source):
    with pytest.warns(RuntimeWarning):
        out = forward_radii(alma_env, source, ArrayGeometry.alma(), [5.0, 50.0])
    assert out.dropped == [5.0]
    assert out.freqs.tolist() == [50.0]


def test_range_mismatch_rejected(alma_env):
    with pytest.raises(ConfigError):
        forward_frequency(alma_env, SourceSpec(x_a=5000.0), ArrayGeometry.alma(x_a=9000.0), 50.0)


def test_fixed_mode_indices(alma_env, source):
    geom = ArrayGeometry.alma()
    r = forward_frequency(alma_env, source, geom, 2000.0, keep=[0, 1, 2, 500])
    assert r.N_used == 3 and r.N > 3
