import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shallowstat.errors import ConfigError, DomainError
from shallowstat.modes import (
    EnvironmentParams,
    SourceSpec,
    continuous_mode,
    dispersion_residual,
    eval_phi_gamma,
    eval_phi_j,
    mode_count,
    mode_shapes,
    solve_modes,
    source_amplitudes,
    sediment_tail_integral,
)

from conftest import omega
from oracles import gram_matrix, sign_scan_roots

environments = st.builds(
    lambda c_w, dc, rho_s, z_b, f: (EnvironmentParams(c_w=c_w, c_s=c_w + dc, rho_s=rho_s, z_b=z_b), f),
    c_w=st.floats(1450.0, 1550.0),
    dc=st.floats(5.0, 400.0),
    rho_s=st.floats(1100.0, 2500.0),
    z_b=st.floats(10.0, 200.0),
    f=st.floats(20.0, 1500.0),
)


@given(environments)
def test_roots_match_sign_scan(case):
    env, f = case
    modes = solve_modes(env, omega(f))
    roots = sign_scan_roots(env, omega(f))
    assert modes.N + modes.dropped == roots.size
    np.testing.assert_allclose(modes.sigma, roots[: modes.N], rtol=0, atol=1e-9)


@given(environments)
def test_modes_orthonormal_with_density_weight(case):
    env, f = case
    modes = solve_modes(env, omega(f))
    if modes.N == 0:
        return
    err = np.abs(gram_matrix(modes) - np.eye(modes.N)).max()
    assert err < 1e-8


@given(environments)
def test_wavenumbers_ordered_and_bounded(case):
    env, f = case
    modes = solve_modes(env, omega(f))
    if modes.N == 0:
        return
    assert np.all(np.diff(modes.beta) < 0)
    assert np.all(modes.beta > modes.k_s) and np.all(modes.beta < modes.k_w)
    np.testing.assert_allclose(modes.beta**2 + modes.k_wj**2, modes.k_w**2, rtol=1e-12)
    np.testing.assert_allclose(modes.sigma**2 + modes.zeta**2, modes.V**2, rtol=1e-10)
    assert np.all(np.abs(dispersion_residual(modes.sigma, env, omega(f))) < 1e-10)


def test_mode_count_formula():
    env = EnvironmentParams()
    for f in (30.0, 200.0, 2000.0):
        V = env.z_b * omega(f) * math.sqrt(1 / env.c_w**2 - 1 / env.c_s**2)
        assert mode_count(env, omega(f)) == math.floor(V / math.pi + 0.5)
        assert solve_modes(env, omega(f)).N == mode_count(env, omega(f))


def test_below_cutoff_has_no_modes():
    env = EnvironmentParams()
    modes = solve_modes(env, omega(5.0))
    assert modes.N == 0
    with pytest.raises(Exception):
        modes.require_guided()


def test_mode_shape_continuity_at_interface(low_freq_modes):
    zb = low_freq_modes.z_b
    above = mode_shapes(low_freq_modes, [zb * (1 - 1e-12)])[:, 0]
    below = mode_shapes(low_freq_modes, [zb * (1 + 1e-12)])[:, 0]
    np.testing.assert_allclose(above, below, rtol=1e-9, atol=1e-14)


def test_eval_phi_j_matches_table(low_freq_modes):
    z = np.linspace(0, 150, 7)
    tab = mode_shapes(low_freq_modes, z)
    for j in range(low_freq_modes.N):
        np.testing.assert_allclose(eval_phi_j(low_freq_modes, j, z), tab[j])
    with pytest.raises(IndexError):
        eval_phi_j(low_freq_modes, low_freq_modes.N, 1.0)
    with pytest.raises(DomainError):
        mode_shapes(low_freq_modes, [-1.0])


def test_sediment_tail_integral_by_quadrature(low_freq_modes):
    from scipy.integrate import quad

    zb = low_freq_modes.z_b
    for j in range(low_freq_modes.N):
        val, _ = quad(lambda z: eval_phi_j(low_freq_modes, j, z) ** 2, zb, np.inf, epsabs=0, epsrel=1e-12)
        assert sediment_tail_integral(low_freq_modes)[j] == pytest.approx(val, rel=1e-9)


def test_source_amplitudes(low_freq_modes):
    src = SourceSpec(z0=50.0)
    Q0 = source_amplitudes(low_freq_modes, src)
    phi = np.array([eval_phi_j(low_freq_modes, j, 50.0) for j in range(low_freq_modes.N)])
    np.testing.assert_allclose(Q0, low_freq_modes.beta * phi**2 / 4)
    with pytest.raises(ConfigError):
        source_amplitudes(low_freq_modes, SourceSpec(z0=200.0))


def test_continuous_mode_matches_interface_conditions(low_freq_modes):
    env = low_freq_modes.env
    gamma = 0.3 * low_freq_modes.k_s**2
    zb = low_freq_modes.z_b
    h = 1e-5
    up = eval_phi_gamma(low_freq_modes, gamma, zb - h)
    at = eval_phi_gamma(low_freq_modes, gamma, zb)
    dn = eval_phi_gamma(low_freq_modes, gamma, zb + h)
    assert up == pytest.approx(at, rel=1e-4) and dn == pytest.approx(at, rel=1e-4)
    # continuity of phi'/rho
    d_up = (at - up) / h / env.rho_w
    d_dn = (dn - at) / h / env.rho_s
    assert d_up == pytest.approx(d_dn, rel=1e-3)
    with pytest.raises(DomainError):
        continuous_mode(low_freq_modes, low_freq_modes.k_s**2)


def test_environment_validation():
    with pytest.raises(ConfigError):
        EnvironmentParams(c_s=1500.0)
    with pytest.raises(ConfigError):
        EnvironmentParams(ell_v=0.0)
    with pytest.raises(ConfigError):
        SourceSpec(x_a=-1.0)
    assert EnvironmentParams().replace(sigma=0.1).sigma == 0.1
