import numpy as np
import pytest

from shallowstat import kernels
from shallowstat.coupling import CouplingModel
from shallowstat.errors import ConfigError, DimensionMismatch, StepTooLarge
from shallowstat.fields import ArrayGeometry
from shallowstat.modes import mode_shapes
from shallowstat.montecarlo import ensemble_state, fixed_state, simulate_powers, synthesize_snapshots
from shallowstat.moments import intensity_moments, propagate_Q, propagate_S, upper_to_symmetric


def three_mode(lam=0.0):
    G = np.array([[0, 0.4, 0.1], [0.4, 0, 0.25], [0.1, 0.25, 0]])
    return CouplingModel.from_arrays(G, lam)


def test_lossless_paths_conserve_power():
    c = three_mode()
    Q0 = np.array([1.0, 0.2, 0.0])
    ens = simulate_powers(c, Q0, 5.0, 0.01, 50, seed=1, n_records=5)
    totals = ens.P.sum(axis=2)
    assert np.abs(totals - Q0.sum()).max() < 1e-10 * 500
    assert np.all(ens.P >= 0)


def test_ensemble_tracks_moment_equations():
    c = three_mode(lam=0.05)
    Q0 = np.array([1.0, 0.0, 0.5])
    x = 4.0
    ens = simulate_powers(c, Q0, x, 0.01, 4000, seed=2)
    z = (ens.mean() - propagate_Q(c, Q0, x)) / ens.standard_error()
    assert np.all(np.abs(z) < 4)
    R = upper_to_symmetric(propagate_S(c, Q0, x), 3) * (0.5 + 0.5 * np.eye(3))
    X = ens.final
    est = ens.second_moments()
    se = np.array([[np.std(X[:, j] * X[:, l], ddof=1) for l in range(3)] for j in range(3)]) / np.sqrt(4000)
    assert np.all(np.abs(est - R) < 4 * se)


def test_same_seed_same_paths():
    c = three_mode()
    a = simulate_powers(c, np.ones(3), 1.0, 0.01, 20, seed=5)
    b = simulate_powers(c, np.ones(3), 1.0, 0.01, 20, seed=5)
    np.testing.assert_array_equal(a.P, b.P)


def test_record_grid_reaches_end():
    ens = simulate_powers(three_mode(), np.ones(3), 2.0, 0.03, 3, seed=0, n_records=4)
    assert ens.x_grid[0] == 0.0 and ens.x_grid[-1] == pytest.approx(2.0)
    assert ens.P.shape == (5, 3, 3)


def test_step_limit_and_input_checks():
    c = three_mode()
    with pytest.raises(StepTooLarge):
        simulate_powers(c, np.ones(3), 1.0, 0.5, 2)
    with pytest.raises(DimensionMismatch):
        simulate_powers(c, np.ones(4), 1.0, 0.01, 2)
    with pytest.raises(ConfigError):
        simulate_powers(c, -np.ones(3), 1.0, 0.01, 2)


def test_em_block_variants_agree():
    rng = np.random.default_rng(9)
    G = np.array([[0, 2.0, 0.5], [2.0, 0, 1.0], [0.5, 1.0, 0]])
    lam = np.array([0.1, 0.0, 0.3])
    pj, pl = np.triu_indices(3, 1)
    Z = rng.standard_normal((50, 8, 3))
    P0 = rng.uniform(0, 1, (8, 3))
    a, b = P0.copy(), P0.copy()
    na = kernels._em_block_numpy(a, G, lam, 0.02, Z, pj, pl)
    nb = kernels._em_block_numba(b, G, lam, 0.02, Z, pj, pl)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    assert na == nb


def test_fixed_state_second_moments():
    P = np.array([0.5, 2.0])
    s = fixed_state(P)
    np.testing.assert_allclose(s.S_full(), [[0.25, 2.0], [2.0, 4.0]])


def test_ensemble_state_matches_samples():
    ens = simulate_powers(three_mode(), np.array([1.0, 0.0, 0.0]), 1.0, 0.01, 30, seed=3)
    st = ensemble_state(ens)
    np.testing.assert_allclose(st.Q, ens.final.mean(axis=0))


def test_snapshots_have_phase_averaged_intensity(low_freq_modes):
    P = np.array([1.0, 0.4, 0.3])
    depths = np.array([20.0, 45.0, 70.0])
    snaps = synthesize_snapshots(low_freq_modes, P, depths, 20000, seed=11)
    data = snaps.at(snaps.frequencies[0])
    m2, m4 = intensity_moments(low_freq_modes, fixed_state(P), depths)
    I = np.abs(data) ** 2
    se2 = I.std(axis=0) / np.sqrt(I.shape[0])
    assert np.all(np.abs(I.mean(axis=0) - m2) < 4 * se2)
    se4 = (I**2).std(axis=0) / np.sqrt(I.shape[0])
    assert np.all(np.abs((I**2).mean(axis=0) - m4) < 4 * se4)


def test_snapshot_ensemble_draws_rows(low_freq_modes):
    Px = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    geom = ArrayGeometry.uniform(40.0, 4, 1.0)
    snaps = synthesize_snapshots(low_freq_modes, Px, geom, 200, seed=4)
    I = np.abs(snaps.at(snaps.frequencies[0])) ** 2
    phi = mode_shapes(low_freq_modes, geom.depths) ** 2 / low_freq_modes.beta[:, None]
    # each snapshot is a single mode, so its intensity profile is one of two shapes
    for row in I:
        assert np.allclose(row, phi[0]) or np.allclose(row, phi[2])
    with pytest.raises(DimensionMismatch):
        synthesize_snapshots(low_freq_modes, np.ones(2), geom, 3)
