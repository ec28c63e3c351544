import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shallowstat.errors import ClippedSignal, ConfigError, DimensionMismatch, InsufficientData
from shallowstat.fields import ArrayGeometry, array_correlation
from shallowstat.montecarlo import synthesize_snapshots
from shallowstat.pipeline import (
    RecordingMeta,
    SnapshotSet,
    detect_tones,
    empirical_correlation,
    empirical_radius,
    empirical_scintillation,
    extract_coefficients,
    read_recording,
    read_snapshots,
    stack_arms,
    synthesize_recording,
    write_recording,
    write_snapshots,
)

FS = 8000.0


def meta_for(freqs, depths=(10.0,), **kw):
    kw.setdefault("repetition_period", 10.0)
    return RecordingMeta(FS, depths, freqs, **kw)


def test_matched_tone_gives_window_mass():
    f = 440.0
    meta = meta_for([f])
    t = np.arange(int(3 * FS)) / FS
    s = np.cos(2 * np.pi * f * t)[:, None]
    snaps = extract_coefficients(s, meta, centres={f: [1.5]})
    c = snaps.at(f)[0, 0]
    w = np.hanning(int(FS))
    # a real cosine carries half its amplitude at +f
    assert abs(c) == pytest.approx(0.5 * w.sum(), rel=1e-4)
    assert abs(np.angle(c)) < 1e-3


def test_complex_tone_transfer():
    f = 440.0
    n = int(FS)
    w = np.hanning(n)
    t = np.arange(n) / FS
    matched = abs(np.sum(w * np.exp(2j * np.pi * f * t) * np.exp(-2j * np.pi * f * t)))
    assert matched == pytest.approx(w.sum())
    off = abs(np.sum(w * np.exp(2j * np.pi * (f + 4.0) * t) * np.exp(-2j * np.pi * f * t)))
    assert off < 0.01 * matched


def test_detuned_tone_is_suppressed():
    f = 440.0
    meta = meta_for([f])
    t = np.arange(int(3 * FS)) / FS
    on = extract_coefficients(np.cos(2 * np.pi * f * t)[:, None], meta, centres={f: [1.5]}).at(f)[0, 0]
    off = extract_coefficients(np.cos(2 * np.pi * (f + 4.0) * t)[:, None], meta, centres={f: [1.5]}).at(f)[0, 0]
    assert abs(off) < 0.01 * abs(on)


def test_tone_detection_finds_bursts():
    f = 1000.0
    t = np.arange(int(12 * FS)) / FS
    s = np.zeros_like(t)
    for t0 in (1.0, 6.0):
        sel = (t >= t0) & (t < t0 + 2.0)
        s[sel] = np.sin(2 * np.pi * f * t[sel])
    s += 1e-3 * np.random.default_rng(0).standard_normal(t.size)
    centres = detect_tones(s[:, None], FS, f)
    assert len(centres) == 2
    np.testing.assert_allclose(centres, [2.0, 7.0], atol=0.05)


def test_recording_synthesis_round_trip(tmp_path):
    depths = (59.0, 60.0, 61.0)
    freqs = (900.0, 1300.0)
    rng = np.random.default_rng(3)
    data = {f: rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)) for f in freqs}
    snaps = SnapshotSet(np.array(depths), data)
    meta = meta_for(freqs, depths, repetition_period=6.0)
    rec = synthesize_recording(snaps, meta)
    write_recording(tmp_path / "rec", rec, meta)
    back, meta2 = read_recording(tmp_path / "rec")
    assert meta2 == meta
    np.testing.assert_array_equal(back, rec.astype("<f4"))
    ext = extract_coefficients(back, meta2)
    w = np.hanning(int(FS))
    for f in freqs:
        # a tone Re(c e^{2 pi i f t}) comes back as c times half the window mass
        np.testing.assert_allclose(ext.at(f) / (0.5 * w.sum()), data[f], rtol=0, atol=2e-3)
        assert ext.reps[f].tolist() == [0, 1, 2]


def test_recording_sidecar_is_versioned(tmp_path):
    meta = meta_for([500.0])
    write_recording(tmp_path / "r", np.zeros((10, 1)), meta)
    side = json.loads((tmp_path / "r.json").read_text())
    assert side["format_version"] == 1 and side["n_samples"] == 10
    side["format_version"] = 99
    (tmp_path / "r.json").write_text(json.dumps(side))
    with pytest.raises(ConfigError):
        read_recording(tmp_path / "r")


def test_clipping_warns():
    meta = meta_for([440.0], full_scale=0.5)
    t = np.arange(int(3 * FS)) / FS
    with pytest.warns(ClippedSignal):
        extract_coefficients(np.cos(2 * np.pi * 440.0 * t)[:, None], meta, centres={440.0: [1.5]})


def test_missing_tone_warns():
    meta = meta_for([440.0])
    with pytest.warns(RuntimeWarning):
        out = extract_coefficients(np.zeros((int(3 * FS), 1)), meta)
    assert out.frequencies == []


def test_meta_validation():
    with pytest.raises(ConfigError):
        RecordingMeta(1000.0, (1.0,), (600.0,), 5.0)
    with pytest.raises(ConfigError):
        RecordingMeta(8000.0, (1.0,), (600.0,), 5.0, window_duration=3.0)


complex_arrays = st.integers(1, 5).flatmap(
    lambda n: st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=3 * n, max_size=3 * n))


@given(vals=complex_arrays)
def test_snapshot_csv_round_trip_is_exact(tmp_path_factory, vals):
    arr = np.array([complex(a, b) for a, b in vals]).reshape(-1, 3)
    snaps = SnapshotSet(np.array([1.0, 1.15, 1.3]), {2000.0: arr, 13000.0: arr[::-1]},
                        {2000.0: np.arange(arr.shape[0]) * 2, 13000.0: np.zeros(arr.shape[0], int)})
    path = tmp_path_factory.mktemp("snap") / "s.csv"
    write_snapshots(path, snaps)
    back = read_snapshots(path)
    assert back.frequencies == snaps.frequencies
    for f in snaps.frequencies:
        np.testing.assert_array_equal(back.data[f], snaps.data[f])
        np.testing.assert_array_equal(back.reps[f], snaps.reps[f])
    np.testing.assert_array_equal(back.depths, snaps.depths)


def test_snapshot_file_checks(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("freq_hz,rep,hydro_index,depth_m,re,im\n")
    with pytest.raises(ConfigError):
        read_snapshots(p)
    p.write_text("# format_version: 1\nfreq_hz,rep,hydro_index,depth_m,re,im\n1.0,0,0,1.0,1.0,0.0\n1.0,0,2,1.3,1.0,0.0\n")
    with pytest.raises(DimensionMismatch):
        read_snapshots(p)


def test_stacked_arms_keep_all_snapshots():
    d = np.array([1.0, 2.0])
    a = SnapshotSet(d, {100.0: np.ones((2, 2))})
    b = SnapshotSet(d, {100.0: 2 * np.ones((3, 2))})
    s = stack_arms([a, b])
    assert s.at(100.0).shape == (5, 2)
    with pytest.raises(DimensionMismatch):
        stack_arms([a, SnapshotSet(np.array([1.0, 3.0]), {100.0: np.ones((1, 2))})])


def test_zero_lag_bin_is_one(low_freq_modes):
    snaps = synthesize_snapshots(low_freq_modes, np.array([1.0, 0.5, 0.2]), ArrayGeometry.alma(), 50, seed=1)
    c = empirical_correlation(snaps, snaps.frequencies[0])
    assert c.values[0] == 1.0
    assert c.counts[0] == 32


def test_single_snapshot_flags_low_sample():
    snaps = SnapshotSet(np.array([1.0, 2.0]), {100.0: np.array([[1.0 + 1j, 0.5]])})
    c = empirical_correlation(snaps, 100.0)
    assert c.low_sample and np.all(np.isnan(c.se))
    assert c.values[0] == 1.0
    with pytest.raises(InsufficientData):
        empirical_scintillation(snaps, 100.0)
    with pytest.raises(InsufficientData):
        empirical_correlation(snaps, 200.0)


def test_constant_amplitude_has_no_scintillation(rng):
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (200, 4)))
    snaps = SnapshotSet(np.arange(4.0), {500.0: 3.0 * phases})
    est = empirical_scintillation(snaps, 500.0)
    assert est.value == pytest.approx(0.0, abs=1e-12)


def test_rayleigh_speckle_scintillation_is_one(rng):
    n = 200000
    z = (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))) / math.sqrt(2)
    est = empirical_scintillation(SnapshotSet(np.arange(3.0), {500.0: z}), 500.0)
    assert abs(est.value - 1.0) < 4 * est.se
    assert est.se < 0.01


def test_estimator_matches_discrete_expectation(low_freq_modes):
    P = np.array([1.0, 0.5, 0.2])
    geom = ArrayGeometry.uniform(40.0, 12, 2.0)
    snaps = synthesize_snapshots(low_freq_modes, P, geom, 4000, seed=7)
    f = snaps.frequencies[0]
    emp = empirical_correlation(snaps, f)
    theory = array_correlation(low_freq_modes, P, geom.depths)
    z = (emp.values[1:] - theory.values[1:]) / emp.se[1:]
    assert np.all(np.abs(z) < 4.5)
    assert empirical_radius(emp) == pytest.approx(emp.radius)
