"""Recording and snapshot ingestion, Fourier-coefficient extraction, and the
empirical correlation / scintillation estimators.

File formats (all carry ``format_version``):

* recording: ``<base>.bin`` little-endian float32 samples, channel-interleaved
  (sample-major), plus ``<base>.json`` holding the RecordingMeta;
* snapshots: CSV whose first line is ``# format_version: 1`` followed by the
  header ``freq_hz,rep,hydro_index,depth_m,re,im``.
"""

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ClippedSignal, ConfigError, DimensionMismatch, InsufficientData, ToneNotFound
from .fields import CorrelationCurve, _radius, lag_pairs

FORMAT_VERSION = 1
SNAPSHOT_HEADER = ["freq_hz", "rep", "hydro_index", "depth_m", "re", "im"]

ONSET_FRAME = 0.05      # s, short-time bandpower frame
ONSET_THRESHOLD_DB = 6.0
ONSET_DWELL = 0.5       # s
ONSET_RANGE_DB = 60.0   # the floor is never taken further than this below the peak


@dataclass
class RecordingMeta:
    sample_rate: float
    hydrophone_depths: tuple
    frequencies: tuple
    repetition_period: float
    tone_duration: float = 2.0
    window_duration: float = 1.0
    full_scale: Optional[float] = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.hydrophone_depths = tuple(float(d) for d in self.hydrophone_depths)
        self.frequencies = tuple(float(f) for f in self.frequencies)
        if self.frequencies and self.sample_rate <= 2 * max(self.frequencies):
            raise ConfigError("sample rate must exceed twice the highest frequency")
        if not 0 < self.window_duration <= self.tone_duration:
            raise ConfigError("window must be positive and no longer than the tone")
        if self.repetition_period <= 0:
            raise ConfigError("repetition period must be positive")

    @property
    def n_channels(self):
        return len(self.hydrophone_depths)

    def to_dict(self):
        d = asdict(self)
        d["hydrophone_depths"] = list(self.hydrophone_depths)
        d["frequencies"] = list(self.frequencies)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("format_version", None)
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported recording format_version {version!r}")
        d.pop("n_samples", None)
        d.pop("n_channels", None)
        d.pop("dtype", None)
        return cls(**d)


@dataclass
class SnapshotSet:
    """Complex coefficients per frequency: ``data[f]`` has shape
    (n_snapshots, n_hydrophones) and ``reps[f]`` the repetition indices."""

    depths: np.ndarray
    data: dict = field(default_factory=dict)
    reps: dict = field(default_factory=dict)
    meta: Optional[RecordingMeta] = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        for f, v in list(self.data.items()):
            v = np.atleast_2d(np.asarray(v, dtype=complex))
            if v.shape[1] != self.depths.size:
                raise DimensionMismatch(f"{v.shape[1]} hydrophones at {f} Hz, expected {self.depths.size}")
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"non-finite coefficients at {f} Hz")
            self.data[f] = v
            if f not in self.reps:
                self.reps[f] = np.arange(v.shape[0])
            self.reps[f] = np.asarray(self.reps[f], dtype=int)

    @property
    def frequencies(self):
        return sorted(self.data)

    def at(self, freq):
        for f in self.data:
            if math.isclose(f, freq, rel_tol=1e-9):
                return self.data[f]
        raise InsufficientData(f"no snapshots at {freq} Hz")


def stack_arms(sets):
    """Treat several vertical arms as independent realisations of one array.
    Snapshots are concatenated; no pair ever mixes two arms."""
    sets = list(sets)
    if not sets:
        raise InsufficientData("no arms given")
    depths = sets[0].depths
    for s in sets[1:]:
        if not np.allclose(s.depths, depths):
            raise DimensionMismatch("arms have different hydrophone depths")
    out = SnapshotSet(depths, meta=sets[0].meta)
    for f in sorted({f for s in sets for f in s.data}):
        blocks = [s.data[f] for s in sets if f in s.data]
        reps = [s.reps[f] for s in sets if f in s.data]
        out.data[f] = np.vstack(blocks)
        out.reps[f] = np.concatenate(reps)
    return out


# --- files ----------------------------------------------------------------------


def write_recording(base, samples, meta):
    """Write ``samples`` (n_samples, n_channels) as ``base.bin`` + ``base.json``."""
    base = Path(base)
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[1] != meta.n_channels:
        raise DimensionMismatch(f"samples shape {samples.shape} vs {meta.n_channels} channels")
    samples.astype("<f4").tofile(base.with_suffix(".bin"))
    side = meta.to_dict()
    side.update(n_samples=int(samples.shape[0]), n_channels=meta.n_channels, dtype="<f4")
    base.with_suffix(".json").write_text(json.dumps(side, indent=2), encoding="utf-8")


def read_recording(base):
    base = Path(base)
    side = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    n_ch, n_s = side["n_channels"], side["n_samples"]
    meta = RecordingMeta.from_dict(side)
    raw = np.fromfile(base.with_suffix(".bin"), dtype="<f4")
    if raw.size != n_ch * n_s:
        raise DimensionMismatch(f"expected {n_ch * n_s} samples, file holds {raw.size}")
    return raw.reshape(n_s, n_ch), meta


def write_snapshots(path, snaps):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_HEADER)
        for f in snaps.frequencies:
            for row, rep in zip(snaps.data[f], snaps.reps[f]):
                for h, (d, c) in enumerate(zip(snaps.depths, row)):
                    w.writerow([repr(float(f)), int(rep), h, repr(float(d)), repr(float(c.real)), repr(float(c.imag))])


def read_snapshots(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#") or "format_version" not in first:
            raise ConfigError("snapshot file lacks a format_version line")
        version = int(first.split(":", 1)[1])
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported snapshot format_version {version}")
        rd = csv.reader(fh)
        if next(rd, None) != SNAPSHOT_HEADER:
            raise ConfigError(f"snapshot header must be {','.join(SNAPSHOT_HEADER)}")
        rows = [r for r in rd if r]
    if not rows:
        return SnapshotSet(np.zeros(0))
    freq = np.array([float(r[0]) for r in rows])
    rep = np.array([int(r[1]) for r in rows])
    hyd = np.array([int(r[2]) for r in rows])
    depth = np.array([float(r[3]) for r in rows])
    val = np.array([float(r[4]) for r in rows]) + 1j * np.array([float(r[5]) for r in rows])
    n_h = hyd.max() + 1
    depths = np.full(n_h, np.nan)
    depths[hyd] = depth
    if np.any(np.isnan(depths)):
        raise DimensionMismatch("some hydrophone indices never appear")
    out = SnapshotSet(depths)
    for f in np.unique(freq):
        sel = np.nonzero(freq == f)[0]
        # one snapshot is a run of n_h consecutive rows in hydrophone order
        if sel.size % n_h or np.any(hyd[sel].reshape(-1, n_h) != np.arange(n_h)):
            raise DimensionMismatch(f"incomplete snapshot rows at {f} Hz")
        out.data[float(f)] = val[sel].reshape(-1, n_h)
        out.reps[float(f)] = rep[sel][::n_h]
    out.__post_init__()
    return out


# --- coefficient extraction ---------------------------------------------------------


def _bandpower(samples, fs, freq):
    n = max(int(round(ONSET_FRAME * fs)), 8)
    hop = n // 2
    n_frames = (samples.shape[0] - n) // hop + 1
    if n_frames < 1:
        return np.zeros(0), n, hop
    w = np.hanning(n)
    ph = np.exp(-2j * np.pi * freq * np.arange(n) / fs)
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n)[None, :]
    power = np.zeros(n_frames)
    for c in range(samples.shape[1]):
        power += np.abs((samples[idx, c] * w) @ ph) ** 2
    return power, n, hop


def detect_tones(samples, fs, freq):
    """Centre times (s) of tone bursts at ``freq``: frames whose band power
    exceeds the noise floor by ONSET_THRESHOLD_DB for at least ONSET_DWELL."""
    power, n, hop = _bandpower(samples, fs, freq)
    if power.size == 0:
        return []
    floor = max(np.percentile(power, 10), power.max() * 10 ** (-ONSET_RANGE_DB / 10), np.finfo(float).tiny)
    on = power > floor * 10 ** (ONSET_THRESHOLD_DB / 10)
    edges = np.diff(np.concatenate([[0], on.astype(int), [0]]))
    starts, stops = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
    centres = []
    for a, b in zip(starts, stops):
        t0 = a * hop / fs
        t1 = ((b - 1) * hop + n) / fs
        if t1 - t0 >= ONSET_DWELL:
            centres.append(0.5 * (t0 + t1))
    return centres


def extract_coefficients(samples, meta, centres=None):
    """Per repetition and frequency, sum_t w(t) s(t) exp(-2 pi i f t) over a
    Hann window of ``meta.window_duration`` centred in the tone.

    ``centres`` optionally maps frequency -> list of tone centre times; by
    default tones are found by ``detect_tones``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[1] != meta.n_channels:
        raise DimensionMismatch(f"{samples.shape[1]} channels, meta lists {meta.n_channels} depths")
    if meta.full_scale is not None and np.any(np.abs(samples) >= meta.full_scale):
        warnings.warn("samples reach full scale", ClippedSignal, stacklevel=2)
    fs = meta.sample_rate
    n_win = int(round(meta.window_duration * fs))
    w = np.hanning(n_win)
    n_rep = int(math.ceil(samples.shape[0] / fs / meta.repetition_period))
    out = SnapshotSet(np.asarray(meta.hydrophone_depths), meta=meta)
    for f in meta.frequencies:
        cs = centres.get(f) if centres is not None else None
        if cs is None:
            cs = detect_tones(samples, fs, f)
        rows, reps = [], []
        for c in cs:
            i0 = int(round(c * fs)) - n_win // 2
            if i0 < 0 or i0 + n_win > samples.shape[0]:
                continue
            t = (i0 + np.arange(n_win)) / fs
            rows.append((w * np.exp(-2j * np.pi * f * t)) @ samples[i0:i0 + n_win])
            reps.append(int(c // meta.repetition_period))
        missing = sorted(set(range(n_rep)) - set(reps))
        if missing:
            warnings.warn(f"{f} Hz: no tone in repetitions {missing}; skipped", RuntimeWarning, stacklevel=2)
        if not rows:
            warnings.warn(str(ToneNotFound(f"no tone found at {f} Hz")), RuntimeWarning, stacklevel=2)
            continue
        out.data[float(f)] = np.array(rows)
        out.reps[float(f)] = np.array(reps)
    out.__post_init__()
    return out


def synthesize_recording(snaps, meta, tone_offsets=None, noise=0.0, seed=None):
    """Time series in which repetition r, frequency f carries the tone
    Re(c exp(2 pi i f t)) for the snapshot coefficients c.  Tone k of each
    repetition starts at ``tone_offsets[k]`` (default: back to back from 0.5 s)."""
    fs = meta.sample_rate
    freqs = list(meta.frequencies)
    if tone_offsets is None:
        tone_offsets = [0.5 + k * (meta.tone_duration + 0.5) for k in range(len(freqs))]
    if max(tone_offsets) + meta.tone_duration > meta.repetition_period:
        raise ConfigError("tones do not fit inside one repetition period")
    n_rep = 1 + max(int(v.max()) for v in snaps.reps.values() if v.size)
    n = int(round(n_rep * meta.repetition_period * fs))
    out = np.zeros((n, meta.n_channels))
    n_tone = int(round(meta.tone_duration * fs))
    ramp = np.ones(n_tone)
    n_ramp = min(int(0.01 * fs), n_tone // 4)
    if n_ramp:
        ramp[:n_ramp] = np.linspace(0, 1, n_ramp)
        ramp[-n_ramp:] = ramp[n_ramp - 1::-1]
    for f, off in zip(freqs, tone_offsets):
        block = snaps.at(f)
        reps = next(v for k, v in snaps.reps.items() if math.isclose(k, f, rel_tol=1e-9))
        for r, c in zip(reps, block):
            i0 = int(round((r * meta.repetition_period + off) * fs))
            t = (i0 + np.arange(n_tone)) / fs
            out[i0:i0 + n_tone] += ramp[:, None] * np.real(np.exp(2j * np.pi * f * t)[:, None] * c[None, :])
    if noise > 0:
        out += noise * np.random.default_rng(seed).standard_normal(out.shape)
    return out


# --- empirical statistics --------------------------------------------------------------


@dataclass
class EmpiricalCorrelation(CorrelationCurve):
    se: Optional[np.ndarray] = None
    radius_se: float = float("nan")
    counts: Optional[np.ndarray] = None
    n_snapshots: int = 0
    low_sample: bool = False


def empirical_correlation(snaps, freq, bin_width=None):
    """Pair-averaged correlation Re<conj(p_n) p_m> binned by |z_n - z_m|,
    normalised by the zero-lag bin, with delta-method standard errors."""
    P = snaps.at(freq)
    n_s = P.shape[0]
    if n_s == 0:
        raise InsufficientData(f"no snapshots at {freq} Hz")
    n, m, b, counts, width = lag_pairs(snaps.depths, bin_width)
    prod = np.real(np.conj(P[:, n]) * P[:, m])                # (n_s, n_pairs)
    per = np.zeros((n_s, counts.size))
    for s in range(n_s):
        per[s] = np.bincount(b, weights=prod[s], minlength=counts.size)
    per /= counts
    X = per.mean(axis=0)
    if not X[0] > 0:
        raise InsufficientData("zero power in the zero-lag bin")
    C = X / X[0]
    C[0] = 1.0
    low = n_s < 2
    if low:
        se = np.full_like(C, np.nan)
        psi = None
    else:
        psi = (per - C[None, :] * per[:, :1]) / X[0]
        se = psi.std(axis=0, ddof=1) / math.sqrt(n_s)
    y = np.arange(counts.size) * width
    curve = EmpiricalCorrelation(y, C, raw=X, se=se, counts=counts, n_snapshots=n_s, low_sample=low)
    curve.radius, curve.reached = _radius(curve, float(y[-1]))
    if psi is not None and curve.reached and curve.radius > 0:
        i = int(np.nonzero((C[:-1] > 0.5) & (C[1:] <= 0.5))[0][0])
        ca, cb = C[i], C[i + 1]
        dr_a = width * (0.5 - cb) / (ca - cb) ** 2
        dr_b = width * (ca - 0.5) / (ca - cb) ** 2
        curve.radius_se = float((dr_a * psi[:, i] + dr_b * psi[:, i + 1]).std(ddof=1) / math.sqrt(n_s))
    return curve


def empirical_radius(curve):
    """First downward 1/2-crossing of a tabulated curve (linear interpolation)."""
    r, reached = _radius(CorrelationCurve(curve.y_grid, curve.values), float(curve.y_grid[-1]))
    return r


@dataclass(frozen=True)
class ScintillationEstimate:
    value: float
    se: float
    per_hydrophone: np.ndarray
    n_snapshots: int


def empirical_scintillation(snaps, freq):
    """Mean over hydrophones of (<I^2> - <I>^2)/<I>^2, I = |p|^2, averaged over
    snapshots; the standard error uses the delta method on the joint means."""
    P = snaps.at(freq)
    n_s = P.shape[0]
    if n_s < 2:
        raise InsufficientData(f"need at least two snapshots at {freq} Hz, have {n_s}")
    I = np.abs(P) ** 2
    M2 = I.mean(axis=0)
    M4 = (I**2).mean(axis=0)
    if np.any(M2 <= 0):
        raise InsufficientData("a hydrophone records zero mean intensity")
    per = M4 / M2**2 - 1.0
    n_h = I.shape[1]
    psi = ((I**2 - M4) / M2**2 - 2 * M4 * (I - M2) / M2**3).sum(axis=1) / n_h
    se = float(psi.std(ddof=1) / math.sqrt(n_s))
    return ScintillationEstimate(float(per.mean()), se, per, n_s)
