"""Vertical-array statistics: spatial correlation, its half-width, and the
per-frequency forward model used by the inversion."""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .coupling import build_coupling
from .errors import ConfigError, EmptyAperture, NoGuidedModes, NotReachedWarning
from .moments import propagate_Q, select_modes
from .modes import mode_shapes, solve_modes, source_amplitudes

log = logging.getLogger(__name__)

DEFAULT_LAGS = 512
RADIUS_TOL = 1e-4  # metres


@dataclass(frozen=True)
class ArrayGeometry:
    """Vertical hydrophone segment at range ``x_a`` covering [z_m, z_M].

    ``x_a`` may be left as None, in which case the source range is used.
    """

    z_m: float
    z_M: float
    hydrophone_depths: tuple = ()
    x_a: Optional[float] = None
    spacing: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.z_m < self.z_M):
            raise ConfigError(f"need 0 < z_m < z_M, got [{self.z_m}, {self.z_M}]")
        if self.x_a is not None and self.x_a <= 0:
            raise ConfigError("x_a must be positive")
        d = np.asarray(self.hydrophone_depths, dtype=float)
        if d.size:
            if np.any(np.diff(d) < 0):
                raise ConfigError("hydrophone depths must be sorted")
            tol = 1e-9 * self.z_M
            if d[0] < self.z_m - tol or d[-1] > self.z_M + tol:
                raise ConfigError("hydrophone depths must lie inside [z_m, z_M]")
        object.__setattr__(self, "hydrophone_depths", tuple(float(v) for v in d))

    @property
    def aperture(self):
        return self.z_M - self.z_m

    @property
    def depths(self):
        return np.asarray(self.hydrophone_depths)

    @classmethod
    def uniform(cls, centre, count, spacing, x_a=None):
        """``count`` hydrophones ``spacing`` apart, centred on ``centre``."""
        if count < 1 or spacing <= 0:
            raise ConfigError("need count >= 1 and spacing > 0")
        depths = centre + spacing * (np.arange(count) - (count - 1) / 2.0)
        return cls(float(depths[0]), float(depths[-1]), tuple(depths), x_a, float(spacing))

    @classmethod
    def alma(cls, x_a=9000.0):
        """32 hydrophones 0.15 m apart centred at 60 m depth."""
        return cls.uniform(60.0, 32, 0.15, x_a)


@dataclass
class CorrelationCurve:
    y_grid: np.ndarray
    values: np.ndarray
    radius: float = float("nan")
    reached: bool = True
    raw: Optional[np.ndarray] = None
    evaluator: Optional[Callable] = field(default=None, repr=False)


def _aperture_sum(k, weights, z_m, z_M, y):
    # sum_j weights_j * int_{z_m}^{z_M - y} sin(k_j z) sin(k_j (z + y)) dz
    y = np.asarray(y, dtype=float)
    L = z_M - z_m
    ky = np.multiply.outer(y, k)
    corr = (np.sin(k * (2 * z_M - y[..., None])) - np.sin(k * (2 * z_m + y[..., None]))) / (2 * k)
    return 0.5 * ((np.cos(ky) * (L - y)[..., None] - corr) @ weights)


def correlation_curve(modes, Qx, geom, y_grid=None):
    """Normalised vertical correlation of the field over the array aperture.

    Cross-mode terms are dropped; each mode contributes
    Q_j A_j^2 / beta_j times its aperture-averaged product sin(k z) sin(k(z+y)).
    """
    Qx = np.asarray(Qx, dtype=float)
    if Qx.shape != (modes.N,):
        raise ConfigError(f"Qx must have length N={modes.N}")
    L = geom.aperture
    if y_grid is None:
        y_grid = np.linspace(0.0, L, DEFAULT_LAGS, endpoint=False)
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(y_grid < 0) or np.any(L - y_grid <= 0):
        raise EmptyAperture(f"lags must lie in [0, {L})")
    if geom.z_M > modes.z_b:
        raise ConfigError("array aperture must lie in the water column")
    k = modes.k_wj
    weights = Qx * modes.A**2 / modes.beta

    def raw(y):
        y = np.asarray(y, dtype=float)
        return _aperture_sum(k, weights, geom.z_m, geom.z_M, y) / (L - y)

    c0 = float(raw(0.0))
    if not c0 > 0:
        raise ConfigError("zero field energy over the aperture")

    def evaluator(y):
        return raw(y) / c0

    raw_vals = raw(y_grid)
    vals = raw_vals / c0
    vals[y_grid == 0] = 1.0
    curve = CorrelationCurve(y_grid, vals, raw=raw_vals, evaluator=evaluator)
    curve.radius, curve.reached = _radius(curve, L)
    return curve


def _radius(curve, limit):
    y, v = curve.y_grid, curve.values
    below = np.nonzero((v[:-1] > 0.5) & (v[1:] <= 0.5))[0]
    if below.size == 0:
        if v.size and v[0] <= 0.5:
            return float(y[0]), True
        return float(limit), False
    i = below[0]
    a, b = float(y[i]), float(y[i + 1])
    f = curve.evaluator
    if f is None:
        # linear interpolation on a tabulated curve
        va, vb = v[i], v[i + 1]
        return a + (va - 0.5) * (b - a) / (va - vb), True
    if f(b) == 0.5:
        return b, True
    # bracketed root refinement; far tighter than RADIUS_TOL so that radii are
    # smooth functions of the environment
    return float(brentq(lambda t: f(t) - 0.5, a, b, xtol=RADIUS_TOL * 1e-8, rtol=4 * np.finfo(float).eps)), True


def correlation_radius(curve, limit=None):
    """First downward crossing of 1/2.  If the curve never drops to 1/2 the
    grid end (or ``limit``) is returned and a NotReachedWarning issued."""
    if limit is None:
        y = curve.y_grid
        limit = float(y[-1] + (y[1] - y[0])) if y.size > 1 else float(y[-1])
    r, reached = _radius(curve, limit)
    curve.radius, curve.reached = r, reached
    if not reached:
        warnings.warn("correlation stays above 1/2 over the aperture", NotReachedWarning, stacklevel=2)
    return r


def lag_pairs(depths, bin_width=None):
    """Hydrophone pairs (n <= m) with their lag-bin index and the bin counts.
    The bin width defaults to the median hydrophone spacing."""
    depths = np.asarray(depths, dtype=float)
    if depths.size < 2:
        raise EmptyAperture("need at least two hydrophones")
    if bin_width is None:
        bin_width = float(np.median(np.diff(depths)))
    n, m = np.triu_indices(depths.size)
    b = np.rint(np.abs(depths[m] - depths[n]) / bin_width).astype(int)
    return n, m, b, np.bincount(b), bin_width


def array_correlation(modes, Qx, depths, bin_width=None):
    """Expected value of the pair-averaged correlation estimator on a discrete
    array: sum_j Q_j phi_j(z_n) phi_j(z_m) / beta_j averaged over the pairs of
    each lag bin, normalised at zero lag.  Tabulated, so the radius is found
    by linear interpolation exactly as for measured curves."""
    n, m, b, counts, width = lag_pairs(depths, bin_width)
    phi = mode_shapes(modes, depths)
    w = np.asarray(Qx, dtype=float) / modes.beta
    pair = np.einsum("j,jp,jp->p", w, phi[:, n], phi[:, m])
    X = np.bincount(b, weights=pair) / counts
    vals = X / X[0]
    curve = CorrelationCurve(np.arange(counts.size) * width, vals, raw=X)
    curve.radius, curve.reached = _radius(curve, float(curve.y_grid[-1]))
    return curve


@dataclass
class FrequencyForward:
    freq: float
    N: int
    N_used: int
    Qx: np.ndarray
    curve: CorrelationCurve

    @property
    def radius(self):
        return self.curve.radius

    @property
    def reached(self):
        return self.curve.reached


@dataclass
class ForwardRadii:
    results: list
    dropped: list

    @property
    def freqs(self):
        return np.array([r.freq for r in self.results])

    @property
    def radii(self):
        return np.array([r.radius for r in self.results])


def _range(src, geom):
    if geom.x_a is None:
        return src.x_a
    if not math.isclose(geom.x_a, src.x_a):
        raise ConfigError(f"source range {src.x_a} and array range {geom.x_a} disagree")
    return geom.x_a


def forward_frequency(env, src, geom, freq, n_max=None, quadrature="adaptive", y_grid=None, keep=None):
    """Correlation curve at one frequency (Hz).  Raises NoGuidedModes.

    ``keep`` fixes the retained mode indices (those beyond the current mode
    count are ignored); otherwise the ``n_max`` modes with the largest initial
    power are kept.
    """
    x_a = _range(src, geom)
    modes = solve_modes(env, 2 * math.pi * freq).require_guided()
    Q0 = source_amplitudes(modes, src)
    n_full = modes.N
    if keep is not None:
        keep = np.asarray(keep, dtype=int)
        keep = keep[keep < n_full]
        if keep.size == 0:
            raise NoGuidedModes(f"none of the retained modes exists at {freq} Hz")
    else:
        keep = select_modes(Q0, n_max)
    if keep.size < modes.N:
        modes = modes.truncate(keep)
        Q0 = Q0[keep]
    if env.sigma == 0 and env.nu_s == 0:
        Qx = Q0.copy()
    else:
        cm = build_coupling(modes, env, quadrature=quadrature)
        if x_a * np.max(np.abs(np.diag(cm.Gamma))) < 1.0:
            log.warning("f=%g Hz: x_a is within one scattering mean free path; "
                        "dropping cross-mode terms is questionable", freq)
        Qx = propagate_Q(cm, Q0, x_a)
    curve = correlation_curve(modes, Qx, geom, y_grid)
    return FrequencyForward(float(freq), n_full, modes.N, Qx, curve)


def forward_radii(env, src, geom, freqs, n_max=None, quadrature="adaptive", y_grid=None):
    """Theoretical correlation radii at each frequency.  Frequencies without
    guided modes are dropped with a warning and listed in ``dropped``."""
    results, dropped = [], []
    for f in freqs:
        try:
            results.append(forward_frequency(env, src, geom, f, n_max, quadrature, y_grid))
        except NoGuidedModes:
            warnings.warn(f"no guided mode at {f} Hz; frequency dropped", RuntimeWarning, stacklevel=2)
            dropped.append(float(f))
    return ForwardRadii(results, dropped)
