"""Guided and continuous modes of the two-layer (Pekeris) waveguide.

Water occupies 0 <= z <= z_b with sound speed c_w and density rho_w; a
faster fluid sediment (c_s > c_w, rho_s) fills z > z_b.  The pressure-release
surface gives phi(0) = 0; at the interface phi and phi'/rho are continuous.

Guided mode j has the water-column shape A_j sin(sigma_j z / z_b) and an
exponential tail exp(-zeta_j (z - z_b)/z_b) in the sediment, where
sigma_j^2 + zeta_j^2 = V^2 with V = z_b sqrt(k_w^2 - k_s^2) the waveguide
parameter.  The interface condition reduces to

    tan(sigma) = -(rho_s / rho_w) sigma / zeta,

which we solve in the phase form  sigma + atan(r sigma / zeta) = m pi,
r = rho_s / rho_w.  The left side increases monotonically from 0 to
V + pi/2, so branch m holds exactly one root iff V > (m - 1/2) pi, and that
root lies in ((m - 1/2) pi, m pi).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NoGuidedModes, NonConvergence

log = logging.getLogger(__name__)

# modes whose sediment decay parameter falls below this are dropped
ZETA_CUTOFF = 1e-8
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class EnvironmentParams:
    """Deterministic waveguide plus the statistics of the water fluctuations.

    ``sigma`` is the relative index-fluctuation scale (the variance of the
    fluctuations is sigma**2 / 2), ``ell_v``/``ell_h`` the vertical and
    horizontal correlation lengths and ``nu_s`` the dimensionless sediment
    dissipation.
    """

    c_w: float = 1523.0
    c_s: float = 1630.0
    rho_w: float = 1000.0
    rho_s: float = 1700.0
    z_b: float = 110.0
    nu_s: float = 0.0
    sigma: float = 0.0
    ell_v: float = 30.0
    ell_h: float = 100.0

    def __post_init__(self):
        if not (self.c_s > self.c_w > 0):
            raise ConfigError(f"need c_s > c_w > 0, got c_w={self.c_w}, c_s={self.c_s}")
        if self.rho_w <= 0 or self.rho_s <= 0:
            raise ConfigError("densities must be positive")
        if self.z_b <= 0:
            raise ConfigError("z_b must be positive")
        if self.nu_s < 0 or self.sigma < 0:
            raise ConfigError("nu_s and sigma must be non-negative")
        if self.ell_v <= 0 or self.ell_h <= 0:
            raise ConfigError("correlation lengths must be positive")

    def replace(self, **changes):
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        vals.update(changes)
        return EnvironmentParams(**vals)


@dataclass(frozen=True)
class SourceSpec:
    z0: float = 50.0
    x_a: float = 9000.0

    def __post_init__(self):
        if self.x_a <= 0:
            raise ConfigError("x_a must be positive")
        if self.z0 <= 0:
            raise ConfigError("z0 must be positive")


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModeSet:
    """Discrete spectrum at one angular frequency.  Arrays are read-only and
    indexed from 0 (mode number j + 1)."""

    env: EnvironmentParams
    omega: float
    sigma: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray
    A: np.ndarray
    dropped: int = 0
    residuals: np.ndarray = field(default=None, repr=False)

    @property
    def N(self):
        return int(self.sigma.shape[0])

    @property
    def k_w(self):
        return self.omega / self.env.c_w

    @property
    def k_s(self):
        return self.omega / self.env.c_s

    @property
    def z_b(self):
        return self.env.z_b

    @property
    def k_wj(self):
        return self.sigma / self.env.z_b

    @property
    def V(self):
        return waveguide_parameter(self.env, self.omega)

    def require_guided(self):
        if self.N == 0:
            raise NoGuidedModes(f"no guided mode at omega={self.omega:g} rad/s")
        return self

    def truncate(self, keep):
        """ModeSet restricted to the (sorted) mode indices ``keep``."""
        keep = np.sort(np.asarray(keep, dtype=int))
        res = None if self.residuals is None else self.residuals[keep]
        return ModeSet(self.env, self.omega, _frozen(self.sigma[keep]), _frozen(self.beta[keep]),
                       _frozen(self.zeta[keep]), _frozen(self.A[keep]), self.dropped,
                       None if res is None else _frozen(res))


@dataclass(frozen=True)
class ContinuousModeEval:
    gamma: float
    eta: float
    xi: float
    A_gamma: float


def waveguide_parameter(env, omega):
    """V = z_b sqrt(k_w^2 - k_s^2)."""
    return env.z_b * omega * math.sqrt(1.0 / env.c_w**2 - 1.0 / env.c_s**2)


def dispersion_residual(sigma, env, omega):
    """sin(sigma + atan(r sigma / zeta)): zero exactly on the guided roots.

    Equal to (zeta sin sigma + r sigma cos sigma)/sqrt(zeta^2 + r^2 sigma^2),
    a scaled form of the interface condition that stays O(1) in magnitude.
    """
    V = waveguide_parameter(env, omega)
    sigma = np.asarray(sigma, dtype=float)
    zeta = np.sqrt(np.maximum(V * V - sigma * sigma, 0.0))
    r = env.rho_s / env.rho_w
    return np.sin(sigma + np.arctan2(r * sigma, zeta))


def mode_count(env, omega):
    """Number of guided modes, floor(V/pi + 1/2) before the cutoff filter."""
    V = waveguide_parameter(env, omega)
    return int(math.floor(V / math.pi + 0.5)) if V > 0.5 * math.pi else 0


def solve_modes(env, omega):
    """Guided modes of ``env`` at angular frequency ``omega``.

    Each branch m = 1..N of tan is bracketed by [(m - 1/2) pi, min(m pi, V)]
    and bisected on the monotone phase function, then polished by Newton
    steps.  Returns a ModeSet, possibly with N = 0.
    """
    if omega <= 0:
        raise ConfigError("omega must be positive")
    V = waveguide_parameter(env, omega)
    r = env.rho_s / env.rho_w
    n = mode_count(env, omega)
    m = np.arange(1, n + 1, dtype=float)
    lo = (m - 0.5) * math.pi
    hi = np.minimum(m * math.pi, V)

    def phase(s):
        z = np.sqrt(np.maximum(V * V - s * s, 0.0))
        return s + np.arctan2(r * s, z) - m * math.pi

    # the phase function is increasing: negative at lo, non-negative at hi
    a, b = lo.copy(), hi.copy()
    for _ in range(200):
        mid = 0.5 * (a + b)
        neg = phase(mid) < 0
        a = np.where(neg, mid, a)
        b = np.where(neg, b, mid)
        if np.all(b - a <= 4 * np.finfo(float).eps * np.maximum(b, 1.0)):
            break
    s = 0.5 * (a + b)
    for _ in range(3):
        z = np.sqrt(np.maximum(V * V - s * s, 0.0))
        ok = z > 0
        dphase = np.where(ok, 1.0 + r * V * V / np.where(ok, z, 1.0) / (z * z + (r * s) ** 2), np.inf)
        step = phase(s) / dphase
        cand = s - step
        s = np.where((cand > lo) & (cand < hi), cand, s)

    residual = np.abs(dispersion_residual(s, env, omega))
    bad = np.nonzero(residual >= RESIDUAL_TOL)[0]
    if bad.size:
        i = int(bad[0])
        raise NonConvergence(f"dispersion root {i + 1} did not polish (residual {residual[i]:.3e})",
                             bracket=(float(lo[i]), float(hi[i])))

    zeta = np.sqrt(np.maximum(V * V - s * s, 0.0))
    keep = zeta > ZETA_CUTOFF
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.warning("dropping %d near-cutoff mode(s) with zeta <= %g", dropped, ZETA_CUTOFF)
    s, zeta, residual = s[keep], zeta[keep], residual[keep]

    k_w = omega / env.c_w
    beta = np.sqrt(k_w * k_w - (s / env.z_b) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc2 = np.where(s > 0, np.sin(2 * s) / (2 * s), 1.0)
    denom = (1.0 - sinc2) / env.rho_w + np.sin(s) ** 2 / (env.rho_s * zeta)
    A = np.sqrt((2.0 / env.z_b) / denom)
    return ModeSet(env, float(omega), _frozen(s), _frozen(beta), _frozen(zeta), _frozen(A),
                   dropped, _frozen(residual))


def mode_shapes(modes, z):
    """Array phi[j, i] = phi_j(z_i) for every guided mode."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(z < 0):
        raise DomainError("depth must be non-negative")
    zb = modes.z_b
    s = modes.sigma[:, None]
    A = modes.A[:, None]
    water = A * np.sin(s * np.minimum(z, zb)[None, :] / zb)
    tail = A * np.sin(s) * np.exp(-modes.zeta[:, None] * np.maximum(z - zb, 0.0)[None, :] / zb)
    return np.where(z[None, :] <= zb, water, tail)


def eval_phi_j(modes, j, z):
    """Guided mode ``j`` (0-based) at depth(s) ``z``."""
    if not 0 <= j < modes.N:
        raise IndexError(f"mode index {j} out of range for N={modes.N}")
    out = mode_shapes(modes.truncate([j]), z)[0]
    return out if np.ndim(z) else float(out[0])


def continuous_mode(modes, gamma):
    """Transverse parameters and normalisation of the improper eigenvector
    at spectral parameter ``gamma`` < k_s^2."""
    k_w, k_s, zb = modes.k_w, modes.k_s, modes.z_b
    if gamma >= k_s * k_s:
        raise DomainError(f"gamma={gamma} must be below k_s^2={k_s * k_s}")
    env = modes.env
    eta = zb * math.sqrt(k_w * k_w - gamma)
    xi = zb * math.sqrt(k_s * k_s - gamma)
    A2 = continuous_norm_sq(eta, xi, env)
    return ContinuousModeEval(float(gamma), eta, xi, math.sqrt(A2))


def continuous_norm_sq(eta, xi, env):
    """A_gamma^2 as a function of the transverse parameters (vectorised)."""
    r = env.rho_s / env.rho_w
    return xi * env.rho_s * env.z_b / (math.pi * (xi**2 * np.sin(eta) ** 2 + r * r * eta**2 * np.cos(eta) ** 2))


def eval_phi_gamma(modes, gamma, z):
    """Improper eigenvector phi_gamma at depth(s) ``z``."""
    c = continuous_mode(modes, gamma)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("depth must be non-negative")
    zb = modes.z_b
    r = modes.env.rho_s / modes.env.rho_w
    u = np.maximum(z - zb, 0.0) / zb
    water = c.A_gamma * np.sin(c.eta * np.minimum(z, zb) / zb)
    sed = c.A_gamma * (np.sin(c.eta) * np.cos(c.xi * u) + r * c.eta / c.xi * np.cos(c.eta) * np.sin(c.xi * u))
    out = np.where(z <= zb, water, sed)
    return out if out.ndim else float(out)


def source_amplitudes(modes, src):
    """Initial mean powers Q_j(0) = |a_j0|^2 = (beta_j / 4) phi_j(z0)^2."""
    if not 0 < src.z0 < modes.z_b:
        raise ConfigError(f"source depth {src.z0} must lie inside (0, {modes.z_b})")
    phi = mode_shapes(modes, [src.z0])[:, 0]
    return 0.25 * modes.beta * phi**2


def sediment_tail_integral(modes):
    """int_{z_b}^inf phi_j(z)^2 dz = A_j^2 sin^2(sigma_j) z_b / (2 zeta_j)."""
    return modes.A**2 * np.sin(modes.sigma) ** 2 * modes.z_b / (2.0 * modes.zeta)
