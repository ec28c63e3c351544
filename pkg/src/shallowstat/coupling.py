"""Effective coupling and dissipation coefficients of the mode-power diffusion.

The water-column fluctuations are taken with correlation

    E[nu(x,z) nu(x',z')] = sigma^2 exp(-|x-x'|/ell_h) exp(-|z-z'|/ell_v) / 2

so the range integrals are elementary and the depth integrals reduce to the
overlap S(k, k') evaluated in :mod:`shallowstat.kernels`.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import QuadratureFailure
from .modes import continuous_norm_sq, sediment_tail_integral
from .quadrature import _leggauss, composite_gauss_legendre

log = logging.getLogger(__name__)

RADIATIVE_RTOL = 1e-6
_MAX_DOUBLINGS = 8


@dataclass(frozen=True)
class OverlapKernel:
    ell_v: float
    z_b: float

    def __call__(self, k, kp):
        return kernels.overlap(k, kp, self.ell_v, self.z_b)


def overlap_S(kernel, k, kp):
    """(1/2) int_0^zb int_0^zb exp(-|z-z'|/ell_v) cos(kz) cos(k'z') dz dz'."""
    out = kernel(k, kp)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CouplingModel:
    """Coefficients of the limiting mode-power dynamics for one ModeSet."""

    Gamma: np.ndarray
    Lambda_rad: np.ndarray
    Lambda_sed: np.ndarray
    Gamma_s: np.ndarray = None
    Gamma_1: np.ndarray = None
    Lambda_s: np.ndarray = None
    kappa: np.ndarray = None

    @property
    def N(self):
        return self.Gamma.shape[0]

    @property
    def Lambda(self):
        return self.Lambda_rad + self.Lambda_sed

    @property
    def A_matrix(self):
        return self.Gamma - np.diag(self.Lambda)

    @classmethod
    def from_arrays(cls, Gamma, Lambda):
        """Model with given Gamma (off-diagonal part used) and total Lambda,
        booked as sediment loss.  Handy for synthetic studies."""
        G = np.array(Gamma, dtype=float)
        np.fill_diagonal(G, 0.0)
        np.fill_diagonal(G, -G.sum(axis=1))
        lam = np.asarray(Lambda, dtype=float) * np.ones(G.shape[0])
        return cls(G, np.zeros_like(lam), lam)


def _prefactor(modes, env):
    # omega^4 sigma^2 / (2 rho_w^2 c_w^4)
    return (modes.k_w**4) * env.sigma**2 / (2.0 * env.rho_w**2)


def _lorentz(delta, ell_h):
    # int_0^inf exp(-x/ell_h) cos(delta x) dx
    return ell_h / (1.0 + (delta * ell_h) ** 2)


def _sine_lorentz(delta, ell_h):
    # int_0^inf exp(-x/ell_h) sin(delta x) dx
    return ell_h**2 * delta / (1.0 + (delta * ell_h) ** 2)


def _pair_overlaps(modes, env):
    """(A_j^2 A_l^2 / 4) * int int R phi_j phi_l(z) phi_j phi_l(z') for all j, l."""
    kw = modes.k_wj
    sp = kernels.sine_pair(kw[:, None], kw[None, :], env.ell_v, env.z_b)
    A2 = modes.A**2
    return np.outer(A2, A2) * sp / 4.0


def _with_row_sum_diagonal(M):
    M = M.copy()
    np.fill_diagonal(M, 0.0)
    np.fill_diagonal(M, -M.sum(axis=1))
    return M


def gamma_coupling(modes, env):
    """Power-exchange matrix Gamma; off-diagonal entries >= 0, rows sum to 0."""
    N = modes.N
    if N == 0 or env.sigma == 0:
        return np.zeros((N, N))
    beta = modes.beta
    ov = _pair_overlaps(modes, env)
    G = _prefactor(modes, env) / np.outer(beta, beta) * _lorentz(beta[:, None] - beta[None, :], env.ell_h) * ov
    G = 0.5 * (G + G.T)
    return _with_row_sum_diagonal(G)


# --- integrals over the continuous spectrum ---------------------------------


def _theta_breakpoints(modes):
    """theta values where eta = m pi, plus the interval ends, ascending."""
    ks, kw, zb = modes.k_s, modes.k_w, modes.z_b
    m = np.arange(math.ceil(modes.V / math.pi), math.floor(zb * kw / math.pi) + 1)
    s = np.sqrt(np.clip(kw * kw - (m * math.pi / zb) ** 2, 0.0, None)) / ks
    th = np.arcsin(np.clip(s, 0.0, 1.0))
    return np.unique(np.concatenate(([0.0, 0.5 * math.pi], th)))


_CORE = 1.0     # half-width, in peak widths, of the tangent-mapped core
_GRADING = 2.5  # growth ratio of the panels flanking the core


def _graded_pieces(a, b, c, w, cap):
    """Split [a, b] around a peak at c of half-width w into a tangent-mapped
    core [c - K w, c + K w] and geometrically growing flanks no wider than
    ``cap``.  Pieces are (lo, hi, centre, width); centre None means plain."""
    lo, hi = max(a, c - _CORE * w), min(b, c + _CORE * w)
    pieces = [(lo, hi, c, w)]
    for edge, end, sign in ((hi, b, 1.0), (lo, a, -1.0)):
        step = _CORE * w
        while sign * (end - edge) > 1e-15:
            step = min(step * _GRADING, cap)
            nxt = edge + sign * step
            if sign * (end - nxt) < 0.5 * step:
                nxt = end
            pieces.append((min(edge, nxt), max(edge, nxt), None, None))
            edge = nxt
    return pieces


def _radiating_pieces(modes, env):
    ks, kw, zb = modes.k_s, modes.k_w, modes.z_b
    r = env.rho_s / env.rho_w
    edges = _theta_breakpoints(modes)
    # the range Lorentzian peaks at theta = pi/2 with width ~ sqrt(2/(k_s ell_h))
    cap = min(math.pi / 64, 0.5 * math.sqrt(2.0 / (ks * env.ell_h)))
    pieces = []
    for a, b in zip(edges[:-1], edges[1:]):
        eta_a = zb * math.sqrt(max(kw * kw - (ks * math.sin(a)) ** 2, 0.0))
        eta_c = (math.ceil(eta_a / math.pi - 1e-9) - 0.5) * math.pi
        th_c = math.asin(min(math.sqrt(max(kw * kw - (eta_c / zb) ** 2, 0.0)) / ks, 1.0))
        w = 1.0 / (r * zb * ks * max(math.sin(th_c), 1e-12))
        if a < th_c < b and _CORE * w < b - a:
            pieces.extend(_graded_pieces(a, b, th_c, w, cap))
        else:
            n = max(1, math.ceil((b - a) / cap))
            pieces.extend((a + (b - a) * i / n, a + (b - a) * (i + 1) / n, None, None)
                          for i in range(n))
    return pieces


def _radiating_nodes(modes, env, level, order=8):
    """Nodes in theta with gamma = k_s^2 sin^2(theta), theta in (0, pi/2).

    The map removes the 1/sqrt(gamma) singularity and the sqrt(k_s^2 - gamma)
    endpoint behaviour of A_gamma^2.  Panels run between consecutive zeros of
    sin(eta); inside each, A_gamma^2 has a Lorentzian-shaped peak of
    half-width about 1/(r z_b k_s sin theta) at cos(eta) = 0, resolved by a
    tangent map plus graded flanks.  ``level`` halves every piece that many
    times.  Returns u = sqrt(gamma), eta, xi and the weights of
    d(gamma)/sqrt(gamma).
    """
    ks, kw, zb = modes.k_s, modes.k_w, modes.z_b
    x, wq = _leggauss(order)
    m = 2**level
    lo, hi, cen, wid = (np.array(v, dtype=float) for v in zip(*(
        (p[0], p[1], np.nan if p[2] is None else p[2], np.nan if p[3] is None else p[3])
        for p in _radiating_pieces(modes, env))))
    tan = ~np.isnan(cen)
    # work in phi = arctan((theta - c)/w) on mapped pieces, theta elsewhere
    v_lo = np.where(tan, np.arctan((lo - cen) / wid), lo)
    v_hi = np.where(tan, np.arctan((hi - cen) / wid), hi)
    h = (v_hi - v_lo) / m
    starts = v_lo[:, None] + h[:, None] * np.arange(m)[None, :]
    v = (starts[:, :, None] + 0.5 * h[:, None, None] * (1.0 + x[None, None, :])).reshape(lo.size, -1)
    wv = np.broadcast_to(0.5 * h[:, None, None] * wq[None, None, :], (lo.size, m, order)).reshape(lo.size, -1)
    c, ww = np.nan_to_num(cen)[:, None], np.nan_to_num(wid)[:, None]
    th = np.where(tan[:, None], c + ww * np.tan(v), v)
    w = np.where(tan[:, None], wv * ww / np.cos(v) ** 2, wv)
    th, w = th.ravel(), w.ravel()
    u = ks * np.sin(th)
    xi = zb * ks * np.cos(th)
    eta = zb * np.sqrt(kw * kw - u * u)
    return u, eta, xi, w * 2.0 * ks * np.cos(th)


def _evanescent_nodes(modes, n_panels, q_max):
    """Nodes in q = sqrt(|gamma|) on [0, q_max]; weights of d(gamma)/sqrt|gamma| = 2 dq."""
    q, w = composite_gauss_legendre(0.0, q_max, n_panels, 8)
    kw, ks, zb = modes.k_w, modes.k_s, modes.z_b
    eta = zb * np.sqrt(kw * kw + q * q)
    xi = zb * np.sqrt(ks * ks + q * q)
    return q, eta, xi, 2.0 * w


def _spectral_pass(modes, env, nodes, kind):
    """One quadrature pass of
        pref/beta_j * int F(beta_j, u) (A_j^2 A_g^2 / 4) [four-term S] d(gamma)/sqrt(gamma)
    over the rule ``nodes`` = (u, eta, xi, w); F is the range factor ``kind``."""
    u, eta, xi, w = nodes
    wts = w * continuous_norm_sq(eta, xi, env) / 4.0
    rows = kernels.spectral_rows(kind, modes.k_wj, modes.beta, eta / modes.z_b, u, wts,
                                 env.ell_v, env.z_b, env.ell_h)
    return _prefactor(modes, env) / modes.beta * modes.A**2 * rows


def _spectral_integral(modes, env, nodes_fn, kind, what):
    """Refine ``nodes_fn(level)`` (2**level times as many panels) until
    successive passes agree to RADIATIVE_RTOL."""
    prev = _spectral_pass(modes, env, nodes_fn(0), kind)
    change = np.inf
    for level in range(1, _MAX_DOUBLINGS + 1):
        out = _spectral_pass(modes, env, nodes_fn(level), kind)
        scale = np.maximum(np.abs(out), 1e-300)
        change = np.max(np.abs(out - prev) / scale)
        if change < RADIATIVE_RTOL:
            return out
        prev = out
    raise QuadratureFailure(f"{what} integral did not reach rtol {RADIATIVE_RTOL} "
                            f"(last relative change {change:.2e})")


def radiative_loss(modes, env, quadrature="adaptive"):
    """Leakage rate of each guided mode into the radiating continuum.

    ``quadrature="adaptive"`` refines until RADIATIVE_RTOL; ``"fast"`` does a
    single pass with a 4-point rule per piece (relative error ~1e-5), meant
    for inner loops of the inversion."""
    if modes.N == 0 or env.sigma == 0:
        return np.zeros(modes.N)
    if quadrature == "fast":
        return _spectral_pass(modes, env, _radiating_nodes(modes, env, 0, order=4), "lorentz")
    if quadrature != "adaptive":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return _spectral_integral(modes, env, lambda lv: _radiating_nodes(modes, env, lv),
                              "lorentz", "radiative")


def sediment_loss(modes, env):
    """nu_s omega^2 / (beta_j c_s^2 rho_s) * int_{z_b}^inf phi_j^2."""
    return env.nu_s * modes.k_s**2 / (modes.beta * env.rho_s) * sediment_tail_integral(modes)


def lambda_dissipation(modes, env, quadrature="adaptive"):
    """(Lambda_rad, Lambda_sed): radiative leakage and sediment absorption."""
    return radiative_loss(modes, env, quadrature), sediment_loss(modes, env)


def appendix_coefficients(modes, env):
    """(Gamma_s, Gamma_1, Lambda_s, kappa): the phase-related coefficients of
    the full amplitude generator.  They do not enter the power dynamics."""
    N = modes.N
    if N == 0 or env.sigma == 0:
        z = np.zeros((N, N))
        return z, z.copy(), np.zeros(N), np.zeros(N)
    beta, kw, A2 = modes.beta, modes.k_wj, modes.A**2
    pref = _prefactor(modes, env)
    ell_h, ell_v, zb = env.ell_h, env.ell_v, env.z_b
    bb = np.outer(beta, beta)

    ov = _pair_overlaps(modes, env)
    # Delta = beta_l - beta_j
    Gs = pref / bb * _sine_lorentz(beta[None, :] - beta[:, None], ell_h) * ov
    Gs = 0.5 * (Gs - Gs.T)
    Gs = _with_row_sum_diagonal(Gs)

    two_a = 2.0 * kw
    S = kernels.overlap
    sq = (S(0.0, 0.0, ell_v, zb) - S(two_a[:, None], 0.0 * two_a[None, :], ell_v, zb)
          - S(0.0 * two_a[:, None], two_a[None, :], ell_v, zb) + S(two_a[:, None], two_a[None, :], ell_v, zb))
    G1 = pref / bb * ell_h * np.outer(A2, A2) / 4.0 * sq
    G1 = 0.5 * (G1 + G1.T)

    Ls = _spectral_integral(modes, env, lambda lv: _radiating_nodes(modes, env, lv),
                            "sine_lorentz", "dispersion")
    kappa = evanescent_phase(modes, env)
    return Gs, G1, Ls, kappa


def evanescent_phase(modes, env):
    """kappa_j, truncated at gamma = -(20/ell_h + 20 beta_1)^2."""
    # range factor (p + q)/((p + q)^2 + beta_j^2), p = 1/ell_h, q = sqrt|gamma|
    q_max = 20.0 / env.ell_h + 20.0 * modes.beta[0]
    periods = modes.z_b * q_max / math.pi
    n0 = max(50, int(math.ceil(2 * periods)))
    kappa = _spectral_integral(modes, env, lambda lv: _evanescent_nodes(modes, n0 * 2**lv, q_max),
                               "evanescent", "evanescent")
    log.debug("kappa truncated at sqrt|gamma| = %.3g", q_max)
    return kappa


def build_coupling(modes, env, appendix=False, quadrature="adaptive"):
    """Assemble the CouplingModel for ``modes`` in environment ``env``."""
    modes.require_guided()
    G = gamma_coupling(modes, env)
    lam_rad, lam_sed = lambda_dissipation(modes, env, quadrature)
    extra = {}
    if appendix:
        Gs, G1, Ls, kappa = appendix_coefficients(modes, env)
        extra = dict(Gamma_s=Gs, Gamma_1=G1, Lambda_s=Ls, kappa=kappa)
    return CouplingModel(G, lam_rad, lam_sed, **extra)


def alpha_to_nu(alpha):
    """Sediment attenuation in dB per wavelength -> dimensionless nu_s.

    A weakly lossy wavenumber k_s sqrt(1 + i nu) ~ k_s (1 + i nu/2) loses
    pi nu nepers per wavelength, i.e. 20 pi nu / ln 10 dB.
    """
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("attenuation must be non-negative")
    return np.asarray(alpha) * math.log(10.0) / (20.0 * math.pi) if np.ndim(alpha) else \
        float(alpha) * math.log(10.0) / (20.0 * math.pi)


def nu_to_alpha(nu):
    return nu * 20.0 * math.pi / math.log(10.0)
