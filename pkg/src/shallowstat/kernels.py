"""Hot numerical kernels.

Every kernel exists twice: a numba-compiled loop and a vectorised numpy
expression.  ``_backend.HAVE_NUMBA`` picks which one the public names bind
to; the ``*_numpy`` and ``*_numba`` variants stay importable so tests and the
benchmark can compare them directly.
"""

import math

import numpy as np

from ._backend import HAVE_NUMBA, njit

# |sL| below which (exp(sL)-1)/s is replaced by its two-term series.
_SERIES_CUT = 1e-8


# ---------------------------------------------------------------------------
# Vertical overlap of the exponential correlation kernel
#
#   S(k, k') = 1/2 int_0^L int_0^L exp(-|z-z'|/l) cos(k z) cos(k' z') dz dz'
#
# Splitting the square along z = z' makes the kernel separable on each
# triangle.  With p = 1/l and E(s) = (exp(sL) - 1)/s,
#
#   I(a, b) = int int exp(-p|z-z'|) exp(i a z) exp(i b z')
#           = 2p/(p^2+b^2) E(i(a+b)) - E(ia-p)/(p+ib)
#             - exp((ib-p)L) E(ia+p)/(p-ib)
#
# and S(k, k') = Re[I(k, k') + I(k, -k')] / 4.
# ---------------------------------------------------------------------------


@njit
def _expint_scalar(sr, si, L):
    # (exp(sL) - 1)/s for s = sr + i si, written to avoid cancellation
    xr = sr * L
    xi = si * L
    if abs(xr) + abs(xi) < _SERIES_CUT:
        return L * complex(1.0 + 0.5 * xr, 0.5 * xi)
    phase = complex(math.cos(xi), math.sin(xi))
    half = complex(math.cos(0.5 * xi), math.sin(0.5 * xi))
    num = math.expm1(xr) * phase + 2j * math.sin(0.5 * xi) * half
    return num / complex(sr, si)


@njit
def _pair_integral_scalar(a, b, p, L):
    t1 = (2.0 * p / (p * p + b * b)) * _expint_scalar(0.0, a + b, L)
    t2 = _expint_scalar(-p, a, L) / complex(p, b)
    decay = math.exp(-p * L) * complex(math.cos(b * L), math.sin(b * L))
    t3 = decay * _expint_scalar(p, a, L) / complex(p, -b)
    return t1 - t2 - t3


@njit
def overlap_scalar(k, kp, ell, L):
    p = 1.0 / ell
    tot = _pair_integral_scalar(k, kp, p, L) + _pair_integral_scalar(k, -kp, p, L)
    return 0.25 * tot.real


@njit
def _overlap_numba(k, kp, ell, L):
    out = np.empty(k.shape[0])
    for i in range(k.shape[0]):
        out[i] = overlap_scalar(k[i], kp[i], ell, L)
    return out


def _expint_numpy(sr, si, L):
    xr = sr * L
    xi = si * L
    phase = np.exp(1j * xi)
    num = np.expm1(xr) * phase + 2j * np.sin(0.5 * xi) * np.exp(0.5j * xi)
    s = sr + 1j * si
    small = (np.abs(xr) + np.abs(xi)) < _SERIES_CUT
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / s
    return np.where(small, L * (1.0 + 0.5 * (xr + 1j * xi)), out)


def _pair_integral_numpy(a, b, p, L):
    zero = np.zeros_like(a)
    t1 = (2.0 * p / (p * p + b * b)) * _expint_numpy(zero, a + b, L)
    t2 = _expint_numpy(zero - p, a, L) / (p + 1j * b)
    t3 = np.exp(-p * L + 1j * b * L) * _expint_numpy(zero + p, a, L) / (p - 1j * b)
    return t1 - t2 - t3


def overlap_numpy(k, kp, ell, L):
    k, kp = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(kp, dtype=float))
    p = 1.0 / ell
    tot = _pair_integral_numpy(k, kp, p, L) + _pair_integral_numpy(k, -kp, p, L)
    return 0.25 * tot.real


def overlap_numba(k, kp, ell, L):
    k, kp = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(kp, dtype=float))
    shape = k.shape
    out = _overlap_numba(np.ascontiguousarray(k).ravel(), np.ascontiguousarray(kp).ravel(),
                         float(ell), float(L))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Four-term overlap combination for products of two water-column sines:
#   int int R(z,z') sin(a z) sin(b z) sin(a z') sin(b z') dz dz'
#     = [S(d,d) + S(s,s) - S(d,s) - S(s,d)] / 4,   d = a-b, s = a+b
# (the 1/4 is left to the caller, which also carries A_j^2 A_l^2).
# ---------------------------------------------------------------------------


@njit
def _sine_pair_numba(a, b, ell, L):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        s = a[i] + b[i]
        out[i] = (overlap_scalar(d, d, ell, L) + overlap_scalar(s, s, ell, L)
                  - 2.0 * overlap_scalar(d, s, ell, L))
    return out


def sine_pair_numpy(a, b, ell, L):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    d = a - b
    s = a + b
    # S(d, s) = S(s, d) by symmetry of the kernel
    return overlap_numpy(d, d, ell, L) + overlap_numpy(s, s, ell, L) - 2.0 * overlap_numpy(d, s, ell, L)


def sine_pair_numba(a, b, ell, L):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    out = _sine_pair_numba(np.ascontiguousarray(a).ravel(), np.ascontiguousarray(b).ravel(),
                           float(ell), float(L))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# The same four-term combination from precomputed phases.
#
# With f(z) = sin(az) sin(bz) = sum_m c_m exp(i mu_m z), mu = (d, -d, s, -s),
# c = (1, 1, -1, -1)/4, the combination equals
#
#   4 Re sum_{m,n} c_m c_n [E(i(mu_m + mu_n)) - E(i mu_m - p)] / (p + i mu_n)
#
# Terms for -mu are conjugates of those for mu, which leaves two columns.
#
# Every exponential is a product of exp(iaL), exp(ibL), exp(-pL) and
# exp(idL); only the last is evaluated per pair (products of the others would
# lose the phase of small d L), which is what makes the continuous-spectrum
# integrals affordable.
# ---------------------------------------------------------------------------

# |xL| below which (exp(ixL)-1)/(ix) uses its Taylor series
_PHASE_SERIES_CUT = 1e-3


@njit(fastmath=True)
def _expint_phase(x, ex, L):
    # (exp(ixL) - 1)/(ix) given ex = exp(ixL)
    y = x * L
    if abs(y) < _PHASE_SERIES_CUT:
        iy = 1j * y
        return L * (1.0 + iy / 2.0 + iy * iy / 6.0 + iy * iy * iy / 24.0 + iy * iy * iy * iy / 120.0)
    return (ex - 1.0) / (1j * x)


@njit(fastmath=True)
def _sine_pair_phase(a, b, ea, eb, ea2, eb2, p, epl, L):
    # ea = exp(iaL), ea2 = E(2ia), likewise for b
    d = a - b
    s = a + b
    ed = complex(math.cos(d * L), math.sin(d * L))
    es = ea * eb
    # r_mu = 1/(p + i mu); the terms for -mu are complex conjugates, so
    # only mu = d and mu = s are summed and the real part doubled
    qd = 1.0 / (p * p + d * d)
    qs = 1.0 / (p * p + s * s)
    rd = complex(p * qd, -d * qd)
    rs = complex(p * qs, -s * qs)
    col_d = _expint_phase(2.0 * d, ed * ed, L) + L - ea2 - eb2.conjugate()
    col_s = ea2 + eb2 - _expint_phase(2.0 * s, es * es, L) - L
    g = 2.0 * p * (qd - qs)
    tot = (col_d * rd - col_s * rs
           + g * ((ed * epl - 1.0) * rd.conjugate() - (es * epl - 1.0) * rs.conjugate()))
    return 0.5 * tot.real


@njit(fastmath=True)
def _spectral_rows_numba(kind, a, beta, b, u, wts, ell_v, L, ell_h):
    p = 1.0 / ell_v
    epl = math.exp(-p * L)
    ph = 1.0 / ell_h
    ea = np.exp(1j * a * L)
    eb = np.exp(1j * b * L)
    ea2 = np.empty(a.shape[0], dtype=np.complex128)
    eb2 = np.empty(b.shape[0], dtype=np.complex128)
    for j in range(a.shape[0]):
        ea2[j] = _expint_phase(2.0 * a[j], ea[j] * ea[j], L)
    for g in range(b.shape[0]):
        eb2[g] = _expint_phase(2.0 * b[g], eb[g] * eb[g], L)
    out = np.zeros(a.shape[0])
    for j in range(a.shape[0]):
        acc = 0.0
        for g in range(b.shape[0]):
            if kind == 2:
                t = ph + u[g]
                fac = t / (t * t + beta[j] * beta[j])
            else:
                dl = u[g] - beta[j]
                fac = ell_h / (1.0 + dl * dl * ell_h * ell_h)
                if kind == 1:
                    fac *= dl * ell_h
            acc += wts[g] * fac * _sine_pair_phase(a[j], b[g], ea[j], eb[g], ea2[j], eb2[g], p, epl, L)
        out[j] = acc
    return out


def _sine_pair_phase_numpy(a, b, ell, L):
    p = 1.0 / ell
    epl = np.exp(-p * L)
    d, s = a - b, a + b
    ea, eb = np.exp(1j * a * L), np.exp(1j * b * L)
    ed, es = np.exp(1j * d * L), ea * eb

    def expint(x, ex):
        y = x * L
        iy = 1j * y
        series = L * (1.0 + iy / 2 + iy**2 / 6 + iy**3 / 24 + iy**4 / 120)
        with np.errstate(divide="ignore", invalid="ignore"):
            direct = (ex - 1.0) / (1j * x)
        return np.where(np.abs(y) < _PHASE_SERIES_CUT, series, direct)

    qd = 1.0 / (p * p + d * d)
    qs = 1.0 / (p * p + s * s)
    rd = p * qd - 1j * d * qd
    rs = p * qs - 1j * s * qs
    ea2, eb2 = expint(2.0 * a, ea * ea), expint(2.0 * b, eb * eb)
    col_d = expint(2.0 * d, ed * ed) + L - ea2 - np.conj(eb2)
    col_s = ea2 + eb2 - expint(2.0 * s, es * es) - L
    g = 2.0 * p * (qd - qs)
    tot = col_d * rd - col_s * rs + g * ((ed * epl - 1.0) * np.conj(rd) - (es * epl - 1.0) * np.conj(rs))
    return 0.5 * tot.real


def _spectral_rows_numpy(kind, a, beta, b, u, wts, ell_v, L, ell_h, chunk=32):
    out = np.empty(a.shape[0])
    for s in range(0, a.shape[0], chunk):
        sl = slice(s, s + chunk)
        sp = _sine_pair_phase_numpy(a[sl, None], b[None, :], ell_v, L)
        if kind == 2:
            t = 1.0 / ell_h + u[None, :]
            fac = t / (t * t + beta[sl, None] ** 2)
        else:
            dl = u[None, :] - beta[sl, None]
            fac = ell_h / (1.0 + (dl * ell_h) ** 2)
            if kind == 1:
                fac = fac * dl * ell_h
        out[sl] = (fac * sp) @ wts
    return out


SPECTRAL_KINDS = {"lorentz": 0, "sine_lorentz": 1, "evanescent": 2}


def _spectral_rows_args(kind, a, beta, b, u, wts, ell_v, L, ell_h):
    f = lambda v: np.ascontiguousarray(v, dtype=float)  # noqa: E731
    return (SPECTRAL_KINDS[kind], f(a), f(beta), f(b), f(u), f(wts),
            float(ell_v), float(L), float(ell_h))


def spectral_rows_numba(kind, a, beta, b, u, wts, ell_v, L, ell_h):
    """out_j = sum_g wts_g * F(beta_j, u_g) * [four-term S](a_j, b_g), where F
    is the range factor named by ``kind``."""
    return _spectral_rows_numba(*_spectral_rows_args(kind, a, beta, b, u, wts, ell_v, L, ell_h))


def spectral_rows_numpy(kind, a, beta, b, u, wts, ell_v, L, ell_h):
    return _spectral_rows_numpy(*_spectral_rows_args(kind, a, beta, b, u, wts, ell_v, L, ell_h))


# ---------------------------------------------------------------------------
# Euler-Maruyama block for the mode-power diffusion with pairwise noise:
#   dP = b(P) dx + sum_{j<l} sqrt(2 G_jl P_j P_l) (e_j - e_l) dW_jl
# Negative components are reset to zero and the deficit is taken from the
# positive components in proportion to their size, which keeps sum(P)
# unchanged by the clamp.  The loss -lam_j P_j is applied exactly as two
# half-step factors exp(-lam dx / 2) around the exchange step.
# ---------------------------------------------------------------------------


@njit
def _em_block_numba(P, G, lam, dx, Z, pj, pl):
    # G: coupling with zero diagonal
    n_steps, n_paths, _ = Z.shape
    N = P.shape[1]
    n_clamp = 0
    sq = math.sqrt(dx)
    old = np.empty(N)
    half = np.empty(N)
    for j in range(N):
        half[j] = math.exp(-0.5 * lam[j] * dx)
    for p in range(n_paths):
        for t in range(n_steps):
            for j in range(N):
                old[j] = P[p, j] * half[j]
            for j in range(N):
                acc = 0.0
                for l in range(N):
                    acc += G[j, l] * (old[l] - old[j])
                P[p, j] = old[j] + acc * dx
            for q in range(pj.shape[0]):
                j = pj[q]
                l = pl[q]
                prod = old[j] * old[l]
                if prod > 0.0:
                    inc = math.sqrt(2.0 * G[j, l] * prod) * sq * Z[t, p, q]
                    P[p, j] += inc
                    P[p, l] -= inc
            deficit = 0.0
            pos = 0.0
            for j in range(N):
                if P[p, j] < 0.0:
                    deficit -= P[p, j]
                    P[p, j] = 0.0
                    n_clamp += 1
                else:
                    pos += P[p, j]
            scale = max(1.0 - deficit / pos, 0.0) if deficit > 0.0 and pos > 0.0 else 1.0
            for j in range(N):
                P[p, j] *= scale * half[j]
    return n_clamp


def _em_block_numpy(P, G, lam, dx, Z, pj, pl):
    n_clamp = 0
    sq = np.sqrt(dx)
    Gpair = G[pj, pl]
    rowsum = G.sum(axis=1)
    half = np.exp(-0.5 * lam * dx)
    for t in range(Z.shape[0]):
        P *= half
        drift = P @ G.T - P * rowsum[None, :]
        amp = np.sqrt(2.0 * Gpair[None, :] * np.clip(P[:, pj] * P[:, pl], 0.0, None)) * sq * Z[t]
        Pn = P + drift * dx
        np.add.at(Pn, (slice(None), pj), amp)
        np.subtract.at(Pn, (slice(None), pl), amp)
        neg = Pn < 0.0
        if neg.any():
            n_clamp += int(neg.sum())
            deficit = -np.where(neg, Pn, 0.0).sum(axis=1)
            Pn[neg] = 0.0
            pos = Pn.sum(axis=1)
            rows = (deficit > 0) & (pos > 0)
            scale = np.ones_like(pos)
            scale[rows] = np.clip(1.0 - deficit[rows] / pos[rows], 0.0, None)
            Pn *= scale[:, None]
        P[...] = Pn * half
    return n_clamp


if HAVE_NUMBA:
    overlap = overlap_numba
    sine_pair = sine_pair_numba
    spectral_rows = spectral_rows_numba
    em_block = _em_block_numba
else:
    overlap = overlap_numpy
    sine_pair = sine_pair_numpy
    spectral_rows = spectral_rows_numpy
    em_block = _em_block_numpy
