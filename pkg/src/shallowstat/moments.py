"""First and second moments of the mode powers.

Mean powers obey dQ/dx = A Q with A = Gamma - diag(Lambda).  Second moments
R_jl = E[P_j P_l] obey a closed linear system; we store them as the
upper-triangular vector

    S_jj = R_jj,    S_jl = R_jl + R_lj = 2 R_jl  (j < l)

in row-major ``np.triu_indices`` order.  In these coordinates the generator
Theta - Psi is a symmetric matrix, so its spectrum is real and non-positive.
That is what the Chebyshev propagator below relies on.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.special import ive

from .coupling import CouplingModel
from .errors import DegenerateSpectrum, DimensionMismatch, IntegratorFailure, SingularSystem
from .modes import mode_shapes

log = logging.getLogger(__name__)

DENSE_MAX_N = 60          # largest N for which Theta - Psi is assembled
EXPM_MAX_N = 2000         # largest N for a dense exp(A x)
CHEB_TOL = 1e-16          # Chebyshev truncation, relative to the current |S|
SEGMENT_DECAY = 1e-4      # largest expected drop of |S| within one Chebyshev segment


@dataclass(frozen=True)
class MomentState:
    x: float
    Q: np.ndarray
    S_upper: np.ndarray

    @property
    def N(self):
        return self.Q.shape[0]

    def S_full(self):
        """Symmetric extension S~ of the stored upper triangle."""
        return upper_to_symmetric(self.S_upper, self.N)


@dataclass(frozen=True)
class SpectralSummary:
    lam: float
    V: np.ndarray
    mu: float
    W: np.ndarray
    c_V: float
    c_W: float
    degenerate: bool = False

    # the rate names used in the formulas
    @property
    def lambda_(self):
        return self.lam


# --- index helpers -----------------------------------------------------------


def upper_to_symmetric(S_upper, N):
    iu = np.triu_indices(N)
    M = np.zeros((N, N))
    M[iu] = S_upper
    return M + np.triu(M, 1).T


def symmetric_to_upper(M):
    return M[np.triu_indices(M.shape[0])]


def _s_to_r(S_upper, N):
    # R_jl = S_jl / 2 off the diagonal
    R = upper_to_symmetric(S_upper, N) * 0.5
    R[np.diag_indices(N)] *= 2.0
    return R


def _r_to_s(R):
    S = 2.0 * R
    S[np.diag_indices(R.shape[0])] *= 0.5
    return symmetric_to_upper(S)


def initial_second_moments(Q0):
    """S_jl(0) for deterministic initial powers: R(0) = Q0 Q0^T."""
    Q0 = np.asarray(Q0, dtype=float)
    return _r_to_s(np.outer(Q0, Q0))


def _check(coupling, Q0):
    Q0 = np.asarray(Q0, dtype=float)
    if Q0.ndim != 1 or Q0.shape[0] != coupling.N:
        raise DimensionMismatch(f"Q0 has shape {Q0.shape}, coupling has N={coupling.N}")
    if np.any(Q0 < 0):
        raise ValueError("initial powers must be non-negative")
    return Q0


def _check_x(x):
    if x < 0:
        raise ValueError("range must be non-negative")
    return float(x)


# --- first moments -------------------------------------------------------------


def propagate_Q(coupling, Q0, x):
    """Q(x) = exp(A x) Q0, clamped at zero against round-off."""
    Q0 = _check(coupling, Q0)
    x = _check_x(x)
    A = coupling.A_matrix
    if coupling.N <= EXPM_MAX_N:
        Q = scipy.linalg.expm(A * x) @ Q0
    else:
        Q = spla.expm_multiply(A * x, Q0)
    return np.maximum(Q, 0.0)


# --- second moments --------------------------------------------------------------


def second_moment_operator(coupling):
    """Dense Theta - Psi acting on the upper-triangular vector S."""
    G = np.array(coupling.Gamma, dtype=float)
    lam = np.asarray(coupling.Lambda, dtype=float)
    N = G.shape[0]
    np.fill_diagonal(G, 0.0)
    iu, ju = np.triu_indices(N)
    idx = np.zeros((N, N), dtype=int)
    idx[iu, ju] = np.arange(iu.size)
    idx[ju, iu] = idx[iu, ju]
    M = np.zeros((iu.size, iu.size))
    rows = np.arange(iu.size)
    off = iu != ju
    j, l = iu[off], ju[off]
    r = rows[off]
    d = rows[~off]
    jj = iu[~off]

    # S_jl, j < l
    M[r, r] = -(lam[j] + lam[l]) - 4.0 * G[j, l]
    M[r, idx[j, j]] += 2.0 * G[j, l]
    M[r, idx[l, l]] += 2.0 * G[j, l]
    for n in range(N):
        keep = (j != n) & (l != n)
        rk, jk, lk = r[keep], j[keep], l[keep]
        M[rk, idx[jk, n]] += G[lk, n]
        M[rk, idx[n, lk]] += G[jk, n]
        M[rk, rk] -= G[lk, n] + G[jk, n]
    # S_jj
    M[d, d] = -2.0 * lam[jj] - 2.0 * G[jj].sum(axis=1)
    for n in range(N):
        keep = jj != n
        M[d[keep], idx[jj[keep], n]] += 2.0 * G[jj[keep], n]
    return M


class _RForm:
    """Matrix-free application of the second-moment generator on R."""

    def __init__(self, coupling):
        self.A = np.ascontiguousarray(coupling.A_matrix)
        G = np.array(coupling.Gamma, dtype=float)
        np.fill_diagonal(G, 0.0)
        self.G2 = 2.0 * G
        lam = np.asarray(coupling.Lambda, dtype=float)
        g = -np.diag(coupling.Gamma)
        # max row sum of |Theta - Psi| in the S coordinates bounds the spectrum
        rows_off = (lam[:, None] + lam[None, :] + 2.0 * (g[:, None] + g[None, :]) + 2.0 * self.G2)
        np.fill_diagonal(rows_off, 2.0 * lam + 4.0 * g)
        self.rho = float(rows_off.max()) * 1.001 + 1e-300

    def __call__(self, R):
        AR = self.A @ R
        H = self.G2 * R
        out = AR + AR.T - H
        out[np.diag_indices_from(out)] += H.sum(axis=1)
        return out


def _chebyshev_expv(apply, v, t, rho, scale):
    """exp(t L) v for L with real spectrum in [-rho, 0].

    With L = (rho/2)(Y - I), exp(tL) = sum_k eps_k e^{-a} I_k(a) T_k(Y),
    a = t rho / 2, eps_0 = 1, eps_k = 2."""
    a = 0.5 * t * rho
    if a == 0.0:
        return v.copy()
    kmax = int(math.ceil(math.sqrt(2.0 * a * 40.0) + 40))
    c = ive(np.arange(kmax + 1), a)
    tail = np.cumsum(c[::-1])[::-1]
    # smallest K whose dropped tail is negligible
    K = int(np.argmax(2.0 * tail < CHEB_TOL * scale)) if np.any(2.0 * tail < CHEB_TOL * scale) else kmax
    K = max(K, 1)

    def Y(w):
        return apply(w) * (2.0 / rho) + w

    t_prev = v
    t_cur = Y(v)
    out = c[0] * t_prev + 2.0 * c[1] * t_cur
    for k in range(2, K):
        t_next = 2.0 * Y(t_cur) - t_prev
        out += 2.0 * c[k] * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def propagate_S(coupling, Q0, x, method="auto"):
    """S(x) = exp((Theta - Psi) x) S(0) with S(0) from deterministic Q0.

    ``method`` is "dense" (matrix exponential of the assembled operator,
    N <= DENSE_MAX_N), "matrix_free" (Chebyshev expansion driven by O(N^3)
    operator applications) or "auto".
    """
    Q0 = _check(coupling, Q0)
    x = _check_x(x)
    N = coupling.N
    if method == "auto":
        method = "dense" if N <= DENSE_MAX_N else "matrix_free"
    S0 = initial_second_moments(Q0)
    if method == "dense":
        if N > DENSE_MAX_N:
            raise ValueError(f"dense second-moment path limited to N <= {DENSE_MAX_N}")
        # symmetric generator: exponentiate through its eigen-decomposition
        w, U = np.linalg.eigh(second_moment_operator(coupling))
        S = U @ (np.exp(w * x) * (U.T @ S0))
    elif method == "matrix_free":
        op = _RForm(coupling)
        # The recurrence loses accuracy relative to |S(0)|, so a long range
        # whose second moments decay a lot is cut into segments.  The mean
        # power decay is a cheap guide: |S| drops at most like (sum Q)^2.
        q0 = Q0.sum()
        qx = propagate_Q(coupling, Q0, x).sum() if x > 0 else q0
        drop = 2.0 * math.log(max(q0, 1e-300) / max(qx, 1e-300))
        n_seg = max(1, math.ceil(drop / -math.log(SEGMENT_DECAY)))
        R = np.outer(Q0, Q0)
        for _ in range(n_seg):
            R = _chebyshev_expv(op, R, x / n_seg, op.rho, np.abs(R).sum())
        S = _r_to_s(R)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(S)):
        raise IntegratorFailure("second-moment propagation produced non-finite values")
    return S


def propagate(coupling, Q0, x, method="auto"):
    """MomentState at range x."""
    return MomentState(float(x), propagate_Q(coupling, Q0, x), propagate_S(coupling, Q0, x, method))


def select_modes(Q0, n_max):
    """Indices (ascending) of the ``n_max`` modes carrying the most initial power."""
    Q0 = np.asarray(Q0)
    if n_max is None or n_max >= Q0.size:
        return np.arange(Q0.size)
    return np.sort(np.argsort(Q0)[::-1][:n_max])


# --- spectral structure --------------------------------------------------------


def _top_eigenpair_dense(M):
    w, U = np.linalg.eigh(M)
    return w[-1], U[:, -1], (w[-1] - w[-2]) if w.size > 1 else np.inf


def _positive(v):
    v = v * np.sign(v.sum() or 1.0)
    return v / np.linalg.norm(v)


def spectral_summary(coupling, Q0, tol=1e-10):
    """Leading decay rates and eigenvectors of the first- and second-moment
    generators, plus the projections of the initial state on them."""
    Q0 = _check(coupling, Q0)
    A = 0.5 * (coupling.A_matrix + coupling.A_matrix.T)
    scale = max(np.abs(A).max(), 1e-300)
    ev, V, gap_a = _top_eigenpair_dense(A)
    N = coupling.N
    if N <= DENSE_MAX_N:
        mu_neg, W, gap_s = _top_eigenpair_dense(second_moment_operator(coupling))
    else:
        op = _RForm(coupling)
        M = N * (N + 1) // 2
        shift = op.rho

        def mv(s):
            return _r_to_s(op(_s_to_r(s, N))) + shift * s

        lin = spla.LinearOperator((M, M), matvec=mv, dtype=float)
        vals, vecs = spla.eigsh(lin, k=2, which="LA", tol=tol)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order] - shift, vecs[:, order]
        mu_neg, W, gap_s = vals[0], vecs[:, 0], vals[0] - vals[1]
    degenerate = gap_a < tol * scale or gap_s < tol * scale
    if degenerate:
        log.warning("%s", DegenerateSpectrum("leading eigenvalue not simple within tolerance"))
    V = _positive(V)
    W = _positive(W)
    c_V = float(V @ Q0)
    c_W = float(Q0 @ upper_to_symmetric(W, N) @ Q0)
    return SpectralSummary(-float(ev), V, -float(mu_neg), W, c_V, c_W, bool(degenerate))


# --- weak dissipation ------------------------------------------------------------


@dataclass(frozen=True)
class WeakDissipation:
    """Coefficients of lambda = d lam1 + d^2 lam2 and mu = d mu1 + d^2 mu2."""

    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    delta: float

    def lam(self, delta=None):
        d = self.delta if delta is None else delta
        return d * self.lambda1 + d * d * self.lambda2

    def mu(self, delta=None):
        d = self.delta if delta is None else delta
        return d * self.mu1 + d * d * self.mu2


def _require_irreducible(G):
    adj = (np.abs(G) > 0).astype(int)
    np.fill_diagonal(adj, 0)
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        raise SingularSystem(f"coupling graph has {n_comp} disconnected components")


def _solve_on_complement(M, rhs, v0):
    """x orthogonal to v0 with M x = rhs, for symmetric M whose kernel is v0.

    Deflating the kernel (M - s v0 v0^T, s > 0 off the spectrum) gives a
    nonsingular system; a thresholded pseudo-inverse can instead keep the
    round-off eigenvalue of the kernel and pollute the solution."""
    s = max(float(np.abs(M).max()), 1.0)
    rhs = rhs - (rhs @ v0) * v0
    x = np.linalg.solve(M - s * np.outer(v0, v0), rhs)
    return x - (x @ v0) * v0


def weak_dissipation_expansion(Gamma, Lambda1, delta=1.0):
    """Second-order expansion of the decay rates for Lambda = delta * Lambda1.

    The first-order eigenvector corrections solve singular systems restricted
    to the complement of the equipartition kernel."""
    G = np.array(Gamma, dtype=float)
    N = G.shape[0]
    lam1v = np.asarray(Lambda1, dtype=float) * np.ones(N)
    np.fill_diagonal(G, 0.0)
    _require_irreducible(G)
    np.fill_diagonal(G, -G.sum(axis=1))

    V0 = np.full(N, 1.0 / math.sqrt(N))
    lambda1 = float(V0 @ (lam1v * V0))
    V1 = _solve_on_complement(G, (lam1v - lambda1) * V0, V0)
    lambda2 = float(V1 @ G @ V1)

    theta = second_moment_operator(CouplingModel.from_arrays(G, np.zeros(N)))
    iu, ju = np.triu_indices(N)
    psi1 = lam1v[iu] + lam1v[ju]
    W0 = np.full(iu.size, math.sqrt(2.0 / (N * (N + 1))))
    mu1 = float(W0 @ (psi1 * W0))
    W1 = _solve_on_complement(theta, (psi1 - mu1) * W0, W0)
    mu2 = float(W1 @ theta @ W1)
    return WeakDissipation(lambda1, lambda2, mu1, mu2, float(delta))


# --- pointwise intensity ------------------------------------------------------------


def intensity_moments(modes, state, z):
    """(m2, m4) = (E|p|^2, E|p|^4) at depth(s) z, phases averaged."""
    if modes.N != state.N:
        raise DimensionMismatch(f"state has N={state.N}, modes has N={modes.N}")
    w = mode_shapes(modes, np.atleast_1d(z)) ** 2 / modes.beta[:, None]
    m2 = state.Q @ w
    m4 = np.einsum("jz,jl,lz->z", w, state.S_full(), w)
    if np.ndim(z) == 0:
        return float(m2[0]), float(m4[0])
    return m2, m4


def scintillation_index(modes, state, depths):
    """Mean over the depths of (m4 - m2^2)/m2^2."""
    m2, m4 = intensity_moments(modes, state, np.asarray(depths, dtype=float))
    return float(np.mean((m4 - m2**2) / m2**2))
