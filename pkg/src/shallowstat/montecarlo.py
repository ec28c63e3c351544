"""Monte Carlo paths of the mode-power diffusion and synthetic array snapshots.

Each pair j < l exchanges power through its own Brownian motion,

    dP = b(P) dx + sum_{j<l} sqrt(2 Gamma_jl P_j P_l) (e_j - e_l) dW_jl,

with drift b_j = sum_l Gamma_jl (P_l - P_j) - Lambda_j P_j.  The pairwise
noise reproduces the generator's diffusion matrix exactly, and its
increments sum to zero, so total power is conserved path by path when
Lambda = 0.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionMismatch, StepTooLarge
from .modes import mode_shapes
from .moments import MomentState, _r_to_s
from .pipeline import SnapshotSet

STEP_LIMIT = 0.1
BLOCK_STEPS = 64


@dataclass(frozen=True)
class PowerPath:
    x_grid: np.ndarray
    P: np.ndarray  # (len(x_grid), N)


@dataclass(frozen=True)
class PowerEnsemble:
    """Recorded powers ``P[k, p, j]`` at ``x_grid[k]`` for path p, mode j."""

    x_grid: np.ndarray
    P: np.ndarray
    n_clamped: int
    dx: float
    seed: object

    @property
    def n_paths(self):
        return self.P.shape[1]

    @property
    def final(self):
        return self.P[-1]

    def path(self, p):
        return PowerPath(self.x_grid, self.P[:, p, :])

    def mean(self, k=-1):
        return self.P[k].mean(axis=0)

    def standard_error(self, k=-1):
        return self.P[k].std(axis=0, ddof=1) / math.sqrt(self.n_paths)

    def second_moments(self, k=-1):
        """Sample E[P_j P_l] at record k as a full matrix."""
        X = self.P[k]
        return X.T @ X / X.shape[0]


def simulate_powers(coupling, Q0, x_end, dx, n_paths, seed=None, n_records=1):
    """Euler-Maruyama ensemble from the deterministic start Q0, with the loss
    terms integrated exactly by splitting.

    The step is shrunk so that an integer number of steps reaches x_end, and
    powers are recorded at ``n_records`` equally spaced ranges after x = 0.
    Negative excursions are clamped to zero and the lost mass is taken back
    proportionally from the other modes; the clamp count is reported.
    """
    Q0 = np.asarray(Q0, dtype=float)
    N = coupling.N
    if Q0.shape != (N,):
        raise DimensionMismatch(f"Q0 has shape {Q0.shape}, coupling has N={N}")
    if np.any(Q0 < 0):
        raise ConfigError("initial powers must be non-negative")
    if n_paths < 1 or n_records < 1 or x_end < 0 or dx <= 0:
        raise ConfigError("need n_paths >= 1, n_records >= 1, x_end >= 0, dx > 0")
    G = np.array(coupling.Gamma, dtype=float)
    lam = np.ascontiguousarray(coupling.Lambda, dtype=float)
    rate = float(np.max(np.abs(np.diag(G)) + lam)) if N else 0.0
    if dx * rate >= STEP_LIMIT:
        raise StepTooLarge(f"dx * max rate = {dx * rate:.3g} >= {STEP_LIMIT}")
    np.fill_diagonal(G, 0.0)
    pj, pl = np.triu_indices(N, 1)
    keep = G[pj, pl] > 0
    pj, pl = np.ascontiguousarray(pj[keep]), np.ascontiguousarray(pl[keep])

    n_steps = max(int(math.ceil(x_end / dx - 1e-12)), n_records) if x_end > 0 else 0
    n_records = min(n_records, max(n_steps, 1))
    h = x_end / n_steps if n_steps else 0.0
    record_at = np.round(np.arange(1, n_records + 1) * n_steps / n_records).astype(int)

    rng = np.random.default_rng(seed)
    P = np.tile(Q0, (n_paths, 1))
    out = np.empty((n_records + 1, n_paths, N))
    out[0] = P
    clamped, done, k = 0, 0, 1
    while done < n_steps:
        stop = min(done + BLOCK_STEPS, record_at[k - 1])
        Z = rng.standard_normal((stop - done, n_paths, pj.size))
        clamped += int(kernels.em_block(P, G, lam, h, Z, pj, pl))
        done = stop
        if done == record_at[k - 1]:
            out[k] = P
            k += 1
    if n_steps == 0:
        out[1:] = P
    x_grid = np.concatenate([[0.0], record_at * h])
    return PowerEnsemble(x_grid, out, clamped, h, seed)


def ensemble_state(ensemble, k=-1):
    """MomentState estimated from the recorded paths at record ``k``."""
    R = ensemble.second_moments(k)
    return MomentState(float(ensemble.x_grid[k]), ensemble.mean(k), _r_to_s(R))


def fixed_state(P, x=0.0):
    """MomentState of deterministic powers P (R = P P^T)."""
    P = np.asarray(P, dtype=float)
    return MomentState(float(x), P, _r_to_s(np.outer(P, P)))


def synthesize_snapshots(modes, Px, depths, n_snapshots, seed=None, freq=None):
    """Phase-randomised snapshots p(z_n) = sum_j sqrt(P_j) e^{i theta_j} phi_j(z_n)/sqrt(beta_j).

    ``Px`` is either one power vector (held fixed) or an (n_paths, N)
    ensemble from which a row is drawn per snapshot.  ``depths`` may also be
    an ArrayGeometry.
    """
    depths = np.asarray(getattr(depths, "hydrophone_depths", depths), dtype=float)
    Px = np.asarray(Px, dtype=float)
    if Px.shape[-1] != modes.N:
        raise DimensionMismatch(f"powers have {Px.shape[-1]} modes, ModeSet has {modes.N}")
    if np.any(Px < 0):
        raise ConfigError("powers must be non-negative")
    rng = np.random.default_rng(seed)
    if Px.ndim == 1:
        amp = np.broadcast_to(np.sqrt(Px), (n_snapshots, modes.N))
    else:
        amp = np.sqrt(Px[rng.integers(0, Px.shape[0], n_snapshots)])
    theta = rng.uniform(0.0, 2 * math.pi, (n_snapshots, modes.N))
    field = mode_shapes(modes, depths) / np.sqrt(modes.beta)[:, None]
    data = (amp * np.exp(1j * theta)) @ field
    f = float(freq) if freq is not None else modes.omega / (2 * math.pi)
    return SnapshotSet(depths, {f: data}, {f: np.arange(n_snapshots)})
