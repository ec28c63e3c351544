"""Estimate the sediment and fluctuation parameters from correlation radii.

The search runs over phi = (c_s, rho_s, alpha, sigma, ell_v, ell_h), with the
sediment loss given as alpha in dB per wavelength.  Each coordinate is mapped
onto its box by a logistic function, and Nelder-Mead is started from
Latin-hypercube points; the best outcomes are refined by a bounded
least-squares trust-region method on the radius residuals.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares as _least_squares
from scipy.optimize import minimize as _scipy_minimize
from scipy.stats import qmc

from .coupling import alpha_to_nu
from .errors import ConfigError, ForwardModelFailure, NoGuidedModes, ShallowStatError
from .fields import forward_frequency
from .modes import EnvironmentParams, solve_modes, source_amplitudes
from .moments import select_modes

log = logging.getLogger(__name__)

PARAMS = ("c_s", "rho_s", "alpha", "sigma", "ell_v", "ell_h")
DEFAULT_BOUNDS = {
    "c_s": (1550.0, 1800.0),
    "rho_s": (1300.0, 2200.0),
    "alpha": (0.05, 3.0),
    "sigma": (1e-4, 2e-2),
    "ell_v": (5.0, 100.0),
    "ell_h": (20.0, 500.0),
}
_EDGE = 1e-9  # keeps Latin-hypercube samples off the logit singularities


@dataclass
class InverseProblem:
    known: EnvironmentParams
    src: object
    geom: object
    freqs: tuple
    observed: np.ndarray
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    n_max: int = 100
    quadrature: str = "fast"
    n_starts: int = 16
    max_evals: int = 200          # per simplex run
    polish_evals: int = 400       # per polished candidate
    n_polish: int = 3             # distinct candidates taken into polishing
    n_screen: int = 0             # Latin-hypercube points screened for starts
    polish: str = "least_squares"  # or "simplex"
    workers: int = 1              # processes for independent runs
    xatol: float = 1e-5           # in the unbounded coordinates
    fatol: float = 1e-14
    xtol_ls: float = 1e-12        # relative step tolerance of the least-squares polish
    diff_step: float = 1e-6       # relative finite-difference step

    def __post_init__(self):
        self.freqs = tuple(float(f) for f in self.freqs)
        self.observed = np.asarray(self.observed, dtype=float)
        if self.observed.shape != (len(self.freqs),):
            raise ConfigError("need one observed radius per frequency")
        if np.any(self.observed[np.isfinite(self.observed)] <= 0):
            raise ConfigError("observed radii must be positive")
        b = dict(DEFAULT_BOUNDS)
        b.update(self.bounds)
        for k in PARAMS:
            lo, hi = map(float, b[k])
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"bad bounds for {k}: {b[k]}")
            b[k] = (lo, hi)
        if self.polish not in ("least_squares", "simplex"):
            raise ConfigError(f"unknown polish method {self.polish!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if b["c_s"][0] <= self.known.c_w:
            raise ConfigError("the c_s box must lie above the water sound speed")
        self.bounds = b
        self._cache = {}
        self._mode_sets = None

    def reference(self):
        """The configured environment's parameters, clipped into the box."""
        from .coupling import nu_to_alpha

        e = self.known
        v = np.array([e.c_s, e.rho_s, nu_to_alpha(e.nu_s), e.sigma, e.ell_v, e.ell_h])
        return np.clip(v, self.lower, self.upper)

    def mode_sets(self):
        """Retained mode indices per frequency, chosen once by initial power at
        the reference point so that the truncated model varies smoothly."""
        if self._mode_sets is None:
            env = self.environment(self.reference())
            sets = {}
            for f in self.freqs:
                modes = solve_modes(env, 2 * math.pi * f)
                sets[f] = None if modes.N == 0 else select_modes(source_amplitudes(modes, self.src), self.n_max)
            self._mode_sets = sets
        return self._mode_sets

    @property
    def lower(self):
        return np.array([self.bounds[k][0] for k in PARAMS])

    @property
    def upper(self):
        return np.array([self.bounds[k][1] for k in PARAMS])

    def as_vector(self, phi):
        if isinstance(phi, dict):
            return np.array([float(phi[k]) for k in PARAMS])
        v = np.asarray(phi, dtype=float)
        if v.shape != (len(PARAMS),):
            raise ConfigError(f"phi must have {len(PARAMS)} entries")
        return v

    def environment(self, phi):
        v = self.as_vector(phi)
        p = dict(zip(PARAMS, v))
        return self.known.replace(c_s=p["c_s"], rho_s=p["rho_s"], nu_s=alpha_to_nu(p["alpha"]),
                                  sigma=p["sigma"], ell_v=p["ell_v"], ell_h=p["ell_h"])


def as_dict(v):
    return {k: float(x) for k, x in zip(PARAMS, v)}


def forward(problem, phi):
    """Theoretical radii at the problem frequencies; NaN where the model fails."""
    v = problem.as_vector(phi)
    key = v.tobytes()
    hit = problem._cache.get(key)
    if hit is not None:
        return hit.copy()
    env = problem.environment(v)
    out = np.full(len(problem.freqs), np.nan)
    sets = problem.mode_sets()
    for i, f in enumerate(problem.freqs):
        try:
            keep = sets[f]
            if keep is None:
                raise NoGuidedModes(f"no guided mode at {f} Hz")
            out[i] = forward_frequency(env, problem.src, problem.geom, f, problem.n_max, problem.quadrature,
                                       keep=keep).radius
        except ShallowStatError as exc:
            log.info("forward model failed at %g Hz: %s", f, exc)
    problem._cache[key] = out
    return out.copy()


def misfit_details(problem, phi):
    """(E, used) where ``used`` marks the frequencies entering the sum."""
    v = problem.as_vector(phi)
    if np.any(v < problem.lower) or np.any(v > problem.upper):
        raise ConfigError("phi outside the search box")
    r = forward(problem, v)
    used = np.isfinite(r) & np.isfinite(problem.observed)
    if not used.any():
        raise ForwardModelFailure("forward model failed at every frequency")
    return float(np.sum((r[used] - problem.observed[used]) ** 2)), used


def misfit(problem, phi):
    """Sum of squared radius differences over the usable frequencies."""
    return misfit_details(problem, phi)[0]


@dataclass
class InversionResult:
    phi_hat: dict
    misfit: float
    trace: list
    starts: list
    budget_exhausted: bool
    n_evals: int
    sensitivity: dict = field(default_factory=dict)

    def spread(self):
        """Per-parameter (min, max) over the start-wise optima."""
        v = np.array([[s["phi"][k] for k in PARAMS] for s in self.starts])
        return {k: (float(v[:, i].min()), float(v[:, i].max())) for i, k in enumerate(PARAMS)}


def _to_box(u, lo, hi):
    return lo + (hi - lo) / (1.0 + np.exp(-u))


def _from_box(v, lo, hi):
    t = np.clip((v - lo) / (hi - lo), _EDGE, 1 - _EDGE)
    return np.log(t / (1 - t))


class _Budget(Exception):
    pass


def _evaluate(problem, v):
    try:
        return misfit(problem, v)
    except ForwardModelFailure:
        return math.inf


def _simplex_run(problem, v0, step, maxfev):
    """One bounded Nelder-Mead run from v0; returns ([(v, E), ...], hit_cap)."""
    lo, hi = problem.lower, problem.upper
    free = hi > lo
    local = []

    def objective(u):
        v = lo.copy()
        v[free] = _to_box(u, lo[free], hi[free])
        E = _evaluate(problem, v)
        local.append((v, E))
        return E

    u0 = _from_box(v0[free], lo[free], hi[free])
    simplex = np.vstack([u0, u0 + step * np.eye(u0.size)])
    res = _scipy_minimize(objective, u0, method="Nelder-Mead",
                          options={"maxfev": maxfev, "xatol": problem.xatol, "fatol": problem.fatol,
                                   "initial_simplex": simplex, "adaptive": True})
    return local, res.status == 1


def _simplex_polish(problem, v0):
    """Simplex restarts around the incumbent with a halving step."""
    local = [(v0, _evaluate(problem, v0))]
    incumbent = local[0]
    step = 0.25
    while len(local) < problem.polish_evals:
        run, hit_cap = _simplex_run(problem, incumbent[0], step,
                                    min(problem.max_evals, problem.polish_evals - len(local)))
        local += run
        v, E = min(run, key=lambda t: t[1])
        gained = incumbent[1] - E
        if E < incumbent[1]:
            incumbent = (v, E)
        if gained <= problem.fatol and not hit_cap:
            return local, False
        step = max(step * 0.5, 1e-3)
    return local, True


def _least_squares_polish(problem, v0):
    """Bounded dogbox trust-region on the radius residuals, finite-difference
    Jacobian; every evaluation, Jacobian columns included, counts against
    ``polish_evals``."""
    lo, hi = problem.lower, problem.upper
    free = hi > lo
    obs = problem.observed
    usable = np.isfinite(obs)
    local = []

    def residual(w):
        if len(local) >= problem.polish_evals:
            raise _Budget
        v = lo.copy()
        v[free] = np.clip(w, lo[free], hi[free])
        r = forward(problem, v)[usable] - obs[usable]
        ok = np.isfinite(r)
        local.append((v, float(np.sum(r[ok] ** 2)) if ok.any() else math.inf))
        # a frequency where the model fails counts as a zero radius
        return np.where(ok, r, -obs[usable])

    try:
        res = _least_squares(residual, np.clip(v0[free], lo[free], hi[free]), bounds=(lo[free], hi[free]), method="dogbox", x_scale="jac",
                             diff_step=problem.diff_step, xtol=problem.xtol_ls, ftol=problem.fatol,
                             gtol=problem.fatol, max_nfev=problem.polish_evals)
        exhausted = res.status == 0
    except _Budget:
        exhausted = True
    return local, exhausted


_POLISHERS = {"least_squares": _least_squares_polish, "simplex": _simplex_polish}


def _map(problem, fn, args):
    """fn(problem, *a) for each a, in order; a process pool when workers > 1."""
    if problem.workers > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(problem.workers, len(args))) as ex:
            return list(ex.map(fn, [problem] * len(args), *zip(*args)))
    return [fn(problem, *a) for a in args]


def _screen(problem, chunk):
    return [(v, _evaluate(problem, v)) for v in chunk]


def minimize(problem, seed=None, starts=None):
    """Multistart bounded search.

    Latin-hypercube points (optionally the best of a larger screened sample)
    seed short Nelder-Mead runs in logistic box coordinates; the best
    ``n_polish`` distinct outcomes are then polished, by default with a
    bounded least-squares trust-region step on the radius residuals.
    ``starts`` may override the start points (rows in PARAMS order).  Runs
    are independent, so with ``workers > 1`` they go to a process pool; the
    trace is merged in start order and does not depend on ``workers``.
    """
    lo, hi = problem.lower, problem.upper
    free = hi > lo
    trace, start_info = [], []
    best = [math.inf, None]

    def record(v, E, label, phase):
        if E < best[0]:
            best[:] = [E, v]
        trace.append({"start": label, "phase": phase, "phi": as_dict(v), "misfit": E, "best": best[0]})

    if not free.any():
        E = misfit(problem, lo)
        record(lo, E, 0, "start")
        return InversionResult(as_dict(lo), E, trace, [{"phi": as_dict(lo), "misfit": E}], False, 1)

    rng = np.random.default_rng(seed)
    if starts is None:
        n_sample = max(problem.n_screen, problem.n_starts)
        unit = qmc.LatinHypercube(d=int(free.sum()), seed=rng).random(n_sample)
        cand = np.tile(lo, (n_sample, 1))
        cand[:, free] = lo[free] + unit * (hi - lo)[free]
        if n_sample > problem.n_starts:
            chunks = np.array_split(cand, max(1, min(problem.workers, n_sample)))
            scored = [t for part in _map(problem, _screen, [(c,) for c in chunks]) for t in part]
            for v, E in scored:
                record(v, E, -1, "screen")
            order = np.argsort([E for _, E in scored], kind="stable")
            cand = cand[order[: problem.n_starts]]
        starts = cand
    starts = np.atleast_2d(np.asarray(starts, dtype=float))

    outcomes = []
    runs = _map(problem, _simplex_run, [(v0, 0.5, problem.max_evals) for v0 in starts])
    for s, (local, _) in enumerate(runs):
        for v, E in local:
            record(v, E, s, "start")
        v, E = min(local, key=lambda t: t[1])
        start_info.append({"phi": as_dict(v), "misfit": E, "n_evals": len(local)})
        outcomes.append((E, s, v))

    # polish the most promising distinct outcomes
    outcomes.sort(key=lambda t: (t[0], t[1]))
    chosen = []
    for E, s, v in outcomes:
        if not np.isfinite(E):
            continue
        u = _from_box(v[free], lo[free], hi[free])
        if all(np.max(np.abs(u - w)) > 0.05 for w, _ in chosen):
            chosen.append((u, v))
        if len(chosen) == problem.n_polish:
            break
    if problem.polish_evals <= 0:
        chosen = []

    polished = _map(problem, _POLISHERS[problem.polish], [(v,) for _, v in chosen])
    exhausted_at = {}
    for i, (local, exhausted) in enumerate(polished):
        for v, E in local:
            record(v, E, len(starts) + i, "polish")
        v, _ = min(local, key=lambda t: t[1])
        exhausted_at[v.tobytes()] = exhausted

    exhausted = exhausted_at.get(best[1].tobytes(), False)
    if exhausted:
        warnings.warn("evaluation budget exhausted before convergence", RuntimeWarning, stacklevel=2)
    return InversionResult(as_dict(best[1]), float(best[0]), trace, start_info, exhausted, len(trace))


# --- sensitivity ---------------------------------------------------------------------


@dataclass
class SensitivityTable:
    param: str
    values: np.ndarray
    freqs: np.ndarray
    radii: np.ndarray  # (len(values), len(freqs)), NaN where the model failed


def sensitivity(problem, phi0, param, values):
    """Radii with ``param`` replaced by each of ``values``, the others held at phi0."""
    if param not in PARAMS:
        raise ConfigError(f"unknown parameter {param!r}")
    v0 = problem.as_vector(phi0)
    i = PARAMS.index(param)
    rows = []
    for x in values:
        v = v0.copy()
        v[i] = float(x)
        rows.append(forward(problem, v))
    return SensitivityTable(param, np.asarray(values, dtype=float), np.array(problem.freqs), np.array(rows))


def normalized_sensitivity(problem, phi0, step=0.02):
    """||d r / d log(theta)|| per parameter, by central differences in log theta."""
    v0 = problem.as_vector(phi0)
    out = {}
    for i, k in enumerate(PARAMS):
        up, dn = v0.copy(), v0.copy()
        up[i] *= math.exp(step)
        dn[i] *= math.exp(-step)
        d = (forward(problem, up) - forward(problem, dn)) / (2 * step)
        out[k] = float(np.linalg.norm(d[np.isfinite(d)]))
    return out


IDENTIFIABILITY_GROUPS = (("c_s", "sigma"), ("alpha", "ell_v"), ("rho_s", "ell_h"))


def ranking_holds(sens, groups=IDENTIFIABILITY_GROUPS):
    """True when every parameter of each group outranks every parameter of
    the following groups."""
    for a, b in zip(groups, groups[1:]):
        if min(sens[k] for k in a) <= max(sens[k] for k in b):
            return False
    return True
