"""Command-line front end: ``shallowstat <subcommand> CONFIG.json [--out DIR] [--seed N]``.

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "shallowstat run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_w": _POS, "c_s": _POS, "rho_w": _POS, "rho_s": _POS, "z_b": _POS,
                "alpha": _NONNEG, "nu_s": _NONNEG, "sigma": _NONNEG, "ell_v": _POS, "ell_h": _POS,
            },
            "not": {"required": ["alpha", "nu_s"]},
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"z0": _POS, "x_a": _POS},
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["alma"]},
                "centre": _POS, "count": {"type": "integer", "minimum": 1}, "spacing": _POS,
                "hydrophone_depths": {"type": "array", "items": _POS, "minItems": 1},
                "z_m": _POS, "z_M": _POS,
            },
        },
        "frequencies": {"type": "array", "items": _POS},
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_max": {"type": ["integer", "null"], "minimum": 1},
                "quadrature": {"enum": ["adaptive", "fast"]},
                "lags": {"type": "integer", "minimum": 2},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_end": _POS, "dx": _POS, "n_paths": {"type": "integer", "minimum": 1},
                "n_records": {"type": "integer", "minimum": 1},
                "n_snapshots": {"type": "integer", "minimum": 0},
            },
        },
        "scintillation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"snapshots": {"type": "string"}},
        },
        "inversion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "patternProperties": {
                        "^(c_s|rho_s|alpha|sigma|ell_v|ell_h)$": {
                            "type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
                    },
                },
                "n_starts": {"type": "integer", "minimum": 1},
                "max_evals": {"type": "integer", "minimum": 1},
                "n_screen": {"type": "integer", "minimum": 0},
                "n_polish": {"type": "integer", "minimum": 1},
                "polish_evals": {"type": "integer", "minimum": 0},
                "polish": {"enum": ["least_squares", "simplex"]},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "sensitivity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "values": {
                    "type": "object",
                    "additionalProperties": False,
                    "patternProperties": {
                        "^(c_s|rho_s|alpha|sigma|ell_v|ell_h)$": {"type": "array", "items": _NUM}
                    },
                },
                "step": _POS,
            },
        },
        "seed": {"type": "integer"},
    },
}

log = logging.getLogger("shallowstat")


class _ConfigProblem(Exception):
    pass


# --- configuration ---------------------------------------------------------------


def load_config(path):
    import jsonschema

    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _ConfigProblem(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise _ConfigProblem(f"config error at {where}: {exc.message}") from exc
    return cfg


def build_environment(cfg):
    from .coupling import alpha_to_nu
    from .modes import EnvironmentParams

    e = dict(cfg.get("environment", {}))
    if "alpha" in e:
        e["nu_s"] = alpha_to_nu(e.pop("alpha"))
    return EnvironmentParams(**e)


def build_source(cfg):
    from .modes import SourceSpec

    return SourceSpec(**cfg.get("source", {}))


def build_geometry(cfg, required=True):
    from .fields import ArrayGeometry

    g = cfg.get("geometry")
    if g is None:
        if required:
            raise _ConfigProblem("config lacks a geometry section")
        return None
    if "preset" in g:
        return ArrayGeometry.alma()
    if "hydrophone_depths" in g:
        d = sorted(g["hydrophone_depths"])
        return ArrayGeometry(g.get("z_m", d[0]), g.get("z_M", d[-1]), tuple(d), spacing=g.get("spacing"))
    if {"centre", "count", "spacing"} <= g.keys():
        return ArrayGeometry.uniform(g["centre"], g["count"], g["spacing"])
    if {"z_m", "z_M"} <= g.keys():
        return ArrayGeometry(g["z_m"], g["z_M"])
    raise _ConfigProblem("geometry needs a preset, hydrophone_depths, centre/count/spacing or z_m/z_M")


def _options(cfg):
    o = {"n_max": None, "quadrature": "adaptive", "lags": 512}
    o.update(cfg.get("options", {}))
    return o


def _num(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2), encoding="utf-8")


def _y_grid(geom, lags):
    import numpy as np

    return np.linspace(0.0, geom.aperture, lags, endpoint=False)


def _prepare(cfg, f):
    """Modes (possibly truncated), initial powers and coupling at f Hz."""
    import math

    from .coupling import build_coupling
    from .moments import select_modes
    from .modes import solve_modes, source_amplitudes

    env, src, opt = build_environment(cfg), build_source(cfg), _options(cfg)
    modes = solve_modes(env, 2 * math.pi * f).require_guided()
    Q0 = source_amplitudes(modes, src)
    keep = select_modes(Q0, opt["n_max"])
    modes, Q0 = modes.truncate(keep), Q0[keep]
    return modes, Q0, build_coupling(modes, env, quadrature=opt["quadrature"])


# --- subcommands ------------------------------------------------------------------------


def cmd_modes(cfg, args):
    import math

    from .modes import solve_modes

    env = build_environment(cfg)
    rows = []
    for f in cfg.get("frequencies", []):
        m = solve_modes(env, 2 * math.pi * f)
        for j in range(m.N):
            rows.append([f, j, _num(m.sigma[j]), _num(m.beta[j]), _num(m.zeta[j]), _num(m.A[j]), _num(m.k_wj[j])])
    _write_csv(args.out / "modes.csv", ["freq_hz", "mode", "sigma", "beta", "zeta", "A", "k_w"], rows)


def cmd_forward(cfg, args):
    from .fields import forward_radii

    env, src, geom, opt = build_environment(cfg), build_source(cfg), build_geometry(cfg), _options(cfg)
    res = forward_radii(env, src, geom, cfg.get("frequencies", []), opt["n_max"], opt["quadrature"],
                        _y_grid(geom, opt["lags"]))
    curves = [[r.freq, _num(y), _num(c)] for r in res.results for y, c in zip(r.curve.y_grid, r.curve.values)]
    _write_csv(args.out / "curves.csv", ["freq_hz", "y_m", "corr"], curves)
    _write_csv(args.out / "radii.csv", ["freq_hz", "radius_m", "reached", "N", "N_used"],
               [[r.freq, _num(r.radius), int(r.reached), r.N, r.N_used] for r in res.results])
    _write_json(args.out / "forward.json", {
        "format_version": 1,
        "radii": {str(r.freq): r.radius for r in res.results},
        "dropped_frequencies": res.dropped,
    })


def cmd_simulate(cfg, args):
    import numpy as np

    from .montecarlo import simulate_powers, synthesize_snapshots
    from .moments import propagate_Q
    from .pipeline import SnapshotSet, write_snapshots

    src, geom = build_source(cfg), build_geometry(cfg)
    sim = {"x_end": src.x_a, "dx": None, "n_paths": 200, "n_records": 10, "n_snapshots": 1000}
    sim.update(cfg.get("simulate", {}))
    rng = np.random.default_rng(args.seed)
    moments, merged = [], SnapshotSet(geom.depths)
    for f in cfg.get("frequencies", []):
        modes, Q0, cm = _prepare(cfg, f)
        rate = float(np.max(np.abs(np.diag(cm.Gamma)) + cm.Lambda))
        dx = sim["dx"] or (0.05 / rate if rate > 0 else sim["x_end"])
        seeds = rng.integers(0, 2**63, size=2)
        ens = simulate_powers(cm, Q0, sim["x_end"], dx, sim["n_paths"], int(seeds[0]), sim["n_records"])
        for k, x in enumerate(ens.x_grid):
            Qt = propagate_Q(cm, Q0, x)
            m, se = ens.mean(k), ens.standard_error(k) if ens.n_paths > 1 else np.full(modes.N, np.nan)
            moments += [[f, _num(x), j, _num(m[j]), _num(se[j]), _num(Qt[j])] for j in range(modes.N)]
        if sim["n_snapshots"]:
            s = synthesize_snapshots(modes, ens.final, geom, sim["n_snapshots"], int(seeds[1]), freq=f)
            merged.data.update(s.data)
            merged.reps.update(s.reps)
        log.info("%g Hz: %d paths, %d clamps", f, ens.n_paths, ens.n_clamped)
    _write_csv(args.out / "moments.csv", ["freq_hz", "x_m", "mode", "mc_mean", "mc_se", "theory_mean"], moments)
    write_snapshots(args.out / "snapshots.csv", merged)


def _snapshot_source(cfg, args):
    p = args.snapshots or cfg.get("scintillation", {}).get("snapshots")
    if not p:
        return None
    p = Path(p)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        return files or None
    if not p.exists():
        raise _ConfigProblem(f"snapshot file {p} not found")
    return [p]


def cmd_scintillation(cfg, args):
    from .moments import propagate, scintillation_index
    from .pipeline import empirical_scintillation, read_snapshots, stack_arms

    src, geom = build_source(cfg), build_geometry(cfg)
    files = _snapshot_source(cfg, args)
    snaps = stack_arms([read_snapshots(f) for f in files]) if files else None
    rows = []
    for f in cfg.get("frequencies", []):
        modes, Q0, cm = _prepare(cfg, f)
        theory = scintillation_index(modes, propagate(cm, Q0, src.x_a), geom.depths)
        emp, se = "", ""
        if snaps is not None and any(abs(g - f) <= 1e-9 * f for g in snaps.data):
            est = empirical_scintillation(snaps, f)
            emp, se = _num(est.value), _num(est.se)
        rows.append([f, _num(theory), emp, se])
    _write_csv(args.out / "scintillation.csv", ["freq_hz", "theory", "empirical", "empirical_se"], rows)


def _read_observed(path, freqs):
    import numpy as np

    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        table = {float(r["freq_hz"]): float(r["radius_m"]) for r in rows}
    except (OSError, KeyError, ValueError) as exc:
        raise _ConfigProblem(f"cannot read observed radii from {path}: {exc}") from exc
    if not freqs:
        freqs = sorted(table)
    return freqs, np.array([table.get(float(f), np.nan) for f in freqs])


def _problem(cfg, observed):
    from .inversion import InverseProblem

    opt = _options(cfg)
    inv = cfg.get("inversion", {})
    extra = {k: inv[k] for k in ("n_starts", "max_evals", "n_screen", "n_polish", "polish_evals", "polish", "workers") if k in inv}
    freqs, obs = observed
    return InverseProblem(build_environment(cfg), build_source(cfg), build_geometry(cfg), freqs, obs,
                          bounds={k: tuple(v) for k, v in inv.get("bounds", {}).items()},
                          n_max=opt["n_max"] if opt["n_max"] is not None else 100,
                          quadrature=cfg.get("options", {}).get("quadrature", "fast"), **extra)


def cmd_invert(cfg, args):
    from .inversion import minimize

    if not args.observed:
        raise _ConfigProblem("invert needs an observed-radii CSV (freq_hz,radius_m)")
    prob = _problem(cfg, _read_observed(args.observed, cfg.get("frequencies", [])))
    res = minimize(prob, seed=args.seed)
    _write_json(args.out / "inversion.json", {
        "format_version": 1,
        "estimate": res.phi_hat,
        "misfit": res.misfit,
        "budget_exhausted": res.budget_exhausted,
        "n_evals": res.n_evals,
        "starts": res.starts,
        "spread": res.spread(),
        "trace": res.trace,
    })


_DEFAULT_SWEEPS = {
    "c_s": lambda v: [v - 20, v, v + 20],
    "alpha": lambda v: [v / 2, v, 2 * v],
    "sigma": lambda v: [v / 2, v, 2 * v],
    "ell_v": lambda v: [v / 2, v, 2 * v],
    "rho_s": lambda v: [1400.0, v, 2000.0],
    "ell_h": lambda v: [v / 2, v, 2 * v],
}


def cmd_sensitivity(cfg, args):
    import numpy as np

    from .coupling import nu_to_alpha
    from .inversion import PARAMS, normalized_sensitivity, sensitivity

    freqs = cfg.get("frequencies", [])
    prob = _problem(cfg, (freqs, np.ones(len(freqs))))
    env = prob.known
    phi0 = {"c_s": env.c_s, "rho_s": env.rho_s, "alpha": nu_to_alpha(env.nu_s), "sigma": env.sigma,
            "ell_v": env.ell_v, "ell_h": env.ell_h}
    sens_cfg = cfg.get("sensitivity", {})
    sweeps = sens_cfg.get("values") or {k: fn(phi0[k]) for k, fn in _DEFAULT_SWEEPS.items()}
    # the sweep values may leave the default search box
    prob.bounds = {k: (min([phi0[k]] + list(sweeps.get(k, []))), max([phi0[k]] + list(sweeps.get(k, []))))
                   for k in PARAMS}
    rows = []
    for k, vals in sweeps.items():
        t = sensitivity(prob, phi0, k, vals)
        rows += [[k, _num(v), f, _num(r)] for v, rr in zip(t.values, t.radii) for f, r in zip(t.freqs, rr)]
    _write_csv(args.out / "sensitivity.csv", ["param", "value", "freq_hz", "radius_m"], rows)
    _write_json(args.out / "sensitivity.json", {
        "format_version": 1,
        "phi0": phi0,
        "normalized": normalized_sensitivity(prob, phi0, sens_cfg.get("step", 0.02)),
    })


COMMANDS = {
    "modes": cmd_modes,
    "forward": cmd_forward,
    "simulate": cmd_simulate,
    "scintillation": cmd_scintillation,
    "invert": cmd_invert,
    "sensitivity": cmd_sensitivity,
}


def build_parser():
    p = argparse.ArgumentParser(prog="shallowstat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON run configuration")
        if name == "invert":
            s.add_argument("observed", nargs="?", help="CSV of observed radii (freq_hz,radius_m)")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        s.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        if name == "scintillation":
            s.add_argument("--snapshots", help="snapshot CSV file or directory of them")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _limit_threads(n):
    """Cap BLAS/OpenMP pools; returns a context manager."""
    import contextlib

    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    os.environ["NUMBA_NUM_THREADS"] = str(n)
    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import ConfigError, ShallowStatError

    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.get("seed")
        if getattr(args, "snapshots", None) is None:
            args.snapshots = None
        args.out.mkdir(parents=True, exist_ok=True)
        with _limit_threads(args.threads):
            COMMANDS[args.command](cfg, args)
    except (_ConfigProblem, ConfigError) as exc:
        print(f"shallowstat: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShallowStatError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"shallowstat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
