"""Batch front end: ``tubesol SUBCOMMAND --config run.toml [--out DIR] [--seed N] [--override k=v]``.

Every CSV written here starts with a ``# config_hash=...`` line.  Sweep
points are computed independently (optionally in a process pool) and the
rows are written by the parent process in sweep order, so the files do not
depend on the number of workers.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import oracles
from .config import RunConfig, load_config
from .errors import ConfigError, TubeError, UnsupportedGeometry
from .manifold import Circle, FlatTorus, NumericCurve, Sphere, circle_curve, ellipse_curve, model_spectrum, \
    straight_line, write_spectrum_csv
from .pohozaev import integrated_identity, nonexistence_certificate, poincare_check, write_report_csv
from .radial import ProblemParams, linearized_spectrum, merged_eigenvalues, save_profile, save_spectrum, \
    solve_ground_state
from .resonance import admissible_set, fiber_data, kato_check, model_family, morse_index_model, \
    off_resonance_points, resonance_set, spectral_gap, write_intervals_csv, write_resonances_csv
from .tube import LinearizedOperator, TubeField, TubeProblem, iterate_approximation, linearized_family, \
    picard_solve, write_solution_csv

SUBCOMMANDS = ("ground-state", "spectrum", "resonance", "morse-sweep", "construct", "kato", "pohozaev",
               "fixtures", "all")

# pairs recorded in the radial fixture file
ORACLE_PAIRS = ((1, 3.0), (2, 3.0), (3, 2.0), (2, 2.0))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_rows(path: Path, header: str, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _map(cfg: RunConfig, fn, items):
    items = list(items)
    if cfg.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- shared setup ------------------------------------------------------------------


def _params(cfg: RunConfig) -> ProblemParams:
    return ProblemParams(cfg.n, cfg.p, cfg.k)


def _radial_profile(cfg: RunConfig):
    return solve_ground_state(_params(cfg), tol=1e-12, grid_size=cfg.radial_grid)


def _fiber(cfg: RunConfig, profile=None):
    profile = profile if profile is not None else _radial_profile(cfg)
    return linearized_spectrum(profile, max_mode=1 if cfg.n == 1 else 3, eigs_per_mode=6)


def _tube_curve(cfg: RunConfig):
    m = cfg.n + 1
    if cfg.curve == "circle":
        return circle_curve(cfg.R, m, cfg.nt)
    if cfg.curve == "line":
        return straight_line(2 * math.pi * cfg.R, m, cfg.nt)
    return ellipse_curve(cfg.R, cfg.ellipse_b * cfg.R, cfg.nt)


def _base_family(cfg: RunConfig):
    if cfg.family == "circle":
        if cfg.curve == "ellipse":
            return NumericCurve(_tube_curve(cfg))
        return Circle(cfg.R)
    if cfg.family == "torus":
        return FlatTorus(tuple([2 * math.pi * cfg.R] * cfg.k))
    return Sphere(cfg.k, cfg.R)


def _base_spectrum(cfg: RunConfig, lam_needed: float = 0.0):
    """Model base spectrum with at least ``spectrum_count`` values and reaching ``lam_needed``."""
    count = cfg.spectrum_count
    spec = model_spectrum(_base_family(cfg), count)
    while spec.next_value <= lam_needed:
        count *= 2
        spec = model_spectrum(_base_family(cfg), count)
    return spec


def _resonance_context(cfg: RunConfig, fiber):
    lo = min(cfg.eps_min, cfg.eps_lo)
    hi = max(cfg.eps_max, cfg.eps_hi)
    mu0 = fiber_data(fiber).mu0
    base = _base_spectrum(cfg, -mu0 / (0.99 * lo) ** 2)
    report = admissible_set(fiber, base, cfg.N, eps_max=hi, eps_min=lo, samples=cfg.count)
    return base, report


def _sweep(cfg: RunConfig, report) -> np.ndarray:
    return off_resonance_points([r.eps_star for r in report.resonances], cfg.eps_lo, cfg.eps_hi, cfg.count,
                                cfg.spacing)


def _tube_profile(cfg: RunConfig):
    if cfg.n != 1:
        raise UnsupportedGeometry(f"the tube solver handles n = 1 only (got n={cfg.n})")
    return solve_ground_state(_params(cfg), tol=1e-12, grid_size=cfg.nz)


# -- tube pipeline per eps -------------------------------------------------------------


def _tube_point(values: dict, curve, profile, eps: float, compute_index: bool = True):
    """Ladder of iterates and the Picard solution around ``u_{eps,i_max}``."""
    cfg = RunConfig(values)
    problem = TubeProblem(curve, profile, eps, cfg.nz)
    ladder = iterate_approximation(problem, cfg.i_max)
    rows = []
    for i in range(cfg.i_max + 1):
        op = LinearizedOperator(problem, ladder.u(i))
        gap = op.gap()
        index = op.morse_index() if compute_index else None
        rows.append([eps, i, ladder.residuals[i], ladder.ratios[i], gap, index, None])
    result = picard_solve(problem, ladder.u(cfg.i_max), cfg.M, budget=cfg.budget, tol=cfg.tol, i=cfg.i_max,
                          N=cfg.N, N0=cfg.N0, compute_index=compute_index)
    rows[-1][-1] = result.contraction_factor
    return problem, rows, result


DIAG_COLUMNS = ["eps", "i", "residual", "ratio", "gap", "morse_index", "contraction_factor"]


# -- subcommands ----------------------------------------------------------------


def cmd_ground_state(cfg: RunConfig, out: Path) -> list:
    profile = _radial_profile(cfg)
    paths = [save_profile(profile, out, header=cfg.header)]
    rows = [["center_value", profile.center_value], ["derivative_at_boundary", profile.derivative_at_boundary],
            ["shooting_height", profile.shooting_height], ["residual", profile.residual]]
    paths.append(write_rows(out / "ground_state_summary.csv", cfg.header, ["quantity", "value"], rows))
    return paths


def cmd_spectrum(cfg: RunConfig, out: Path) -> list:
    profile = _radial_profile(cfg)
    fiber = _fiber(cfg, profile)
    paths = [save_spectrum(fiber, _params(cfg), cfg.radial_grid, out, header=cfg.header)]
    paths.append(write_spectrum_csv(_base_spectrum(cfg), out / "manifold_spectrum.csv", header=cfg.header))
    return paths


def cmd_resonance(cfg: RunConfig, out: Path) -> list:
    fiber = _fiber(cfg)
    base, report = _resonance_context(cfg, fiber)
    paths = [write_resonances_csv(report.resonances, out / "resonances.csv", header=cfg.header),
             write_intervals_csv(report.admissible, out / "admissible_intervals.csv", header=cfg.header)]
    grid = np.geomspace(cfg.eps_lo, cfg.eps_hi, cfg.count) if cfg.spacing == "log" \
        else np.linspace(cfg.eps_lo, cfg.eps_hi, cfg.count)
    rows = [[e, spectral_gap(fiber, base, e), float(report.defect(e)[0]), morse_index_model(fiber, base, e)]
            for e in grid]
    paths.append(write_rows(out / "resonance_sweep.csv", cfg.header, ["eps", "gap", "defect", "morse_index"], rows))
    return paths


def cmd_construct(cfg: RunConfig, out: Path) -> list:
    profile = _tube_profile(cfg)
    curve = _tube_curve(cfg)
    _, rows, result = _tube_point(cfg.values, curve, profile, cfg.eps)
    return [write_solution_csv(result.u, out / "solution.csv", header=cfg.header),
            write_rows(out / "diagnostics.csv", cfg.header, DIAG_COLUMNS, rows)]


def cmd_morse_sweep(cfg: RunConfig, out: Path) -> list:
    fiber = _fiber(cfg)
    base, report = _resonance_context(cfg, fiber)
    eps = _sweep(cfg, report)
    model = [[e, spectral_gap(fiber, base, e), float(report.defect(e)[0]), morse_index_model(fiber, base, e)]
             for e in eps]
    paths = [write_rows(out / "morse_sweep.csv", cfg.header, ["eps", "gap", "defect", "morse_index"], model)]
    profile = _tube_profile(cfg)
    curve = _tube_curve(cfg)
    results = _map(cfg, partial(_sweep_point, cfg.values, curve, profile), eps)
    diag = [row for rows, _ in results for row in rows]
    paths.append(write_rows(out / "sweep_diagnostics.csv", cfg.header, DIAG_COLUMNS, diag))
    index_rows = [[e, m[3], r.morse_index] for e, m, (_, r) in zip(eps, model, results)]
    paths.append(write_rows(out / "morse_index.csv", cfg.header, ["eps", "model_index", "discrete_index"],
                            index_rows))
    return paths


def _sweep_point(values, curve, profile, eps):
    _, rows, result = _tube_point(values, curve, profile, float(eps))
    # the solution field is not needed by the caller
    result.u = result.v = None
    return rows, result


def _kato_point(values, curve, profile, mu0, eps):
    cfg = RunConfig(values)
    fam = linearized_family(curve, profile, i=cfg.i_max, nz=cfg.nz)
    rep = kato_check(fam, float(eps), model_mu=mu0)
    return [eps, rep.eigenvalue, rep.derivative, rep.model_derivative, rep.derivative / rep.model_derivative,
            rep.overlap]


def cmd_kato(cfg: RunConfig, out: Path) -> list:
    fiber = _fiber(cfg)
    base, report = _resonance_context(cfg, fiber)
    eps = _sweep(cfg, report)
    mu0 = fiber_data(fiber).mu0
    fam = model_family(fiber, base)
    model_rows = []
    for e in eps:
        rep = kato_check(fam, float(e), model_mu=mu0)
        model_rows.append([e, rep.eigenvalue, rep.derivative, rep.model_derivative, rep.relative_error])
    paths = [write_rows(out / "kato_model.csv", cfg.header,
                        ["eps", "eigenvalue", "derivative", "model_derivative", "relative_error"], model_rows)]
    profile = _tube_profile(cfg)
    tube_mu0 = float(merged_eigenvalues(linearized_spectrum(profile, max_mode=1, eigs_per_mode=2))[0])
    rows = _map(cfg, partial(_kato_point, cfg.values, _tube_curve(cfg), profile, tube_mu0), eps)
    paths.append(write_rows(out / "kato_tube.csv", cfg.header,
                            ["eps", "eigenvalue", "derivative", "model_derivative", "ratio", "overlap"], rows))
    return paths


def _random_fiber_shape(rng: np.random.Generator, x: np.ndarray, modes: int = 4) -> np.ndarray:
    """Even rescaled profile ``sum c_j cos((2j+1)πx/2)``, exactly zero at ``|x| = 1``."""
    c = rng.uniform(0.2, 1.0, modes) / (1 + np.arange(modes)) ** 2
    w = sum(cj * np.cos((2 * j + 1) * math.pi * x / 2) for j, cj in enumerate(c))
    w[0] = w[-1] = 0.0
    return w


def _pohozaev_point(values, curve, profile, shape, eps):
    problem, _, result = _tube_point(values, curve, profile, float(eps), compute_index=False)
    rep = integrated_identity(problem, result.u)
    ratio_solution = poincare_check(problem, result.u)
    field = TubeField(problem.grid, np.broadcast_to(shape, problem.grid.shape).copy())
    return rep, ratio_solution, poincare_check(problem, field)


def cmd_pohozaev(cfg: RunConfig, out: Path) -> list:
    paths = []
    params = _params(cfg)
    if cfg.n == 1:
        fiber = _fiber(cfg)
        _, report = _resonance_context(cfg, fiber)
        eps = _sweep(cfg, report)
        profile = _tube_profile(cfg)
        curve = _tube_curve(cfg)
        rng = np.random.default_rng(cfg.seed)
        x = np.linspace(-1.0, 1.0, 2 * cfg.nz + 1)
        shape = _random_fiber_shape(rng, x)
        results = _map(cfg, partial(_pohozaev_point, cfg.values, curve, profile, shape), eps)
        rows = [(rep, math.nan, "NotApplicable") for rep, _, _ in results]
        paths.append(write_report_csv(rows, out / "pohozaev_report.csv", header=cfg.header))
        prow = [[rep.eps, rep.relative_residual, a, b] for rep, a, b in results]
        paths.append(write_rows(out / "poincare.csv", cfg.header,
                                ["eps", "relative_residual", "ratio_solution", "ratio_random_shape"], prow))
    if cfg.n >= 3 and cfg.p >= params.critical_exponent:
        grid = np.geomspace(cfg.eps_lo, cfg.eps_hi, cfg.count) if cfg.spacing == "log" \
            else np.linspace(cfg.eps_lo, cfg.eps_hi, cfg.count)
        rows = []
        for e in grid:
            v = nonexistence_certificate(params, float(e), seed=cfg.seed)
            rows.append([e, v.coefficient, v.constants.c_geo, v.eps_bar, v.kind])
        paths.append(write_rows(out / "certificate.csv", cfg.header,
                                ["eps", "coefficient", "c_geo", "eps_bar", "verdict"], rows))
    return paths


def _oracle_row(N, pair):
    n, p = pair
    vals = oracles.radial_oracle(n, p, N)
    return [n, p, vals["U0"], vals["dU1"], vals["mu0"], vals["mu1"]]


def cmd_fixtures(cfg: RunConfig, out: Path) -> list:
    """Run every brute-force oracle and write the golden files."""
    target = Path(cfg.fixtures)
    hdr = cfg.header
    radial = _map(cfg, partial(_oracle_row, cfg.oracle_grid), ORACLE_PAIRS)
    paths = [write_rows(target / "radial_oracle.csv", hdr, ["n", "p", "U0", "dU1", "mu0", "mu1"], radial)]
    mu = {(r[0], r[1]): (r[4], r[5]) for r in radial}
    mu0, mu1 = mu[(1, 3.0)]

    torus = oracles.torus_enumeration((2 * math.pi, 2 * math.pi), 60)
    paths.append(write_rows(target / "torus_spectrum.csv", hdr, ["index", "eigenvalue"], enumerate(torus)))

    lams = [float(j * j) for j in range(40)]
    lattice = oracles.lattice_brute_force([mu0, mu1], lams, 0.3, 100.0)
    paths.append(write_rows(target / "lattice_eps0.3.csv", hdr, ["value", "i", "j"],
                            [[v, i, j] for v, i, j in lattice]))

    windows = [(0.05, 1.0), (0.01, 1.0), (0.1, 0.5)]
    paths.append(write_rows(target / "circle_resonance_count.csv", hdr, ["eps_min", "eps_max", "count"],
                            [[a, b, oracles.circle_resonance_count(mu0, 1.0, a, b)] for a, b in windows]))

    eps_list = [0.05, 0.1, 0.2, 0.3, 1.0, 3.0]
    paths.append(write_rows(target / "circle_morse_count.csv", hdr, ["eps", "count"],
                            [[e, oracles.circle_morse_count(mu0, 1.0, e)] for e in eps_list]))

    weyl = [[lam, sum(1 for j in range(-10, 11) if j * j <= lam)] for lam in (0.5, 1.0, 4.5, 10.0, 24.9)]
    paths.append(write_rows(target / "circle_weyl_count.csv", hdr, ["lam", "count"], weyl))
    return paths


COMMANDS = {
    "ground-state": cmd_ground_state,
    "spectrum": cmd_spectrum,
    "resonance": cmd_resonance,
    "morse-sweep": cmd_morse_sweep,
    "construct": cmd_construct,
    "kato": cmd_kato,
    "pohozaev": cmd_pohozaev,
    "fixtures": cmd_fixtures,
}


def run(subcommand: str, cfg: RunConfig, out=None) -> list:
    """Execute one subcommand (or ``all``) and return the written paths."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand '{subcommand}'")
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if subcommand == "all":
        # radial pipelines need a subcritical exponent, the tube pipelines n = 1
        names = []
        if _params(cfg).subcritical:
            names = ["ground-state", "spectrum", "resonance"]
            if cfg.n == 1:
                names += ["morse-sweep", "construct", "kato"]
        names.append("pohozaev")
    else:
        names = [subcommand]
    paths = []
    for name in names:
        try:
            paths.extend(COMMANDS[name](cfg, out))
        except TubeError as exc:
            raise type(exc)(f"{name}: {exc}") from exc
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tubesol", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="flat TOML run configuration")
    parser.add_argument("--out", help="output directory (overrides the 'out' key)")
    parser.add_argument("--seed", type=int, help="seed for random test fields (overrides the 'seed' key)")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="replace one config value; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out='{args.out}'")
    try:
        cfg = load_config(args.config, overrides)
        paths = run(args.subcommand, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TubeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
