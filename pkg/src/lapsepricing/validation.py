"""Oracle-versus-analytic checks behind the ``validate`` command.

Every check returns :class:`CheckResult` rows.  Monte Carlo checks compare a
discrepancy against a multiple of the standard error and are reported
``SKIPPED`` when the path budget is zero.  ``INFO`` rows carry diagnostics
that never affect the exit status.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .bessel2sb import (Bessel2Config, i_gamma_shifted_series, i_gamma_quadrature, i_gamma_series,
                        var_bessel, var_bessel_alternate)
from .bm_step import StepModelConfig, solve_resolvents
from .mc_oracle import lemma_a1_check, resolvent_mc
from .pricing import SurrenderProblem, premium_continuous, var_surrender
from .processes import AffineRate, AffineSurrender, BrownianDrift, RngStream, SquaredBessel2, StepRate
from .thermodynamic import ExponentialDensity, build_lattice_measure

PASS, FAIL, SKIPPED, INFO = "PASS", "FAIL", "SKIPPED", "INFO"


@dataclass(frozen=True)
class CheckResult:
    check: str
    status: str
    discrepancy: float
    tolerance: float
    detail: str = ""


def _sigma_row(name: str, diff: float, se: float, k: float, detail: str) -> CheckResult:
    z = abs(diff) / se if se > 0 else (0.0 if diff == 0 else math.inf)
    tol = k if se > 0 else 1e-12
    ok = z <= k if se > 0 else abs(diff) <= 1e-12
    return CheckResult(name, PASS if ok else FAIL, z if se > 0 else abs(diff), tol, detail)


def check_bm_step_vs_mc(cfg: dict, n_paths: int, seed: int, threads: int | None,
                        halved_gamma: bool = False) -> list[CheckResult]:
    name = "bm_step_vs_mc"
    if n_paths == 0:
        return [CheckResult(name, SKIPPED, 0.0, 0.0, "zero path budget")]
    model = BrownianDrift(cfg["a"], cfg["b"])
    V = StepRate(cfg["knots"], cfg["mortality"])
    D = StepRate(cfg["knots"], cfg["surrender"])
    r = cfg["r"]
    zV, z1 = solve_resolvents(StepModelConfig.from_rates(model, V, D, r), halved_gamma=halved_gamma)
    rows = []
    for i, y in enumerate(cfg["points"]):
        ev, e1 = resolvent_mc(model, V, D, r, y, n_paths=n_paths, dt=cfg["dt"],
                              rng=RngStream(seed, 100 + i), threads=threads)
        rows.append(_sigma_row(f"{name}[z_V,y={y:g}]", ev.value - zV(y), ev.std_error, 3.0,
                               f"mc={ev.value:.6g} analytic={float(zV(y)):.6g}"))
        rows.append(_sigma_row(f"{name}[z_1,y={y:g}]", e1.value - z1(y), e1.std_error, 3.0,
                               f"mc={e1.value:.6g} analytic={float(z1(y)):.6g}"))
    return rows


def check_bessel_series(grid: list[float]) -> list[CheckResult]:
    worst = 0.0
    for g, c, lam in itertools.product(grid, grid, grid):
        worst = max(worst, abs(i_gamma_series(g, c, lam) - i_gamma_quadrature(g, c, lam)))
    rows = [CheckResult("bessel_series_vs_quadrature", PASS if worst <= 1e-8 else FAIL, worst, 1e-8,
                        f"{len(grid) ** 3} grid points")]
    g0 = grid[len(grid) // 2]
    alternate = i_gamma_shifted_series(g0, g0, g0)
    ref = i_gamma_quadrature(g0, g0, g0)
    rows.append(CheckResult("bessel_shifted_series_form", INFO, abs(alternate - ref), 0.0,
                            f"alternate={alternate:.6g} quadrature={ref:.6g} at gamma=c=lam={g0:g}"))
    return rows


def check_bessel_vs_mc(cfg: dict, n_paths: int, seed: int, threads: int | None) -> list[CheckResult]:
    name = "bessel_vs_mc"
    if n_paths == 0:
        return [CheckResult(name, SKIPPED, 0.0, 0.0, "zero path budget")]
    D = AffineSurrender(tuple(cfg["phi"]), tuple(cfg["rho"]))
    problem = SurrenderProblem(SquaredBessel2(), AffineRate(cfg["m"], cfg["n"]), D,
                               ExponentialDensity(cfg["gamma"]), cfg["A"], cfg["r"], n_paths,
                               cfg["dt"], RngStream(seed, 200), threads)
    bcfg = Bessel2Config.from_problem(problem)
    rows = []
    for p in cfg["premiums"]:
        est = var_surrender(p, "mc", problem)
        exact = var_bessel(p, bcfg)
        rows.append(_sigma_row(f"{name}[p={p:g}]", est.value - exact, est.std_error, 3.0,
                               f"mc={est.value:.6g} closed_form={exact:.6g}"))
        alternate = var_bessel_alternate(p, bcfg)
        rows.append(CheckResult(f"bessel_alternate_assembly[p={p:g}]", INFO,
                                abs(est.value - alternate) / est.std_error, 0.0,
                                f"alternate={alternate:.6g} mc={est.value:.6g}"))
    return rows


def check_lemma_a1(cfg: dict, n_paths: int, seed: int, threads: int | None) -> list[CheckResult]:
    name = "lemma_a1"
    if n_paths == 0:
        return [CheckResult(name, SKIPPED, 0.0, 0.0, "zero path budget")]
    model = BrownianDrift(cfg["a"], cfg["b"])
    lam, r, t = cfg["lambda"], cfg["r"], cfg["t"]
    const = lemma_a1_check(model, StepRate.constant(lam), r, t, 0.0, n_paths, cfg["dt"],
                           RngStream(seed, 300), threads)
    exact = lam / (r + lam) * (1 - math.exp(-(r + lam) * t))
    step = lemma_a1_check(model, StepRate(cfg["knots"], cfg["mortality"]), r, t, 0.0, n_paths,
                          cfg["dt"], RngStream(seed, 301), threads)
    return [
        _sigma_row(f"{name}[constant,lhs_vs_rhs]", const.lhs - const.rhs, const.combined_se, 3.0,
                   f"lhs={const.lhs:.6g} rhs={const.rhs:.6g}"),
        _sigma_row(f"{name}[constant,lhs_vs_exact]", const.lhs - exact, const.lhs_se, 3.0,
                   f"lhs={const.lhs:.6g} exact={exact:.6g}"),
        _sigma_row(f"{name}[step,lhs_vs_rhs]", step.lhs - step.rhs, step.combined_se, 3.0,
                   f"lhs={step.lhs:.6g} rhs={step.rhs:.6g}"),
    ]


def n_sweep(model, V, density, N_values, A: float, r: float, n_paths: int, dt: float,
            rng: RngStream, threads: int | None = None):
    """Continuous premiums for lattice cohorts of each ``N`` and for the limit density.

    All runs share one random stream, so starting points are coupled through
    the quantile functions.
    """
    out = []
    for N in N_values:
        mu = build_lattice_measure(density, N)
        out.append((N, premium_continuous(model, V, mu, A, r, n_paths, dt, rng, threads=threads)))
    out.append((math.inf, premium_continuous(model, V, density, A, r, n_paths, dt, rng, threads=threads)))
    return out


def check_n_sweep(cfg: dict, n_paths: int, seed: int, threads: int | None) -> list[CheckResult]:
    name = "n_sweep_convergence"
    if n_paths == 0:
        return [CheckResult(name, SKIPPED, 0.0, 0.0, "zero path budget")]
    model = BrownianDrift(cfg["a"], cfg["b"])
    V = StepRate(cfg["knots"], cfg["mortality"])
    res = n_sweep(model, V, ExponentialDensity(cfg["gamma"]), cfg["N_values"], cfg["A"], cfg["r"],
                  n_paths, cfg["dt"], RngStream(seed, 400), threads)
    limit = res[-1][1].value
    errs = [abs(est.value - limit) for _, est in res[:-1]]
    ok = all(b < a for a, b in zip(errs, errs[1:]))
    detail = " ".join(f"N={N}:{e:.3g}" for (N, _), e in zip(res, errs))
    return [CheckResult(name, PASS if ok else FAIL, errs[-1], 0.0, detail)]


DEFAULT_CONFIG = {
    "seed": 20240601,
    "simulation": {"n_paths": 20000},
    "bm_step": {"a": 1.0, "b": 0.1, "knots": [-0.5, 0.5], "mortality": [0.05, 0.2, 0.4],
                "surrender": [0.02, 0.05, 0.1], "r": 0.1, "dt": 0.01, "points": [-1.0, 0.0, 1.0]},
    "bessel": {"m": 1.0, "n": 0.01, "gamma": 1.0, "phi": [-0.1, 0.0], "rho": [0.02, 0.0],
               "A": 1.0, "r": 0.1, "dt": 0.01, "premiums": [0.0, 1.0]},
    "bessel_grid": [0.5, 0.875, 1.25, 1.625, 2.0],
    "lemma_a1": {"a": 1.0, "b": 0.1, "lambda": 0.2, "r": 0.05, "t": 5.0, "dt": 0.01,
                 "knots": [-0.5, 0.5], "mortality": [0.05, 0.2, 0.4]},
    "n_sweep": {"a": 1.0, "b": 0.0, "knots": [0.5, 1.5], "mortality": [0.05, 0.2, 0.5],
                "gamma": 1.0, "A": 1.0, "r": 0.2, "dt": 0.02, "N_values": [10, 100, 1000]},
}


def run_validation(cfg: dict | None = None, seed: int | None = None, threads: int | None = None,
                   n_paths: int | None = None, halved_gamma: bool = False) -> list[CheckResult]:
    cfg = DEFAULT_CONFIG if cfg is None else {**DEFAULT_CONFIG, **cfg}
    seed = cfg["seed"] if seed is None else seed
    n = cfg["simulation"]["n_paths"] if n_paths is None else n_paths
    rows = []
    rows += check_bm_step_vs_mc(cfg["bm_step"], n, seed, threads, halved_gamma)
    rows += check_bessel_series(cfg["bessel_grid"])
    rows += check_bessel_vs_mc(cfg["bessel"], n, seed, threads)
    rows += check_lemma_a1(cfg["lemma_a1"], n, seed, threads)
    rows += check_n_sweep(cfg["n_sweep"], n, seed, threads)
    return rows


def all_passed(rows: list[CheckResult]) -> bool:
    return all(row.status != FAIL for row in rows)
