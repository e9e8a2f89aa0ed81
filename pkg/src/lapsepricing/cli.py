"""Command-line front end: ``lapsepricing {price,solve,validate,sweep-n}``.

Runs are described by a JSON config (schema in the README).  Results go to
CSV on stdout or ``--out``.  Exit status is 0 on success, 2 for invalid
configurations and 3 when a backend fails at run time.  ``validate`` exits 1
when a check fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import numbers
import sys
from dataclasses import dataclass, field

from .bessel2sb import Bessel2Config, check_surrender_positivity
from .errors import BackendMismatch, LapsePricingError
from .pricing import BACKENDS, SurrenderProblem, check_backend, solve_premium, var_surrender
from .processes import (AffineRate, AffineSurrender, BrownianDrift, RngStream, SquaredBessel2,
                        StepRate, StepSurrender)
from .thermodynamic import (ExponentialDensity, GaussianDensity, HistogramDensity,
                            build_lattice_measure, check_density_model)
from .validation import DEFAULT_CONFIG, all_passed, n_sweep, run_validation

log = logging.getLogger("lapsepricing")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_BACKEND = 0, 1, 2, 3

PRICE_HEADER = ["p", "value", "std_error", "backend"]
SOLVE_HEADER = ["root", "bracket_lo", "bracket_hi", "residual", "status"]
VALIDATE_HEADER = ["check", "status", "discrepancy", "tolerance", "detail"]
SWEEP_HEADER = ["N", "premium", "std_error"]


class ConfigError(Exception):
    pass


def fmt(x) -> str:
    """Locale-independent, round-trippable number formatting."""
    if isinstance(x, str):
        return x
    if isinstance(x, numbers.Integral) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


# ---------------------------------------------------------------------------
# Config parsing


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing key {where}.{key}")
    return d[key]


def parse_model(spec: dict):
    kind = _need(spec, "kind", "model")
    if kind == "brownian":
        return BrownianDrift(float(spec.get("a", 1.0)), float(spec.get("b", 0.0)))
    if kind == "bessel2":
        return SquaredBessel2()
    raise ConfigError(f"unknown model kind {kind!r}")


def parse_rate(spec: dict, where: str):
    kind = _need(spec, "kind", where)
    if kind == "step":
        return StepRate(tuple(spec.get("knots", [])), tuple(_need(spec, "values", where)))
    if kind == "affine":
        return AffineRate(float(_need(spec, "slope", where)), float(_need(spec, "intercept", where)))
    raise ConfigError(f"unknown {where} kind {kind!r}")


def parse_surrender(spec: dict | None):
    if spec is None:
        return None
    kind = _need(spec, "kind", "surrender")
    if kind == "step":
        offsets = tuple(_need(spec, "offsets", "surrender"))
        return StepSurrender(tuple(spec.get("knots", [])), offsets,
                             tuple(spec.get("sensitivities", [0.0] * len(offsets))))
    if kind == "affine":
        return AffineSurrender(tuple(spec.get("phi", [0.0, 0.0])), tuple(spec.get("rho", [0.0, 0.0])))
    raise ConfigError(f"unknown surrender kind {kind!r}")


def parse_density(spec: dict):
    kind = _need(spec, "kind", "density")
    if kind == "exponential":
        return ExponentialDensity(float(spec.get("rate", 1.0)))
    if kind == "gaussian":
        return GaussianDensity(float(spec.get("mean", 0.0)), float(spec.get("stddev", 1.0)))
    if kind == "histogram":
        return HistogramDensity(tuple(_need(spec, "edges", "density")), tuple(_need(spec, "masses", "density")))
    raise ConfigError(f"unknown density kind {kind!r}")


@dataclass
class RunConfig:
    problem: SurrenderProblem
    backend: str
    premiums: list
    search: dict
    sweep: dict
    seed: int
    raw: dict = field(repr=False, default_factory=dict)


def load_config(raw: dict, seed: int | None = None, backend: str | None = None,
                threads: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig`; raises :class:`ConfigError` on any inconsistency."""
    try:
        model = parse_model(_need(raw, "model", "config"))
        V = parse_rate(_need(raw, "mortality", "config"), "mortality")
        D = parse_surrender(raw.get("surrender"))
        density = parse_density(_need(raw, "density", "config"))
        contract = raw.get("contract", {})
        sim = raw.get("simulation", {})
        seed = int(raw.get("seed", 0)) if seed is None else seed
        backend = raw.get("backend", "mc") if backend is None else backend
        if backend not in BACKENDS:
            raise ConfigError(f"unknown backend {backend!r}; choose from {', '.join(BACKENDS)}")
        N = raw.get("N")
        initial = build_lattice_measure(density, int(N)) if N else density
        check_density_model(density, model)
        problem = SurrenderProblem(model, V, D, initial, float(contract.get("A", 1.0)),
                                   float(contract.get("r", 0.05)), int(sim.get("n_paths", 100_000)),
                                   float(sim.get("dt", 0.01)), RngStream(seed), threads,
                                   float(sim.get("negative_threshold", 1.0)))
        if problem.r <= 0 or problem.A < 0:
            raise ConfigError("contract needs r > 0 and A >= 0")
        if problem.n_paths < 2 and backend == "mc":
            raise ConfigError("the mc backend needs simulation.n_paths >= 2")
        try:
            check_backend(problem, backend)
        except BackendMismatch as exc:
            raise ConfigError(f"backend {backend!r} incompatible with model {type(model).__name__}: {exc}")
        if backend == "bessel" and N:
            raise ConfigError("backend 'bessel' evaluates the limit density; drop N")
        premiums = [float(p) for p in raw.get("premiums", [])]
        return RunConfig(problem, backend, premiums, dict(raw.get("search", {})),
                         dict(raw.get("sweep", {})), seed, raw)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _read_json(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands


def _csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _bessel_positivity(run: RunConfig, p: float) -> None:
    if run.backend == "bessel" and run.problem.D is not None:
        check_surrender_positivity(p, Bessel2Config.from_problem(run.problem))


def cmd_price(run: RunConfig) -> str:
    rows = []
    for p in run.premiums:
        _bessel_positivity(run, p)
        est = var_surrender(p, run.backend, run.problem)
        rows.append((p, est.value, est.std_error, est.backend))
    return _csv(PRICE_HEADER, rows)


def cmd_solve(run: RunConfig) -> str:
    s = run.search
    report = solve_premium(lambda p: var_surrender(p, run.backend, run.problem),
                           p_max_initial=float(s.get("p_max_initial", 1.0)),
                           growth=float(s.get("growth", 2.0)), grid_size=int(s.get("grid_size", 32)),
                           tolerance=float(s.get("tolerance", 1e-10)),
                           max_expansions=int(s.get("max_expansions", 10)))
    for interval, signs in report.bracket_log:
        log.debug("bracket %s signs %s", interval, signs)
    rows = [(root, lo, hi, res, report.status)
            for root, (lo, hi), res in zip(report.roots, report.brackets, report.residuals)]
    if not rows:
        rows = [("", "", "", "", report.status)]
    return _csv(SOLVE_HEADER, rows)


def cmd_sweep(run: RunConfig) -> str:
    pb = run.problem
    if pb.D is not None:
        raise ConfigError("sweep-n prices the model without surrender; remove 'surrender'")
    density = parse_density(run.raw["density"])
    N_values = [int(n) for n in run.sweep.get("N_values", [10, 100, 1000])]
    res = n_sweep(pb.model, pb.V, density, N_values, pb.A, pb.r, pb.n_paths, pb.dt, pb.rng, pb.threads)
    return _csv(SWEEP_HEADER, [(N, e.value, e.std_error) for N, e in res])


def cmd_validate(raw: dict | None, seed: int | None, threads: int | None,
                 halved_gamma: bool) -> tuple[str, bool]:
    cfg = dict(raw) if raw else None
    n_paths = None
    if cfg is not None and "simulation" in cfg:
        n_paths = int(cfg["simulation"].get("n_paths", DEFAULT_CONFIG["simulation"]["n_paths"]))
    rows = run_validation(cfg, seed, threads, n_paths, halved_gamma)
    body = _csv(VALIDATE_HEADER, [(r.check, r.status, r.discrepancy, r.tolerance, r.detail) for r in rows])
    return body, all_passed(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lapsepricing", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    common.add_argument("--out", help="write CSV here instead of stdout")
    common.add_argument("--backend", choices=BACKENDS, help="override the config backend")
    common.add_argument("--threads", type=int, help="worker threads for Monte Carlo batches")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="expected return at each configured premium")
    sub.add_parser("solve", parents=[common], help="break-even premiums by scan and bisection")
    sub.add_parser("sweep-n", parents=[common], help="continuous premium against cohort size N")
    val = sub.add_parser("validate", parents=[common], help="run the oracle-versus-analytic checks")
    val.add_argument("--inject-gamma-factor2", action="store_true",
                     help="use the halved particular constant in the step-rate backend")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "validate":
            raw = _read_json(args.config) if args.config else None
            body, ok = cmd_validate(raw, args.seed, args.threads, args.inject_gamma_factor2)
            status = EXIT_OK if ok else EXIT_FAILED
        else:
            run = load_config(_read_json(args.config), args.seed, args.backend, args.threads)
            command = {"price": cmd_price, "solve": cmd_solve, "sweep-n": cmd_sweep}[args.command]
            body, status = command(run), EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LapsePricingError as exc:
        print(f"backend error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_BACKEND
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(body)
    else:
        sys.stdout.write(body)
    return status


if __name__ == "__main__":
    sys.exit(main())
