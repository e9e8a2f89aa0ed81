"""Expected returns, break-even premiums and premium root search.

All Monte Carlo returns are per capita (divide the cohort return by ``N``);
pass ``per_capita=False`` to get the cohort total ``R(N, p)``.

Continuous-time discounting ``int_0^inf e^{-rt} h(t) dt`` is estimated by
time randomisation: every path carries its own horizon ``tau ~ Exp(r)`` and
contributes ``h(tau) / r``.  Killing rates enter through path features (region
occupation times for step rates, ``int X`` and elapsed time for affine rates),
so one simulation serves every premium level.  That common-random-numbers
structure makes the Monte Carlo objective continuous in ``p``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (BackendMismatch, DegenerateDenominator, NegativeRateEncountered,
                     TailBoundViolated)
from .processes import (AffineRate, AffineSurrender, BrownianDrift, DiffusionSpec, RateFunction,
                        RngStream, SquaredBessel2, StepRate, StepSurrender, SurrenderFamily,
                        run_batches, time_grid)
from .thermodynamic import InitialMeasure, check_density_model

BACKENDS = ("mc", "bm-step", "bessel")


@dataclass(frozen=True)
class ContractTerms:
    A: float = 1.0
    r: float = 0.05
    p: float = 0.0

    def __post_init__(self):
        if not self.A >= 0:
            raise ValueError("sum insured A must be >= 0")
        if not self.r > 0:
            raise ValueError("discount rate r must be > 0")


@dataclass(frozen=True)
class ReturnEstimate:
    value: float
    std_error: float
    backend: str

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class RootReport:
    roots: list
    bracket_log: list
    status: str  # "UNIQUE", "MULTIPLE" or "NONE_FOUND"
    residuals: list = field(default_factory=list)
    brackets: list = field(default_factory=list)


def _sampler(initial) -> Callable:
    return lambda gen, size: np.asarray(initial.ppf(gen.random(size)), dtype=float)


def _cohort_size(initial) -> int:
    return initial.N if isinstance(initial, InitialMeasure) else 1


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    n = len(vals)
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def _ratio(num: np.ndarray, den: np.ndarray, scale: float = 1.0) -> ReturnEstimate:
    """Ratio of means with a delta-method standard error."""
    n = len(num)
    mn, md = num.mean(), den.mean()
    _, se_den = _mean_se(den)
    if md <= 3 * se_den:
        raise DegenerateDenominator(f"denominator {md:.3g} within 3 standard errors of 0")
    q = mn / md
    resid = num - q * den
    se = float(resid.std(ddof=1) / math.sqrt(n) / abs(md)) if n > 1 else 0.0
    return ReturnEstimate(float(scale * q), abs(scale) * se, "mc")


# ---------------------------------------------------------------------------
# Continuous time: discounted path functionals


def _template(D) -> RateFunction | None:
    if D is None:
        return None
    if isinstance(D, (StepSurrender, AffineSurrender)):
        return D.at(0.0)
    return D


@dataclass
class DiscountedSample:
    """Per-path functionals up to an independent ``Exp(r)`` horizon ``tau``."""

    r: float
    V: RateFunction
    D: SurrenderFamily | RateFunction | None
    x0: np.ndarray
    tau: np.ndarray
    x_tau: np.ndarray
    feat_v: np.ndarray
    feat_d: np.ndarray

    @property
    def n(self) -> int:
        return len(self.tau)

    def surrender_rate(self, p: float) -> RateFunction | None:
        if self.D is None:
            return None
        return self.D.at(p) if isinstance(self.D, (StepSurrender, AffineSurrender)) else self.D

    def weights(self, p: float = 0.0) -> np.ndarray:
        log_w = self.feat_v @ self.V.coefficients()
        D = self.surrender_rate(p)
        if D is not None:
            log_w = log_w + self.feat_d @ D.coefficients()
        return np.exp(-log_w)

    def revenue(self, p: float = 0.0) -> np.ndarray:
        """Samples of ``int_0^inf e^{-rt} (survival weight) dt``."""
        return self.weights(p) / self.r

    def expenditure(self, p: float = 0.0) -> np.ndarray:
        """Samples of ``int_0^inf e^{-rt} V(X_t) (survival weight) dt``."""
        return self.V(self.x_tau) * self.weights(p) / self.r

    def negative_fraction(self, p: float) -> float:
        """Discount-weighted fraction of time with a negative surrender rate.

        ``X_tau`` samples the ``r e^{-rt}``-weighted occupation law of the path.
        """
        D = self.surrender_rate(p)
        if D is None:
            return 0.0
        return float(np.mean(D(self.x_tau) < 0))


def simulate_discounted(model: DiffusionSpec, initial, V: RateFunction, D, r: float,
                        n_paths: int, dt: float, rng: RngStream,
                        threads: int | None = None) -> DiscountedSample:
    """Simulate ``n_paths`` paths, each to its own ``Exp(r)`` horizon.

    Paths advance with exact increments of length ``min(dt, tau - t)``; rate
    integrals are left-endpoint sums.  ``initial`` is a density or lattice
    measure sampled through its quantile function.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    check_density_model(initial, model)
    Dt = _template(D)
    nd = Dt.n_features if Dt is not None else 0
    sample_x0 = _sampler(initial)

    def work(start, size, gen):
        x0 = sample_x0(gen, size)
        tau = gen.exponential(1.0 / r, size)
        # longest horizons first, so the paths still running form a prefix
        order = np.argsort(-tau, kind="stable")
        x0, tau = x0[order], tau[order]
        state = model.initial_state(x0)
        fv = np.zeros((size, V.n_features))
        fd = np.zeros((size, nd))
        x_tau = np.empty(size)
        t = 0.0
        n_act = size
        while n_act:
            st = state[:n_act]
            x = model.observe(st)
            left = tau[:n_act] - t
            h = np.minimum(left, dt)
            fv[:n_act] += h[:, None] * V.features(x)
            if nd:
                fd[:n_act] += h[:, None] * Dt.features(x)
            state[:n_act] = model.advance(st, h, gen)
            t += dt
            done = int(np.searchsorted(-tau[:n_act], -t, side="left"))
            # paths with tau <= t have reached their horizon (tau sorted descending)
            x_tau[done:n_act] = model.observe(state[done:n_act])
            n_act = done
        return x0, tau, x_tau, fv, fd

    parts = run_batches(n_paths, work, rng, threads)
    x0, tau, x_tau, fv, fd = (np.concatenate([p[i] for p in parts]) for i in range(5))
    return DiscountedSample(r, V, D, x0, tau, x_tau, fv, fd)


def expected_return_continuous(terms: ContractTerms, model: DiffusionSpec, V: RateFunction, initial,
                               n_paths: int = 100_000, dt: float = 0.01, rng: RngStream = RngStream(0),
                               per_capita: bool = True, threads: int | None = None) -> ReturnEstimate:
    """Continuous-premium expected return without surrender."""
    sample = simulate_discounted(model, initial, V, None, terms.r, n_paths, dt, rng, threads)
    vals = terms.p * sample.revenue() - terms.A * sample.expenditure()
    scale = 1 if per_capita else _cohort_size(initial)
    m, se = _mean_se(vals)
    return ReturnEstimate(scale * m, scale * se, "mc")


def premium_continuous(model: DiffusionSpec, V: RateFunction, initial, A: float = 1.0, r: float = 0.05,
                       n_paths: int = 100_000, dt: float = 0.01, rng: RngStream = RngStream(0),
                       backend: str = "mc", threads: int | None = None) -> ReturnEstimate:
    """Break-even continuous premium: discounted claims over discounted exposure.

    Numerator and denominator share paths.  ``backend="bm-step"`` evaluates
    both exactly through the step-rate resolvents.
    """
    if backend == "bm-step":
        from .bm_step import StepModelConfig, premium_bm
        _require_bm(model, V, None)
        cfg = StepModelConfig.from_rates(model, V, None, r)
        if isinstance(initial, InitialMeasure):
            return ReturnEstimate(premium_bm(cfg, A=A, measure=initial), 0.0, "bm-step")
        return ReturnEstimate(premium_bm(cfg, density=initial, A=A), 0.0, "bm-step")
    if backend != "mc":
        raise BackendMismatch(f"continuous premium supports backends 'mc' and 'bm-step', not {backend!r}")
    sample = simulate_discounted(model, initial, V, None, r, n_paths, dt, rng, threads)
    return _ratio(sample.expenditure(), sample.revenue(), A)


# ---------------------------------------------------------------------------
# Discrete time


def tail_horizon(p: float, A: float, r: float, N: int = 1, tail_tol: float = 1e-8) -> int:
    """Smallest integer horizon with ``e^{-rT} (pN + AN) / (1 - e^{-r}) <= tail_tol``."""
    bound = (p * N + A * N) / (1 - math.exp(-r))
    if bound <= tail_tol:
        return 1
    return max(1, math.ceil(math.log(bound / tail_tol) / r))


@dataclass
class DiscreteSample:
    """Per-path discounted exposure and discounted death probability increments."""

    exposure: np.ndarray  # sum_{t=0}^{T} e^{-rt} W_t
    claims: np.ndarray  # sum_{t=1}^{T} e^{-rt} (W_{t-1} - W_t)


def simulate_discrete(model: DiffusionSpec, initial, V: RateFunction, r: float, horizon: int,
                      n_paths: int, dt: float, rng: RngStream, threads: int | None = None,
                      stop_tol: float = 0.0) -> DiscreteSample:
    """Discounted exposure and claims per path up to ``horizon`` years.

    A batch stops early once ``max(W_t) e^{-rt} / (1 - e^{-r}) <= stop_tol``;
    survival weights never increase, so this bounds what the remaining years
    could add per unit of premium or benefit.
    """
    check_density_model(initial, model)
    tail_factor = 1.0 / (1.0 - math.exp(-r))
    steps_per_unit = max(1, int(round(1.0 / dt)))
    h = 1.0 / steps_per_unit
    sample_x0 = _sampler(initial)

    def work(start, size, gen):
        state = model.initial_state(sample_x0(gen, size))
        log_w = np.zeros(size)
        exposure = np.ones(size)
        claims = np.zeros(size)
        w_prev = np.ones(size)
        for t in range(1, horizon + 1):
            for _ in range(steps_per_unit):
                log_w += V(model.observe(state)) * h
                state = model.advance(state, h, gen)
            w = np.exp(-log_w)
            disc = math.exp(-r * t)
            exposure += disc * w
            claims += disc * (w_prev - w)
            w_prev = w
            if stop_tol > 0 and w.max() * disc * tail_factor <= stop_tol:
                break
        return exposure, claims

    parts = run_batches(n_paths, work, rng, threads)
    return DiscreteSample(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def _discrete_horizon(terms_p: float, A: float, r: float, N: int, horizon, tail_tol: float) -> int:
    need = tail_horizon(terms_p, A, r, N, tail_tol)
    if horizon is None:
        return need
    if horizon < need:
        raise TailBoundViolated(f"horizon {horizon} < {need} needed for tail tolerance {tail_tol}")
    return int(horizon)


def expected_return_discrete(terms: ContractTerms, model: DiffusionSpec, V: RateFunction, initial,
                             D=None, horizon: int | None = None, tail_tol: float = 1e-8,
                             n_paths: int = 100_000, dt: float = 0.01, rng: RngStream = RngStream(0),
                             per_capita: bool = True, threads: int | None = None) -> ReturnEstimate:
    """Discrete-premium expected return, premiums and claims at integer times.

    Surrender is only modelled in continuous time; ``D`` must be ``None``.
    """
    if D is not None:
        raise ValueError("the discrete-time model has no surrender; use expected_return_surrender")
    N = _cohort_size(initial)
    T = _discrete_horizon(terms.p, terms.A, terms.r, N, horizon, tail_tol)
    stop = tail_tol / ((terms.p + terms.A) * N) if horizon is None and terms.p + terms.A > 0 else 0.0
    sample = simulate_discrete(model, initial, V, terms.r, T, n_paths, dt, rng, threads, stop)
    vals = terms.p * sample.exposure - terms.A * sample.claims
    scale = 1 if per_capita else N
    m, se = _mean_se(vals)
    return ReturnEstimate(scale * m, scale * se, "mc")


def premium_discrete(model: DiffusionSpec, V: RateFunction, initial, A: float = 1.0, r: float = 0.05,
                     horizon: int | None = None, tail_tol: float = 1e-8, n_paths: int = 100_000,
                     dt: float = 0.01, rng: RngStream = RngStream(0),
                     threads: int | None = None) -> ReturnEstimate:
    """Break-even discrete premium (claims over exposure, common paths)."""
    N = _cohort_size(initial)
    # the tail bound is evaluated at a premium of A, which dominates the break-even premium
    T = _discrete_horizon(A, A, r, N, horizon, tail_tol)
    if A == 0:
        return ReturnEstimate(0.0, 0.0, "mc")
    stop = tail_tol / (2 * A * N) if horizon is None else 0.0
    sample = simulate_discrete(model, initial, V, r, T, n_paths, dt, rng, threads, stop)
    return _ratio(sample.claims, sample.exposure, A)


# ---------------------------------------------------------------------------
# Surrender model


class SurrenderEstimator:
    """Monte Carlo ``VAR_s(p)`` on one fixed set of paths (common random numbers)."""

    def __init__(self, sample: DiscountedSample, A: float, negative_threshold: float = 1.0):
        self.sample = sample
        self.A = A
        self.negative_threshold = negative_threshold

    def samples(self, p: float) -> np.ndarray:
        s = self.sample
        frac = s.negative_fraction(p)
        if frac > self.negative_threshold:
            raise NegativeRateEncountered(
                f"surrender rate negative on {frac:.1%} of discounted time at p={p}")
        if frac > 0:
            warnings.warn(f"surrender rate negative on {frac:.2%} of discounted time at p={p}",
                          RuntimeWarning, stacklevel=3)
        return (p - self.A * s.V(s.x_tau)) * s.weights(p) / s.r

    def __call__(self, p: float) -> ReturnEstimate:
        m, se = _mean_se(self.samples(p))
        return ReturnEstimate(m, se, "mc")


def expected_return_surrender(terms: ContractTerms, model: DiffusionSpec, V: RateFunction,
                              D: SurrenderFamily | None, initial, n_paths: int = 100_000,
                              dt: float = 0.01, rng: RngStream = RngStream(0),
                              negative_threshold: float = 1.0, per_capita: bool = True,
                              threads: int | None = None) -> ReturnEstimate:
    """Expected return with mortality and surrender killing at premium ``terms.p``.

    ``negative_threshold`` is the largest tolerated discount-weighted fraction of
    time with ``D < 0``.  Beyond it the call raises; below it any negativity
    only warns.
    """
    sample = simulate_discounted(model, initial, V, D, terms.r, n_paths, dt, rng, threads)
    est = SurrenderEstimator(sample, terms.A, negative_threshold)(terms.p)
    if per_capita:
        return est
    N = _cohort_size(initial)
    return ReturnEstimate(N * est.value, N * est.std_error, "mc")


@dataclass
class SurrenderProblem:
    """Everything needed to evaluate ``VAR_s(p)`` with any backend."""

    model: DiffusionSpec
    V: RateFunction
    D: SurrenderFamily | None
    initial: object  # LimitDensity or InitialMeasure
    A: float = 1.0
    r: float = 0.05
    n_paths: int = 100_000
    dt: float = 0.01
    rng: RngStream = RngStream(0)
    threads: int | None = None
    negative_threshold: float = 1.0
    _mc: SurrenderEstimator | None = field(default=None, init=False, repr=False)

    def mc_estimator(self) -> SurrenderEstimator:
        if self._mc is None:
            sample = simulate_discounted(self.model, self.initial, self.V, self.D, self.r,
                                         self.n_paths, self.dt, self.rng, self.threads)
            self._mc = SurrenderEstimator(sample, self.A, self.negative_threshold)
        return self._mc


def _require_bm(model, V, D) -> None:
    if not isinstance(model, BrownianDrift):
        raise BackendMismatch(f"backend 'bm-step' needs a BrownianDrift model, got {type(model).__name__}")
    if not isinstance(V, StepRate) or not (D is None or isinstance(D, (StepSurrender, StepRate))):
        raise BackendMismatch("backend 'bm-step' needs step mortality and step surrender rates")


def _require_bessel(model, V, D, initial) -> None:
    from .thermodynamic import ExponentialDensity
    if not isinstance(model, SquaredBessel2):
        raise BackendMismatch(f"backend 'bessel' needs a SquaredBessel2 model, got {type(model).__name__}")
    if not isinstance(V, AffineRate) or not (D is None or isinstance(D, AffineSurrender)):
        raise BackendMismatch("backend 'bessel' needs affine mortality and affine surrender rates")
    if not isinstance(initial, ExponentialDensity):
        raise BackendMismatch("backend 'bessel' needs an exponential limit density")


def check_backend(problem: SurrenderProblem, backend: str) -> None:
    if backend == "bm-step":
        _require_bm(problem.model, problem.V, problem.D)
    elif backend == "bessel":
        _require_bessel(problem.model, problem.V, problem.D, problem.initial)
    elif backend != "mc":
        raise BackendMismatch(f"unknown backend {backend!r}")


def var_surrender(p: float, backend: str, problem: SurrenderProblem) -> ReturnEstimate:
    """Per-capita ``VAR_s(p)`` from the chosen backend."""
    check_backend(problem, backend)
    if backend == "mc":
        est = problem.mc_estimator()
        est.negative_threshold = problem.negative_threshold
        return est(p)
    if backend == "bm-step":
        from .bm_step import StepModelConfig, var_bm
        cfg = StepModelConfig.from_rates(problem.model, problem.V, problem.D, problem.r, p)
        if isinstance(problem.initial, InitialMeasure):
            value = var_bm(p, cfg, A=problem.A, measure=problem.initial)
        else:
            value = var_bm(p, cfg, problem.initial, A=problem.A)
        return ReturnEstimate(value, 0.0, "bm-step")
    from .bessel2sb import Bessel2Config, var_bessel
    return ReturnEstimate(var_bessel(p, Bessel2Config.from_problem(problem)), 0.0, "bessel")


# ---------------------------------------------------------------------------
# Root search


def solve_premium(objective: Callable[[float], ReturnEstimate | float], p_max_initial: float = 1.0,
                  growth: float = 2.0, grid_size: int = 32, tolerance: float = 1e-10,
                  max_expansions: int = 20, xtol: float = 1e-14, max_bisections: int = 200) -> RootReport:
    """Find all sign changes of ``objective`` on ``[0, p_max]`` and bisect each.

    ``p_max`` starts at ``p_max_initial`` and grows by ``growth`` (scanning the
    new stretch on the same grid density) until a sign change shows up or
    ``max_expansions`` is exhausted.  The bracket log records every grid
    interval with the signs at its ends.
    """

    def f(p):
        v = objective(p)
        return v.value if isinstance(v, ReturnEstimate) else float(v)

    grid = list(np.linspace(0.0, p_max_initial, grid_size + 1))
    values = [f(p) for p in grid]
    log = []
    brackets = []

    def scan(lo_index):
        for i in range(lo_index, len(grid) - 1):
            a, b, fa, fb = grid[i], grid[i + 1], values[i], values[i + 1]
            log.append(((a, b), (int(np.sign(fa)), int(np.sign(fb)))))
            if fa == 0:
                brackets.append((a, a))
            elif fa * fb < 0:
                brackets.append((a, b))
        if values[-1] == 0:
            brackets.append((grid[-1], grid[-1]))

    scan(0)
    p_max = p_max_initial
    expansions = 0
    while not brackets and expansions < max_expansions:
        expansions += 1
        new_max = p_max * growth
        new = list(np.linspace(p_max, new_max, grid_size + 1)[1:])
        start = len(grid) - 1
        grid += new
        values += [f(p) for p in new]
        p_max = new_max
        scan(start)

    roots, residuals, kept = [], [], []
    for a, b in brackets:
        if a == b:
            root, res = a, 0.0
        else:
            fa = f(a)
            lo, hi = a, b
            root = 0.5 * (lo + hi)
            res = f(root)
            for _ in range(max_bisections):
                if abs(res) <= tolerance or hi - lo <= xtol * max(1.0, abs(root)):
                    break
                if np.sign(res) == np.sign(fa):
                    lo, fa = root, res
                else:
                    hi = root
                root = 0.5 * (lo + hi)
                res = f(root)
            if abs(res) > tolerance:
                # bracket collapsed onto a jump rather than a zero
                log.append(((lo, hi), ("no-zero", float(res))))
                continue
        roots.append(float(root))
        residuals.append(float(res))
        kept.append((a, b))
    status = "NONE_FOUND" if not roots else ("UNIQUE" if len(roots) == 1 else "MULTIPLE")
    return RootReport(roots, log, status, residuals, kept)
