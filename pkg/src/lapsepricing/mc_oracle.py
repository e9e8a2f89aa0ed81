"""Brute-force finite cohort simulation.

Each of the ``N`` insureds starts from the lattice measure, follows its own
state path and carries two independent unit-exponential clocks: one for death
(rate ``V``) and one for surrender (rate ``D``).  The contract ends at the
first clock to fire.  Crossing times are located on the piecewise-linear
running integrals, so discounting uses the exact clock time rather than the
grid time.  When both clocks fire inside the same grid step the agent is
counted as dead.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import LatticeMismatch
from .pricing import ContractTerms, ReturnEstimate, _mean_se, simulate_discounted, tail_horizon
from .processes import (DiffusionSpec, RateFunction, RngStream, SurrenderFamily, default_threads,
                        run_batches, time_grid)
from .thermodynamic import InitialMeasure, PointMass

DISCRETE = "discrete"
CONTINUOUS = "continuous"
SURRENDER = "surrender"
MODES = (DISCRETE, CONTINUOUS, SURRENDER)


@dataclass
class CohortLedger:
    """Discounted cash flows of one simulated cohort."""

    N: int
    discounted_revenue: float
    discounted_expenditure: float
    initial: np.ndarray = field(default_factory=lambda: np.empty(0))
    death: np.ndarray = field(default_factory=lambda: np.empty(0))  # inf if not dead in force
    surrender: np.ndarray = field(default_factory=lambda: np.empty(0))  # inf if not surrendered

    @property
    def net(self) -> float:
        return self.discounted_revenue - self.discounted_expenditure

    def in_force(self, t: float) -> int:
        return int(np.count_nonzero((self.death > t) & (self.surrender > t)))


def _resolve_rate(D, p: float) -> RateFunction | None:
    if D is None:
        return None
    return D.at(p) if hasattr(D, "at") else D


def _crossing(cum_prev, inc, clock, t_prev, h):
    """Exact time where a linear ramp from ``cum_prev`` with slope ``inc / h`` hits ``clock``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return t_prev + h * (clock - cum_prev) / inc


def simulate_cohort(N: int, terms: ContractTerms, model: DiffusionSpec, V: RateFunction,
                    D: SurrenderFamily | RateFunction | None, measure: InitialMeasure,
                    mode: str = CONTINUOUS, horizon: float | None = None, dt: float = 0.01,
                    rng: RngStream = RngStream(0), tail_tol: float = 1e-8) -> CohortLedger:
    """Simulate one cohort of ``N`` insureds drawn independently from ``measure``.

    ``CONTINUOUS`` accrues premium at rate ``p`` while in force; ``DISCRETE``
    collects ``p`` at every integer time the insured is in force (time 0
    included) and pays claims at the end of the year of death.  Either way a
    death in force pays ``A``, discounted from the payment time.
    """
    if mode not in (DISCRETE, CONTINUOUS):
        raise ValueError(f"mode must be {DISCRETE!r} or {CONTINUOUS!r}")
    if N == 0:
        return CohortLedger(0, 0.0, 0.0)
    if measure.N != N:
        raise LatticeMismatch(f"measure lattice has N={measure.N}, cohort has N={N}")
    p, A, r = terms.p, terms.A, terms.r
    if horizon is None:
        horizon = tail_horizon(p, A, r, N, tail_tol)
    if mode == DISCRETE:
        horizon = float(math.ceil(horizon))
    k_steps, h = time_grid(dt, horizon)
    Dp = _resolve_rate(D, p)

    gen = rng.generator()
    x0 = np.asarray(measure.ppf(gen.random(N)), dtype=float)
    e_death = gen.exponential(size=N)
    e_surr = gen.exponential(size=N)
    state = model.initial_state(x0)
    cum_v = np.zeros(N)
    cum_d = np.zeros(N)
    death = np.full(N, np.inf)
    surr = np.full(N, np.inf)
    alive = np.ones(N, dtype=bool)
    t = 0.0
    for i in range(k_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x = model.observe(state[idx])
        inc_v = V(x) * h
        inc_d = Dp(x) * h if Dp is not None else np.zeros(idx.size)
        new_v = cum_v[idx] + inc_v
        new_d = cum_d[idx] + inc_d
        hit_v = new_v >= e_death[idx]
        hit_d = (new_d >= e_surr[idx]) & ~hit_v
        if np.any(hit_v):
            j = idx[hit_v]
            death[j] = _crossing(cum_v[j], inc_v[hit_v], e_death[j], t, h)
        if np.any(hit_d):
            j = idx[hit_d]
            surr[j] = _crossing(cum_d[j], inc_d[hit_d], e_surr[j], t, h)
        cum_v[idx] = new_v
        cum_d[idx] = new_d
        alive[idx[hit_v | hit_d]] = False
        state[idx] = model.advance(state[idx], h, gen)
        t = (i + 1) * h

    end = np.minimum(np.minimum(death, surr), horizon)
    if mode == CONTINUOUS:
        revenue = p * float(np.sum(-np.expm1(-r * end))) / r
        expenditure = A * float(np.sum(np.exp(-r * death[np.isfinite(death)])))
    else:
        years = np.arange(0, int(horizon) + 1)
        in_force = (death[:, None] > years) & (surr[:, None] > years)
        revenue = p * float(np.sum(in_force * np.exp(-r * years)))
        pay = np.ceil(death[np.isfinite(death)])
        expenditure = A * float(np.sum(np.exp(-r * pay)))
    assert expenditure <= A * N * (1 + 1e-12)
    return CohortLedger(N, revenue, expenditure, x0, death, surr)


def oracle_return(N: int, terms: ContractTerms, model: DiffusionSpec, V: RateFunction,
                  D: SurrenderFamily | RateFunction | None, measure: InitialMeasure,
                  mode: str = CONTINUOUS, replications: int = 200, horizon: float | None = None,
                  dt: float = 0.01, rng: RngStream = RngStream(0), per_capita: bool = False,
                  threads: int | None = None) -> ReturnEstimate:
    """Mean and standard error of the cohort net value over independent replications.

    ``CONTINUOUS`` and ``DISCRETE`` ignore ``D``; ``SURRENDER`` is the
    continuous ledger with surrender switched on.  Replication ``i`` uses the
    stream ``rng.child(i)``.  The cohort total is returned unless
    ``per_capita`` is set.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ledger_mode = DISCRETE if mode == DISCRETE else CONTINUOUS
    Dm = D if mode == SURRENDER else None

    def one(i):
        return simulate_cohort(N, terms, model, V, Dm, measure, ledger_mode, horizon, dt,
                               rng.child(i)).net

    threads = default_threads() if threads is None else threads
    if threads <= 1:
        nets = [one(i) for i in range(replications)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nets = list(pool.map(one, range(replications)))
    vals = np.asarray(nets) / (N if per_capita and N else 1)
    m, se = _mean_se(vals)
    return ReturnEstimate(m, se, "mc")


@dataclass(frozen=True)
class LemmaCheck:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    diff_se: float  # standard error of the paired difference

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)


def lemma_a1_check(model: DiffusionSpec, V: RateFunction, r: float, t: float, x0: float,
                   n_paths: int = 100_000, dt: float = 0.01, rng: RngStream = RngStream(0),
                   threads: int | None = None) -> LemmaCheck:
    """Two estimators of ``E[e^{-r zeta} 1{zeta <= t}]`` for the death time ``zeta``.

    The left side samples ``zeta`` by the exponential clock.  The right side
    integrates ``e^{-rs} V(X_s) exp(-int_0^s V)`` in time along the same paths,
    exactly on each grid step where the rate is frozen at its left value.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return LemmaCheck(0.0, 0.0, 0.0, 0.0, 0.0)
    k_steps, h = time_grid(dt, t)

    def work(start, size, gen):
        state = model.initial_state(np.full(size, float(x0)))
        clock = gen.exponential(size=size)
        cum = np.zeros(size)
        lhs = np.zeros(size)
        rhs = np.zeros(size)
        dead = np.zeros(size, dtype=bool)
        for i in range(k_steps):
            s = i * h
            v = V(model.observe(state))
            kappa = r + v
            # int_0^h e^{-r(s+u) - cum - v u} v du
            step = np.where(kappa > 0, -np.expm1(-kappa * h) / np.where(kappa > 0, kappa, 1.0), h)
            rhs += v * np.exp(-r * s - cum) * step
            new = cum + v * h
            hit = ~dead & (new >= clock)
            if np.any(hit):
                zeta = s + h * (clock[hit] - cum[hit]) / (v[hit] * h)
                lhs[hit] = np.exp(-r * zeta)
                dead |= hit
            cum = new
            state = model.advance(state, h, gen)
        return lhs, rhs

    parts = run_batches(n_paths, work, rng, threads)
    lhs = np.concatenate([p[0] for p in parts])
    rhs = np.concatenate([p[1] for p in parts])
    lm, ls = _mean_se(lhs)
    rm, rs = _mean_se(rhs)
    _, ds = _mean_se(lhs - rhs)
    return LemmaCheck(lm, ls, rm, rs, ds)


def resolvent_mc(model: DiffusionSpec, V: RateFunction, D: RateFunction | SurrenderFamily | None,
                 r: float, y: float, p: float = 0.0, n_paths: int = 100_000, dt: float = 0.01,
                 rng: RngStream = RngStream(0),
                 threads: int | None = None) -> tuple[ReturnEstimate, ReturnEstimate]:
    """Feynman-Kac estimates of ``(z_V(y), z_1(y))`` by exponential time randomisation."""
    sample = simulate_discounted(model, PointMass(float(y)), V, D, r, n_paths, dt, rng, threads)
    zv = _mean_se(sample.expenditure(p))
    z1 = _mean_se(sample.revenue(p))
    return ReturnEstimate(*zv, "mc"), ReturnEstimate(*z1, "mc")
