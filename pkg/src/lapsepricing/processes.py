"""Personal-state diffusions, killing rates and Feynman-Kac path functionals.

Two state processes are supported:

* :class:`BrownianDrift` -- ``X_t = x0 + a W_t + b t``, simulated with exact
  Gaussian increments.
* :class:`SquaredBessel2` -- the 2-dimensional squared Bessel process
  ``dX = 2 sqrt(X) dW + 2 dt``, simulated exactly as ``|B_t|^2`` for a planar
  Brownian motion started at ``(sqrt(x0), 0)``.

Killing rates are either step functions (value ``lambda_i`` on ``(y_{i-1}, y_i]``)
or affine functions ``slope * x + intercept``.  Both are linear in a small set
of per-state features, which the Monte Carlo engines exploit to re-evaluate
path weights at many premium levels from a single set of simulated paths.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import NegativeInitial, NonPositiveLambda, NonPositiveStep

# Samples per independently seeded batch.  Fixed so results never depend on
# the number of worker threads.
BATCH_SIZE = 8192


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self, *substream: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id) & (2**64 - 1), *map(int, substream)),
        )
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream (used for replication ``index``)."""
        seq = np.random.SeedSequence(entropy=[int(self.seed) & (2**64 - 1), int(self.stream_id) & (2**64 - 1), int(index)])
        sid = int(seq.generate_state(2, dtype=np.uint64)[0])
        return RngStream(self.seed, sid)


def default_threads() -> int:
    return int(os.environ.get("LAPSEPRICING_THREADS", "1"))


def run_batches(n: int, worker: Callable[[int, int, np.random.Generator], object],
                rng: RngStream, threads: int | None = None) -> list:
    """Run ``worker(start, size, gen)`` over fixed-size batches of ``n`` samples.

    Each batch draws from its own generator ``rng.generator(batch_index)``, and
    results are returned in batch order, so the outcome is identical for any
    thread count.
    """
    threads = default_threads() if threads is None else threads
    jobs = [(start, min(BATCH_SIZE, n - start), i)
            for i, start in enumerate(range(0, n, BATCH_SIZE))]

    def call(job):
        start, size, i = job
        return worker(start, size, rng.generator(i))

    if threads <= 1 or len(jobs) <= 1:
        return [call(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(call, jobs))


# ---------------------------------------------------------------------------
# State processes


@dataclass(frozen=True)
class BrownianDrift:
    """``X_t = x0 + a W_t + b t`` with volatility ``a > 0`` and drift ``b``."""

    a: float = 1.0
    b: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"volatility a must be > 0, got {self.a}")

    def initial_state(self, x0: np.ndarray) -> np.ndarray:
        return np.array(x0, dtype=float, copy=True)

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state

    def advance(self, state: np.ndarray, h, gen: np.random.Generator) -> np.ndarray:
        z = gen.standard_normal(state.shape[0])
        return state + self.b * h + self.a * np.sqrt(h) * z

    def with_x0(self, x0: float) -> "BrownianDrift":
        return BrownianDrift(self.a, self.b, x0)


@dataclass(frozen=True)
class SquaredBessel2:
    """2-dimensional squared Bessel process started at ``x0 >= 0``."""

    x0: float = 0.0

    def __post_init__(self):
        if self.x0 < 0:
            raise NegativeInitial(f"squared Bessel process needs x0 >= 0, got {self.x0}")

    def initial_state(self, x0: np.ndarray) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 < 0):
            raise NegativeInitial("squared Bessel process needs nonnegative initial states")
        state = np.zeros((x0.shape[0], 2))
        state[:, 0] = np.sqrt(x0)
        return state

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state[:, 0] ** 2 + state[:, 1] ** 2

    def advance(self, state: np.ndarray, h, gen: np.random.Generator) -> np.ndarray:
        z = gen.standard_normal(state.shape)
        h = np.asarray(h, dtype=float)
        scale = np.sqrt(h)[:, None] if h.ndim else math.sqrt(h)
        return state + scale * z

    def with_x0(self, x0: float) -> "SquaredBessel2":
        return SquaredBessel2(x0)


DiffusionSpec = Union[BrownianDrift, SquaredBessel2]


# ---------------------------------------------------------------------------
# Rate functions


@dataclass(frozen=True)
class StepRate:
    """Piecewise-constant rate: ``values[i]`` on ``(knots[i-1], knots[i]]``.

    ``knots`` has ``M - 1`` strictly increasing entries and ``values`` has
    ``M`` nonnegative entries; the outer regions extend to -inf and +inf.
    """

    knots: tuple = ()
    values: tuple = (0.0,)

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(values) != len(knots) + 1:
            raise ValueError("step rate needs len(values) == len(knots) + 1")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("step knots must be strictly increasing")
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ValueError("step values must be finite and >= 0")

    @classmethod
    def constant(cls, value: float) -> "StepRate":
        return cls((), (value,))

    @property
    def n_regions(self) -> int:
        return len(self.values)

    def region(self, x) -> np.ndarray:
        # number of knots strictly below x: x == y_i belongs to region i
        return np.searchsorted(np.asarray(self.knots), x, side="left")

    def __call__(self, x):
        return np.asarray(self.values)[self.region(x)]

    @property
    def n_features(self) -> int:
        return len(self.values)

    def features(self, x: np.ndarray) -> np.ndarray:
        idx = self.region(x)
        return (idx[:, None] == np.arange(self.n_regions)).astype(float)

    def coefficients(self) -> np.ndarray:
        return np.asarray(self.values)

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.values)


@dataclass(frozen=True)
class AffineRate:
    """``slope * x + intercept``, evaluated as given (no clamping)."""

    slope: float = 0.0
    intercept: float = 0.0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    n_features = 2

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.column_stack([x, np.ones_like(x)])

    def coefficients(self) -> np.ndarray:
        return np.array([self.slope, self.intercept])

    def is_zero(self) -> bool:
        return self.slope == 0 and self.intercept == 0


RateFunction = Union[StepRate, AffineRate]


@dataclass(frozen=True)
class StepSurrender:
    """Step surrender rates ``mu_i(p) = offsets[i] + sensitivities[i] * p``."""

    knots: tuple = ()
    offsets: tuple = (0.0,)
    sensitivities: tuple = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "offsets", tuple(float(v) for v in self.offsets))
        object.__setattr__(self, "sensitivities", tuple(float(v) for v in self.sensitivities))
        if not (len(self.offsets) == len(self.sensitivities) == len(self.knots) + 1):
            raise ValueError("surrender offsets/sensitivities must have len(knots) + 1 entries")
        if any(v < 0 for v in self.offsets + self.sensitivities):
            raise ValueError("surrender offsets and sensitivities must be >= 0")

    def at(self, p: float) -> StepRate:
        return StepRate(self.knots, tuple(m + s * p for m, s in zip(self.offsets, self.sensitivities)))


@dataclass(frozen=True)
class AffineSurrender:
    """``D(x, p) = phi(p) x + rho(p)`` with ``phi(p) = phi[0] + phi[1] p`` and
    ``rho(p) = rho[0] + rho[1] p``."""

    phi: tuple = (0.0, 0.0)
    rho: tuple = (0.0, 0.0)

    def phi_at(self, p: float) -> float:
        return self.phi[0] + self.phi[1] * p

    def rho_at(self, p: float) -> float:
        return self.rho[0] + self.rho[1] * p

    def at(self, p: float) -> AffineRate:
        return AffineRate(self.phi_at(p), self.rho_at(p))


def no_surrender() -> StepSurrender:
    return StepSurrender()


SurrenderFamily = Union[StepSurrender, AffineSurrender]


# ---------------------------------------------------------------------------
# Single paths


@dataclass(frozen=True)
class Path:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) == 0:
            raise ValueError("empty path")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def from_states(cls, states: Sequence[float], dt: float) -> "Path":
        states = np.asarray(states, dtype=float)
        return cls(np.arange(len(states)) * dt, states)


def time_grid(dt: float, horizon: float) -> tuple[int, float]:
    """Number of steps and effective step for a uniform grid on ``[0, horizon]``."""
    if not dt > 0:
        raise NonPositiveStep(f"dt must be > 0, got {dt}")
    if not horizon > 0:
        raise NonPositiveStep(f"horizon must be > 0, got {horizon}")
    if dt > horizon * (1 + 1e-12):
        raise NonPositiveStep(f"dt={dt} exceeds horizon={horizon}")
    k = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return k, horizon / k


def simulate_path(model: DiffusionSpec, dt: float, horizon: float, rng: RngStream) -> Path:
    """Simulate one path of ``model`` from ``model.x0`` on a uniform grid.

    The step is ``horizon / ceil(horizon / dt)``, i.e. ``dt`` itself whenever
    it divides the horizon.
    """
    k, h = time_grid(dt, horizon)
    gen = rng.generator()
    state = model.initial_state(np.array([model.x0]))
    out = np.empty(k + 1)
    out[0] = model.observe(state)[0]
    for i in range(k):
        state = model.advance(state, h, gen)
        out[i + 1] = model.observe(state)[0]
    return Path(np.arange(k + 1) * h, out)


def integrated_rate(path: Path, rate: RateFunction) -> float:
    """Left-endpoint Riemann sum of ``rate(X_t)`` over the path's horizon."""
    if len(path.states) < 2:
        return 0.0
    steps = np.diff(path.times)
    return float(np.sum(rate(path.states[:-1]) * steps))


def fk_weight(path: Path, rates: Sequence[RateFunction]) -> float:
    """Feynman-Kac survival weight ``exp(-sum of integrated rates)``."""
    return math.exp(-sum(integrated_rate(path, r) for r in rates))


def cumulative_rate(path: Path, rate: RateFunction) -> np.ndarray:
    """Running left-Riemann integral of ``rate`` at every grid time."""
    increments = rate(path.states[:-1]) * np.diff(path.times)
    return np.concatenate([[0.0], np.cumsum(increments)])


def sample_killing_time(path: Path, rate: RateFunction, rng: RngStream,
                        size: int | None = None, interpolate: bool = False):
    """Killing time by exponential-clock inversion along ``path``.

    Returns the first grid time at which the running integral of ``rate``
    reaches an independent unit exponential draw, or ``inf`` if that never
    happens on the path's horizon.  With ``interpolate=True`` the crossing is
    located exactly on the piecewise-linear running integral instead.
    ``size`` draws several independent clocks against the same path.
    """
    cum = cumulative_rate(path, rate)
    gen = rng.generator()
    e = gen.exponential(size=size)
    e_arr = np.atleast_1d(e)
    idx = np.searchsorted(cum, e_arr, side="left")
    out = np.full(e_arr.shape, np.inf)
    hit = idx < len(cum)
    if interpolate:
        j = idx[hit]
        lo = cum[j - 1]
        slope = (cum[j] - lo) / (path.times[j] - path.times[j - 1])
        out[hit] = path.times[j - 1] + (e_arr[hit] - lo) / slope
    else:
        out[hit] = path.times[idx[hit]]
    return out if size is not None else float(out[0])


def bessel_laplace_exact(x0: float, lam: float, t: float) -> float:
    """``E[exp(-lam * int_0^t X_s ds) | X_0 = x0]`` for the 2-d squared Bessel process.

    Equal to ``exp(-x0 * k * tanh(k t) / 2) / cosh(k t)`` with ``k = sqrt(2 lam)``.
    """
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be > 0, got {lam}")
    k = math.sqrt(2.0 * lam)
    return math.exp(-0.5 * x0 * k * math.tanh(k * t)) / math.cosh(k * t)


def bessel_laplace_doubled_exponent(x0: float, lam: float, t: float) -> float:
    """The variant without the 1/2 in the exponent; kept to document the mismatch.

    It coincides with :func:`bessel_laplace_exact` only at ``x0 = 0``.
    """
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be > 0, got {lam}")
    k = math.sqrt(2.0 * lam)
    return math.exp(-x0 * k * math.tanh(k * t)) / math.cosh(k * t)


# ---------------------------------------------------------------------------
# Vectorised fixed-horizon simulation


@dataclass
class HorizonSample:
    """Per-path results of :func:`simulate_to_horizon`."""

    x0: np.ndarray
    x_end: np.ndarray
    integrals: np.ndarray  # (n, len(rates)) left-Riemann integrals
    running_min: np.ndarray = field(default=None)
    running_max: np.ndarray = field(default=None)


def simulate_to_horizon(model: DiffusionSpec, x0: np.ndarray | Callable, n: int, horizon: float,
                        dt: float, rates: Sequence[RateFunction], rng: RngStream,
                        threads: int | None = None) -> HorizonSample:
    """Simulate ``n`` paths to ``horizon`` and integrate each rate along them.

    ``x0`` is either an array of ``n`` starting points or a callable
    ``gen, size -> starts`` drawn batch by batch.
    """
    k, h = (0, 0.0) if horizon == 0 else time_grid(dt, horizon)

    def work(start, size, gen):
        starts = _starts(x0, start, size, gen)
        state = model.initial_state(starts)
        x = model.observe(state)
        acc = np.zeros((size, len(rates)))
        lo = x.copy()
        hi = x.copy()
        for _ in range(k):
            for j, rate in enumerate(rates):
                acc[:, j] += rate(x) * h
            state = model.advance(state, h, gen)
            x = model.observe(state)
            np.minimum(lo, x, out=lo)
            np.maximum(hi, x, out=hi)
        return np.asarray(starts, dtype=float), x, acc, lo, hi

    parts = run_batches(n, work, rng, threads)
    cat = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    return HorizonSample(*cat)


def _starts(x0, start: int, size: int, gen: np.random.Generator) -> np.ndarray:
    if callable(x0):
        return np.asarray(x0(gen, size), dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        return np.full(size, float(x0))
    return x0[start:start + size]
