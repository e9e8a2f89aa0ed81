"""Initial-profile measures of a finite cohort and their large-cohort limit.

A cohort of ``N`` insureds has initial profiles on the lattice ``k / N``.  The
lattice measure ``mu_N`` is built from a limit density ``f`` by giving the
atom ``k / N`` the exact ``f``-mass of the cell ``[k/N, (k+1)/N)``; as ``N``
grows, lattice expectations of bounded continuous functions converge to their
``f``-expectations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import stats

from .errors import EmptySupport, UnsupportedDensityModelPair
from .processes import (BrownianDrift, DiffusionSpec, RateFunction, RngStream, SquaredBessel2,
                        simulate_to_horizon)


@dataclass(frozen=True)
class ExponentialDensity:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be > 0")

    @property
    def _dist(self):
        return stats.expon(scale=1.0 / self.rate)

    lower = 0.0

    def pdf(self, x):
        return self._dist.pdf(x)

    def cdf(self, x):
        return self._dist.cdf(x)

    def ppf(self, u):
        return self._dist.ppf(u)

    def sf(self, x):
        return self._dist.sf(x)


@dataclass(frozen=True)
class GaussianDensity:
    mean: float = 0.0
    stddev: float = 1.0

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValueError("Gaussian stddev must be > 0")

    @property
    def _dist(self):
        return stats.norm(self.mean, self.stddev)

    lower = -math.inf

    def pdf(self, x):
        return self._dist.pdf(x)

    def cdf(self, x):
        return self._dist.cdf(x)

    def ppf(self, u):
        return self._dist.ppf(u)

    def sf(self, x):
        return self._dist.sf(x)


@dataclass(frozen=True)
class HistogramDensity:
    """Piecewise-uniform density with ``masses[i]`` spread over ``[edges[i], edges[i+1])``."""

    edges: tuple
    masses: tuple

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        masses = tuple(float(m) for m in self.masses)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)
        if len(edges) != len(masses) + 1 or len(masses) == 0:
            raise ValueError("histogram needs len(edges) == len(masses) + 1 >= 2")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("histogram edges must be strictly increasing")
        if any(m < 0 for m in masses) or abs(sum(masses) - 1.0) > 1e-12:
            raise ValueError("histogram masses must be >= 0 and sum to 1")

    @property
    def lower(self) -> float:
        return self.edges[0]

    def cdf(self, x):
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(x, self.edges, cum, left=0.0, right=1.0)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        widths = np.diff(self.edges)
        dens = np.asarray(self.masses) / widths
        idx = np.searchsorted(self.edges, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.masses))
        out = np.zeros_like(x)
        out[inside] = dens[idx[inside]]
        return out

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        # drop empty bins so the inverse is well defined
        keep = np.concatenate([[True], np.diff(cum) > 0])
        return np.interp(u, cum[keep], np.asarray(self.edges)[keep])


LimitDensity = Union[ExponentialDensity, GaussianDensity, HistogramDensity]


@dataclass(frozen=True)
class InitialMeasure:
    """Lattice measure: weight ``weights[j]`` on the point ``ks[j] / N``."""

    N: int
    ks: np.ndarray
    weights: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.ks / self.N

    @property
    def lower(self) -> float:
        return float(self.points.min())

    def expect(self, h) -> float:
        return float(np.dot(self.weights, h(self.points)))

    def ppf(self, u):
        """Generalised inverse CDF, used to couple samples across ``N``."""
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(u), side="left")
        return self.points[np.minimum(idx, len(cum) - 1)]


def build_lattice_measure(f: LimitDensity, N: int, truncation_mass: float = 1e-9) -> InitialMeasure:
    """Discretise ``f`` onto ``N^{-1} Z`` by exact cell masses, truncated and renormalised.

    The kept window carries at least ``1 - truncation_mass`` of ``f``'s mass.
    """
    if N < 1:
        raise ValueError("N must be a positive integer")
    if not 0 < truncation_mass < 1:
        raise ValueError("truncation mass must lie in (0, 1)")
    lo = float(f.ppf(truncation_mass / 2))
    hi = float(f.ppf(1 - truncation_mass / 2))
    k_lo = math.floor(lo * N)
    k_hi = math.ceil(hi * N)
    ks = np.arange(k_lo, k_hi + 1)
    upper = np.minimum(f.cdf((ks + 1) / N), 1.0)
    # masses from the survival function where it is more accurate
    lower_tail = np.asarray(f.cdf(ks / N))
    w = upper - lower_tail
    right = ks / N > _median(f)
    if np.any(right):
        w[right] = f.sf(ks[right] / N) - f.sf((ks[right] + 1) / N)
    keep = w > 0
    if not np.any(keep):
        raise EmptySupport("truncated lattice measure has no mass")
    ks, w = ks[keep], w[keep]
    if w.sum() < 1 - truncation_mass - 1e-12:
        raise EmptySupport("truncation window lost more than the declared mass")
    return InitialMeasure(N, ks, w / w.sum())


def _median(f) -> float:
    return float(f.ppf(0.5))


# ---------------------------------------------------------------------------
# Empirical measures


KILLED = None


@dataclass(frozen=True)
class EmpiricalMeasure:
    t: float
    partition: tuple
    counts: np.ndarray
    N: int

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / self.N


def empirical_measure(states: Sequence, N: int, partition: Sequence[tuple],
                      t: float = 0.0) -> EmpiricalMeasure:
    """Fraction of the ``N`` insureds alive in each half-open interval ``[lo, hi)``.

    Killed insureds are passed as ``KILLED`` (``None``) or NaN.
    """
    partition = tuple((float(a), float(b)) for a, b in partition)
    ordered = sorted(partition)
    if any(b1 > a2 for (_, b1), (a2, _) in zip(ordered, ordered[1:])):
        raise ValueError("partition intervals must be disjoint")
    x = np.array([np.nan if s is None else s for s in states], dtype=float)
    counts = np.array([np.count_nonzero((x >= a) & (x < b)) for a, b in partition])
    return EmpiricalMeasure(t, partition, counts, N)


def check_density_model(f: LimitDensity, model: DiffusionSpec) -> None:
    if isinstance(model, SquaredBessel2) and f.lower < 0:
        raise UnsupportedDensityModelPair(
            f"{type(f).__name__} has negative support, incompatible with SquaredBessel2")


def limit_occupancy(f: LimitDensity, model: DiffusionSpec, V: RateFunction, t: float,
                    A: tuple, n_paths: int = 100_000, dt: float = 0.01,
                    rng: RngStream = RngStream(0), threads: int | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of ``int P^y(X_t in A, not killed by t) f(y) dy``.

    Starting points are drawn from ``f``; each path contributes
    ``1_A(X_t) exp(-int_0^t V)``.  Returns ``(estimate, standard error)``.
    """
    check_density_model(f, model)
    if t < 0:
        raise ValueError("t must be >= 0")
    sample = simulate_to_horizon(model, lambda gen, size: f.ppf(gen.random(size)), n_paths,
                                 t, dt, [V], rng, threads)
    a, b = A
    vals = ((sample.x_end >= a) & (sample.x_end < b)) * np.exp(-sample.integrals[:, 0])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))


def forward_density_mc(f: LimitDensity, model: BrownianDrift, t: float, x: float,
                       n: int, rng: RngStream) -> tuple[float, float]:
    """Density of ``X_t`` at ``x`` when ``X_0 ~ f``: MC of ``E_{y~f}[q(t, y, x)]``."""
    gen = rng.generator()
    y = f.ppf(gen.random(n))
    s = model.a * math.sqrt(t)
    vals = stats.norm.pdf(x, loc=y + model.b * t, scale=s)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def adjoint_density_mc(f: LimitDensity, model: BrownianDrift, t: float, x: float,
                       n: int, rng: RngStream) -> tuple[float, float]:
    """Same density via the adjoint process ``X* = x + a W - b t``: MC of ``E[f(X*_t)]``."""
    gen = rng.generator()
    xs = x + model.a * math.sqrt(t) * gen.standard_normal(n) - model.b * t
    vals = f.pdf(xs)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


@dataclass(frozen=True)
class PointMass:
    """All insureds start at ``x``; used for pointwise resolvent estimates."""

    x: float

    @property
    def lower(self) -> float:
        return self.x

    def expect(self, h) -> float:
        return float(h(np.array([self.x]))[0])

    def ppf(self, u):
        return np.full(np.shape(u), self.x, dtype=float)
