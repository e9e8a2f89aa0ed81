import math

import numpy as np
import pytest
from scipy import integrate, stats

from lapsepricing.errors import UnsupportedDensityModelPair
from lapsepricing.processes import BrownianDrift, RngStream, SquaredBessel2, StepRate
from lapsepricing.thermodynamic import (KILLED, ExponentialDensity, GaussianDensity, HistogramDensity,
                                        adjoint_density_mc, build_lattice_measure, empirical_measure,
                                        forward_density_mc, limit_occupancy)


def test_lattice_weights_normalised():
    mu = build_lattice_measure(ExponentialDensity(1.0), 10, 1e-6)
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(mu.weights >= 0)
    assert np.allclose(mu.points * 10, np.round(mu.points * 10))


def test_lattice_single_bin_histogram():
    N = 8
    mu = build_lattice_measure(HistogramDensity((0.25, 0.25 + 1 / N), (1.0,)), N)
    assert len(mu.ks) == 1 and mu.weights[0] == pytest.approx(1.0)
    assert mu.points[0] == pytest.approx(0.25)


def test_lattice_truncation_validation():
    with pytest.raises(ValueError):
        build_lattice_measure(ExponentialDensity(1.0), 0)
    with pytest.raises(ValueError):
        build_lattice_measure(ExponentialDensity(1.0), 10, 0.0)


def test_lattice_expectation_converges_exponential():
    gamma = 1.0
    f = ExponentialDensity(gamma)
    ref = integrate.quad(lambda x: math.exp(-x) * gamma * math.exp(-gamma * x), 0, np.inf)[0]
    errs = [abs(build_lattice_measure(f, N).expect(lambda x: np.exp(-x)) - ref) for N in (10, 100, 1000)]
    assert errs[1] <= errs[0] * 1.1 and errs[2] <= errs[1] * 1.1


@pytest.mark.parametrize("h", [np.sin, lambda x: 1 / (1 + np.exp(-20 * (x - 0.0))) * (1 / (1 + np.exp(20 * (x - 1.0))))])
def test_lattice_expectation_converges_gaussian(h):
    f = GaussianDensity(0.3, 0.8)
    ref = integrate.quad(lambda x: h(x) * f.pdf(x), -12, 12, limit=200)[0]
    e10 = abs(build_lattice_measure(f, 10).expect(h) - ref)
    e1000 = abs(build_lattice_measure(f, 1000).expect(h) - ref)
    assert e1000 < e10


def test_empirical_measure_counts():
    em = empirical_measure([0.1, 0.2, KILLED, 5.0], 4, [(0.0, 1.0)])
    assert em.proportions[0] == 0.5
    em = empirical_measure([KILLED] * 3, 3, [(0.0, 1.0), (1.0, 2.0)])
    assert np.all(em.proportions == 0)
    with pytest.raises(ValueError):
        empirical_measure([0.1], 1, [(0.0, 1.0), (0.5, 2.0)])


def test_limit_occupancy_mass_conservation():
    f = GaussianDensity(0.0, 1.0)
    est, se = limit_occupancy(f, BrownianDrift(1.0, 0.1), StepRate.constant(0.0), 1.0, (-np.inf, np.inf),
                              20_000, 0.1, RngStream(1))
    assert est == 1.0
    lam, t = 0.3, 2.0
    est, se = limit_occupancy(f, BrownianDrift(1.0, 0.1), StepRate.constant(lam), t, (-np.inf, np.inf),
                              20_000, 0.1, RngStream(1))
    assert abs(est - math.exp(-lam * t)) <= max(3 * se, 1e-12)


def test_limit_occupancy_at_zero_time():
    f = ExponentialDensity(2.0)
    est, se = limit_occupancy(f, SquaredBessel2(), StepRate.constant(0.0), 0.0, (0.0, 0.5), 50_000, 0.1,
                              RngStream(2))
    assert abs(est - f.cdf(0.5)) <= 3 * se


def test_limit_occupancy_rejects_bad_support():
    with pytest.raises(UnsupportedDensityModelPair):
        limit_occupancy(GaussianDensity(), SquaredBessel2(), StepRate.constant(0.0), 1.0, (0, 1), 10, 0.1,
                        RngStream(0))


def test_cohort_occupancy_matches_limit():
    # mean v^N(t, A) over replications against the Gaussian transition integral
    a, b, lam, t, N = 1.0, 0.2, 0.3, 1.0, 50
    A = (0.0, 1.0)
    f = GaussianDensity(0.0, 1.0)
    mu = build_lattice_measure(f, N)
    model = BrownianDrift(a, b)
    vals = []
    for rep in range(200):
        gen = RngStream(3, rep).generator()
        x0 = mu.ppf(gen.random(N))
        xt = x0 + b * t + a * math.sqrt(t) * gen.standard_normal(N)
        alive = gen.exponential(size=N) > lam * t
        states = [x if ok else KILLED for x, ok in zip(xt, alive)]
        vals.append(empirical_measure(states, N, [A]).proportions[0])
    vals = np.array(vals)
    s = math.sqrt(a * a * t + 1.0)
    ref = math.exp(-lam * t) * (stats.norm.cdf(A[1], b * t, s) - stats.norm.cdf(A[0], b * t, s))
    # lattice-vs-density gap is O(1/N), far below the Monte Carlo error
    assert abs(vals.mean() - ref) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


@pytest.mark.parametrize("x", [-1.5, -0.5, 0.0, 0.7, 2.0])
def test_adjoint_identity_brownian(x):
    f = GaussianDensity(0.2, 0.7)
    model = BrownianDrift(0.8, 0.4)
    fwd, se1 = forward_density_mc(f, model, 1.5, x, 40_000, RngStream(4))
    adj, se2 = adjoint_density_mc(f, model, 1.5, x, 40_000, RngStream(5))
    assert abs(fwd - adj) <= 3 * math.hypot(se1, se2)

