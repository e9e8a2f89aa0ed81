import math
import warnings

import numpy as np
import pytest

from lapsepricing.bm_step import StepModelConfig, var_bm
from lapsepricing.errors import BackendMismatch, NegativeRateEncountered, TailBoundViolated
from lapsepricing.pricing import (ContractTerms, ReturnEstimate, SurrenderProblem,
                                  expected_return_continuous, expected_return_discrete,
                                  expected_return_surrender, premium_continuous, premium_discrete,
                                  simulate_discounted, solve_premium, tail_horizon, var_surrender)
from lapsepricing.processes import (AffineRate, AffineSurrender, BrownianDrift, RngStream, SquaredBessel2,
                                    StepRate, StepSurrender)
from lapsepricing.thermodynamic import ExponentialDensity, GaussianDensity, build_lattice_measure

BM = BrownianDrift(1.0, 0.1)
F = GaussianDensity(0.0, 1.0)


def within(est: ReturnEstimate, target: float, k: float = 3.0, floor: float = 1e-12) -> bool:
    return abs(est.value - target) <= max(k * est.std_error, floor)


def test_contract_terms_validation():
    with pytest.raises(ValueError):
        ContractTerms(A=1.0, r=0.0)
    with pytest.raises(ValueError):
        ReturnEstimate(1.0, 0.0, "quantum")


def test_tail_horizon_bound():
    T = tail_horizon(1.0, 1.0, 0.05, 10, 1e-6)
    assert math.exp(-0.05 * T) * 20 / (1 - math.exp(-0.05)) <= 1e-6
    assert math.exp(-0.05 * (T - 1)) * 20 / (1 - math.exp(-0.05)) > 1e-6


def test_discrete_return_sign_and_tail_error():
    V = StepRate.constant(0.1)
    est = expected_return_discrete(ContractTerms(1.0, 0.05, 0.0), BM, V, F, n_paths=2000, dt=1.0)
    assert est.value < 0
    with pytest.raises(TailBoundViolated):
        expected_return_discrete(ContractTerms(1.0, 0.05, 0.1), BM, V, F, horizon=10, n_paths=100, dt=1.0)


def test_discrete_immortal_cohort():
    terms = ContractTerms(1.0, 0.05, 0.3)
    est = expected_return_discrete(terms, BM, StepRate.constant(0.0), F, n_paths=1000, dt=1.0)
    assert est.value == pytest.approx(0.3 / (1 - math.exp(-0.05)), abs=1e-7)


def test_discrete_premium_constant_rate():
    est = premium_discrete(BM, StepRate.constant(0.1), F, A=1.0, r=0.05, n_paths=20_000, dt=1.0)
    target = 1.0 * (1 - math.exp(-0.1)) * math.exp(-0.05)
    assert target == pytest.approx(0.0905, abs=5e-5)
    # per-path ratio is deterministic for constant rates; only tail truncation remains
    assert within(est, target, floor=1e-7)


def test_discrete_premium_zero_sum_insured():
    assert premium_discrete(BM, StepRate.constant(0.1), F, A=0.0, n_paths=100, dt=1.0).value == 0.0


def test_discrete_premium_n_sweep():
    V = StepRate((0.5, 1.5), (0.05, 0.2, 0.5))
    f = ExponentialDensity(1.0)
    kw = dict(A=1.0, r=0.1, n_paths=20_000, dt=0.1, rng=RngStream(5))
    limit = premium_discrete(BrownianDrift(1.0, 0.0), V, f, **kw).value
    errs = [abs(premium_discrete(BrownianDrift(1.0, 0.0), V, build_lattice_measure(f, N), **kw).value - limit)
            for N in (10, 100, 1000)]
    assert errs[0] > errs[1] > errs[2]


def test_continuous_premium_constant_rate():
    est = premium_continuous(BM, StepRate.constant(0.3), F, A=2.0, n_paths=20_000, dt=0.1)
    assert within(est, 0.6)
    assert premium_continuous(BM, StepRate.constant(0.3), F, A=0.0, n_paths=1000, dt=0.1).value == 0.0


def test_continuous_return_constant_rate_closed_form():
    lam, r, A, p = 0.1, 0.05, 1.0, 0.4
    est = expected_return_continuous(ContractTerms(A, r, p), BM, StepRate.constant(lam), F, n_paths=20_000,
                                     dt=0.1, rng=RngStream(2))
    assert within(est, (p - A * lam) / (lam + r))
    zero = expected_return_continuous(ContractTerms(A, r, 0.0), BM, StepRate.constant(lam), F, n_paths=2000,
                                      dt=0.1)
    assert zero.value < 0


def test_continuous_return_large_discount():
    lam, r, A = 0.1, 50.0, 1.0
    for p in (0.05, 0.2):
        est = expected_return_continuous(ContractTerms(A, r, p), BM, StepRate.constant(lam), F, n_paths=20_000,
                                         dt=0.01, rng=RngStream(3))
        assert np.sign(est.value) == np.sign(p - A * lam)
        assert within(est, (p - A * lam) / (r + lam))


def test_continuous_return_is_affine_in_p():
    V = StepRate((0.0,), (0.1, 0.4))
    vals = [expected_return_continuous(ContractTerms(1.0, 0.1, p), BM, V, F, n_paths=20_000, dt=0.05,
                                       rng=RngStream(4)) for p in (0.0, 0.5, 1.0)]
    # common random numbers make the three estimates exactly collinear
    assert vals[1].value == pytest.approx(0.5 * (vals[0].value + vals[2].value), abs=1e-12)


def test_scale_equivariance():
    V = StepRate((0.0,), (0.1, 0.4))
    a = expected_return_continuous(ContractTerms(1.0, 0.1, 0.3), BM, V, F, n_paths=5000, dt=0.05, rng=RngStream(6))
    b = expected_return_continuous(ContractTerms(3.0, 0.1, 0.9), BM, V, F, n_paths=5000, dt=0.05, rng=RngStream(6))
    assert b.value == pytest.approx(3 * a.value, rel=1e-12)


def test_continuous_premium_bm_step_backend():
    model = BrownianDrift(1.0, 0.1)
    V = StepRate((-0.5, 0.5), (0.05, 0.2, 0.4))
    analytic = premium_continuous(model, V, F, A=1.0, r=0.1, backend="bm-step")
    assert analytic.std_error == 0 and analytic.backend == "bm-step"
    mc = premium_continuous(model, V, F, A=1.0, r=0.1, n_paths=50_000, dt=0.01, rng=RngStream(7))
    assert within(mc, analytic.value)


def test_premium_positive_when_mortality_nonzero():
    V = StepRate((0.0,), (0.0, 0.3))
    assert premium_continuous(BM, V, F, A=1.0, r=0.1, backend="bm-step").value > 0
    assert premium_discrete(BM, V, F, A=1.0, r=0.1, n_paths=2000, dt=0.5).value > 0


def test_surrender_return_reduces_without_surrender():
    V = StepRate((0.0,), (0.1, 0.4))
    terms = ContractTerms(1.0, 0.1, 0.3)
    a = expected_return_surrender(terms, BM, V, None, F, n_paths=20_000, dt=0.05, rng=RngStream(8))
    b = expected_return_continuous(terms, BM, V, F, n_paths=20_000, dt=0.05, rng=RngStream(9))
    assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)
    assert expected_return_surrender(ContractTerms(1.0, 0.1, 0.0), BM, V, StepSurrender((), (0.1,), (0.1,)), F,
                                     n_paths=2000, dt=0.05).value < 0


def test_surrender_constant_rates_root_is_A_lambda():
    lam, mu, A = 0.1, 0.07, 1.5
    problem = SurrenderProblem(BM, StepRate.constant(lam), StepSurrender((), (mu,), (0.0,)), F, A, 0.05,
                               5000, 0.1, RngStream(10))
    report = solve_premium(lambda p: var_surrender(p, "mc", problem), p_max_initial=1.0)
    assert report.status == "UNIQUE"
    assert report.roots[0] == pytest.approx(A * lam, rel=1e-9)


def test_negative_surrender_rate_threshold():
    problem = SurrenderProblem(SquaredBessel2(), AffineRate(1.0, 0.01), AffineSurrender((-0.1, 0.0), (0.02, 0.0)),
                               ExponentialDensity(1.0), 1.0, 0.5, 2000, 0.05, RngStream(11),
                               negative_threshold=0.1)
    with pytest.raises(NegativeRateEncountered):
        var_surrender(0.0, "mc", problem)
    problem.negative_threshold = 1.0
    with pytest.warns(RuntimeWarning):
        var_surrender(0.0, "mc", problem)


def test_backend_mismatch():
    problem = SurrenderProblem(SquaredBessel2(), AffineRate(1.0, 0.0), None, ExponentialDensity(1.0))
    with pytest.raises(BackendMismatch):
        var_surrender(0.0, "bm-step", problem)
    problem = SurrenderProblem(BM, StepRate.constant(0.1), None, F)
    with pytest.raises(BackendMismatch):
        var_surrender(0.0, "bessel", problem)


def test_var_surrender_p0_negative_all_backends():
    bm = SurrenderProblem(BM, StepRate((0.0,), (0.1, 0.3)), StepSurrender((0.0,), (0.05, 0.0), (0.1, 0.2)), F,
                          1.0, 0.1, 5000, 0.05, RngStream(12))
    sb = SurrenderProblem(SquaredBessel2(), AffineRate(1.0, 0.01), AffineSurrender((0.0, 0.0), (0.02, 0.0)),
                          ExponentialDensity(1.0), 1.0, 0.1, 5000, 0.05, RngStream(13))
    assert var_surrender(0.0, "mc", bm).value < 0
    assert var_surrender(0.0, "bm-step", bm).value < 0
    assert var_surrender(0.0, "mc", sb).value < 0
    assert var_surrender(0.0, "bessel", sb).value < 0


def test_bm_step_agrees_with_mc_m2():
    problem = SurrenderProblem(BM, StepRate((0.0,), (0.1, 0.4)), StepSurrender((0.0,), (0.05, 0.02), (0.1, 0.0)),
                               F, 1.0, 0.1, 50_000, 0.01, RngStream(14))
    for p in (0.0, 0.3):
        mc = var_surrender(p, "mc", problem)
        exact = var_surrender(p, "bm-step", problem)
        assert abs(mc.value - exact.value) <= 3 * mc.std_error


def test_bm_step_zero_surrender_matches_no_surrender():
    V = StepRate((0.0,), (0.1, 0.4))
    with_zero = SurrenderProblem(BM, V, StepSurrender((), (0.0,), (0.0,)), F, 1.0, 0.1)
    without = SurrenderProblem(BM, V, None, F, 1.0, 0.1)
    for p in (0.0, 0.2, 0.7):
        assert var_surrender(p, "bm-step", with_zero).value == var_surrender(p, "bm-step", without).value


def test_solve_premium_none_found():
    # surrender exploding in p keeps the objective negative
    problem = SurrenderProblem(BM, StepRate.constant(0.1), None, F, 1.0, 0.05)

    def objective(p):
        cfg = StepModelConfig(1.0, 0.1, (), (0.1,), (0.0,), 0.05)
        return var_bm(p, cfg, F) - 10.0 * p

    report = solve_premium(objective, p_max_initial=1.0, max_expansions=3)
    assert report.status == "NONE_FOUND" and report.roots == []
    assert len(report.bracket_log) == 32 * 4
    assert all(signs == (-1, -1) for _, signs in report.bracket_log[1:])


def test_solve_premium_multiple_roots_and_signs():
    report = solve_premium(lambda p: (p - 0.3) * (p - 0.7) * (p - 1.3), p_max_initial=2.0, grid_size=37)
    assert report.status == "MULTIPLE"
    assert np.allclose(sorted(report.roots), [0.3, 0.7, 1.3], atol=1e-9)
    for root, (lo, hi) in zip(report.roots, report.brackets):
        assert lo <= root <= hi
    sign_changes = [iv for iv, s in report.bracket_log if s[0] * s[1] < 0]
    assert len(sign_changes) == 3


def test_solve_premium_root_on_grid_point():
    report = solve_premium(lambda p: p - 0.5, p_max_initial=1.0, grid_size=4)
    assert report.status == "UNIQUE" and report.roots == [0.5] and report.residuals == [0.0]


def test_solve_premium_bounded_family_has_root():
    # bounded V and D bounded in p: the objective turns positive for large p
    model = BrownianDrift(1.0, 0.0)
    V = StepRate((0.0,), (0.2, 0.6))
    D = StepSurrender((0.0,), (0.05, 0.1), (0.02, 0.01))
    problem = SurrenderProblem(model, V, D, F, 1.0, 0.05)
    report = solve_premium(lambda p: var_surrender(p, "bm-step", problem))
    assert report.status in ("UNIQUE", "MULTIPLE")
    assert abs(var_surrender(report.roots[0], "bm-step", problem).value) <= 1e-10


def test_discounted_sample_weights_are_bounded():
    s = simulate_discounted(BM, F, StepRate((0.0,), (0.1, 0.4)), None, 0.1, 3000, 0.05, RngStream(15))
    w = s.weights()
    assert np.all((w > 0) & (w <= 1))
    assert np.all(s.tau > 0)
