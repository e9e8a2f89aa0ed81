"""Closed-form surrender-model return for the 2-dimensional squared Bessel model.

Mortality ``V(x) = m x + n``, surrender ``D(x, p) = phi(p) x + rho(p)`` and an
exponential limit density ``f(x) = gamma e^{-gamma x}``.  With
``lam = m + phi(p)``, ``c = r + n + rho(p)`` and ``k = sqrt(2 lam)`` the
per-capita return is

    VAR(p) = -A m / lam + gamma (p - A n + A m c / lam) * J(gamma, c, lam)

where ``J = int_0^inf e^{-ct} / (gamma cosh kt + (k/2) sinh kt) dt`` is the
discounted average of the squared Bessel Laplace transform over ``x ~ f``.
``J`` is evaluated through

    I(gamma, c, lam) = int_0^inf e^{-ct} / (gamma cosh kt + k sinh kt) dt

using ``J(gamma, c, lam) = 2 I(2 gamma, c, lam)``.  ``I`` has a geometric
series expansion in ``q = (gamma - k) / (gamma + k)`` and equals a Gauss
hypergeometric function ``F(1, a; a + 1; -q)`` with ``a = (c + k) / (2k)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import InvalidConfigAtP, NonConvergent, PoleInB, SeriesDiverges


@dataclass(frozen=True)
class Bessel2Config:
    """Parameters of the affine-rate squared Bessel model.

    ``phi`` and ``rho`` are affine maps in ``p`` given as ``(value at 0, slope)``.
    """

    m: float
    n: float
    gamma: float
    phi: tuple = (0.0, 0.0)
    rho: tuple = (0.0, 0.0)
    A: float = 1.0
    r: float = 0.05

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mortality slope m must be > 0")
        if not self.gamma > 0:
            raise ValueError("density rate gamma must be > 0")
        if not self.r > 0:
            raise ValueError("discount rate r must be > 0")

    def phi_at(self, p: float) -> float:
        return self.phi[0] + self.phi[1] * p

    def rho_at(self, p: float) -> float:
        return self.rho[0] + self.rho[1] * p

    def lam(self, p: float) -> float:
        return self.m + self.phi_at(p)

    def c(self, p: float) -> float:
        return self.r + self.n + self.rho_at(p)

    def checked(self, p: float) -> tuple[float, float]:
        lam, c = self.lam(p), self.c(p)
        if not lam > 0:
            raise InvalidConfigAtP(f"lambda(p) = m + phi(p) = {lam} must be > 0 at p={p}")
        if not c > 0:
            raise InvalidConfigAtP(f"c(p) = r + n + rho(p) = {c} must be > 0 at p={p}")
        return lam, c

    @classmethod
    def from_problem(cls, problem) -> "Bessel2Config":
        D = problem.D
        phi = tuple(D.phi) if D is not None else (0.0, 0.0)
        rho = tuple(D.rho) if D is not None else (0.0, 0.0)
        return cls(problem.V.slope, problem.V.intercept, problem.initial.rate, phi, rho,
                   problem.A, problem.r)


def pochhammer(x: float, j: int) -> float:
    """Rising factorial ``(x)_j = x (x+1) ... (x+j-1)``."""
    if j < 0:
        raise ValueError("j must be >= 0")
    out = 1.0
    for k in range(j):
        out *= x + k
    return out


def hyp2f1_first_unit(a: float, b: float, z: float, tol: float = 1e-12, max_terms: int = 100_000) -> float:
    """``F(1, a; b; z) = sum_j (a)_j / (b)_j z^j`` for ``|z| < 1``.

    Terms are built by the ratio ``(a + j) / (b + j) z``.  Summation stops once
    the geometric majorant of the remaining tail drops below ``tol``.
    """
    if abs(z) >= 1:
        raise SeriesDiverges(f"|z| = {abs(z)} >= 1")
    if b <= 0 and float(b).is_integer() and not (a <= 0 and float(a).is_integer() and a > b):
        raise PoleInB(f"b = {b} is a nonpositive integer")
    total, term = 0.0, 1.0
    for j in range(max_terms):
        total += term
        if term == 0.0:
            return total
        ratio = (a + j) / (b + j)
        term *= ratio * z
        # every later ratio is bounded by max(|ratio|, 1) in modulus
        rho = abs(z) * max(abs((a + j + 1) / (b + j + 1)), 1.0)
        if rho < 1 and abs(term) / (1 - rho) < tol:
            return total + term
    raise NonConvergent(f"hypergeometric series did not reach tol={tol} in {max_terms} terms")


def _k(lam: float) -> float:
    if not lam > 0:
        raise InvalidConfigAtP(f"lambda must be > 0, got {lam}")
    return math.sqrt(2.0 * lam)


def i_gamma_quadrature(gamma: float, c: float, lam: float, tol: float = 1e-12) -> float:
    """Adaptive quadrature of ``int_0^inf e^{-ct} / (gamma cosh kt + k sinh kt) dt``.

    The integrand is rewritten as ``2 e^{-(c+k)t} / ((gamma+k) + (gamma-k) e^{-2kt})``
    to avoid overflow, and the range is cut where the envelope
    ``2 e^{-(c+k)t} / (gamma + k)`` falls below ``tol``.
    """
    if not (gamma > 0 and c > 0):
        raise InvalidConfigAtP("gamma and c must be > 0")
    k = _k(lam)
    gp, gm = gamma + k, gamma - k

    def f(t):
        return 2.0 * math.exp(-(c + k) * t) / (gp + gm * math.exp(-2.0 * k * t))

    t_max = max(math.log(2e3 / (gp * tol)) / (c + k), 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, 0.0, t_max, epsabs=tol * 1e-2, epsrel=1e-13, limit=500)
        except integrate.IntegrationWarning as exc:
            raise NonConvergent(str(exc)) from exc
    if err > tol:
        raise NonConvergent(f"quadrature error estimate {err:.3g} exceeds tol={tol}")
    return val


def i_gamma_series(gamma: float, c: float, lam: float, tol: float = 1e-12, max_terms: int = 1_000_000) -> float:
    """``sum_{j>=0} (-q)^j 2 / ((gamma + k)(c + (2j+1) k))`` with ``q = (gamma-k)/(gamma+k)``."""
    if not (gamma > 0 and c > 0):
        raise InvalidConfigAtP("gamma and c must be > 0")
    k = _k(lam)
    q = (gamma - k) / (gamma + k)
    if abs(q) >= 1:
        raise SeriesDiverges(f"|q| = {abs(q)} >= 1")
    scale = 2.0 / (gamma + k)
    total = 0.0
    power = 1.0
    for j in range(max_terms):
        term = power * scale / (c + (2 * j + 1) * k)
        total += term
        power *= -q
        # |terms| decay at least like |q|^j
        nxt = abs(power) * scale / (c + (2 * j + 3) * k)
        if nxt == 0.0 or nxt / (1 - abs(q)) < tol:
            return total
    raise SeriesDiverges(f"series did not reach tol={tol} in {max_terms} terms")


def i_gamma_hypergeometric(gamma: float, c: float, lam: float, tol: float = 1e-12) -> float:
    """``I`` as ``2 / ((gamma + k)(c + k)) F(1, a; a + 1; -q)``, ``a = (c + k) / (2k)``."""
    k = _k(lam)
    q = (gamma - k) / (gamma + k)
    a = (c + k) / (2 * k)
    return 2.0 / ((gamma + k) * (c + k)) * hyp2f1_first_unit(a, a + 1.0, -q, tol)


def i_gamma_shifted_series(gamma: float, c: float, lam: float, tol: float = 1e-12) -> float:
    """Alternative closed form with shifted hypergeometric parameters.

    ``(F(1, s - 2; s - 1; -q) - 1 / (c + k)) / (gamma k + 2 lam)`` with
    ``s = (1 + c) / (2k)``.  It does not reproduce the integral in general; it
    is evaluated only so validation reports can show the discrepancy.
    """
    k = _k(lam)
    q = (gamma - k) / (gamma + k)
    s = (1.0 + c) / (2 * k)
    return (hyp2f1_first_unit(s - 2.0, s - 1.0, -q, tol) - 1.0 / (c + k)) / (gamma * k + 2.0 * lam)


def i_gamma(gamma: float, c: float, lam: float, tol: float = 1e-12) -> float:
    """Series evaluation with a quadrature fallback."""
    try:
        return i_gamma_series(gamma, c, lam, tol)
    except SeriesDiverges:
        return i_gamma_quadrature(gamma, c, lam, tol)


def var_bessel(p: float, config: Bessel2Config, tol: float = 1e-12) -> float:
    """Per-capita return ``VAR(p)`` of the squared Bessel model."""
    lam, c = config.checked(p)
    g, A, m, n = config.gamma, config.A, config.m, config.n
    J = 2.0 * i_gamma(2.0 * g, c, lam, tol)
    return -A * m / lam + g * (p - A * n + A * m * c / lam) * J


def var_bessel_alternate(p: float, config: Bessel2Config, tol: float = 1e-12) -> float:
    """``A m / lam + (gamma p + A m c / lam - gamma A n) * I(gamma, c, lam)``.

    This assembly uses the opposite sign on the constant term, lacks the
    factor ``gamma`` on ``A m c / lam`` and pairs with the kernel without the
    1/2; it disagrees with simulation and is kept for validation reports only.
    """
    lam, c = config.checked(p)
    g, A, m, n = config.gamma, config.A, config.m, config.n
    return A * m / lam + (g * p + A * m * c / lam - g * A * n) * i_gamma(g, c, lam, tol)


def premium_bessel(config: Bessel2Config, tol: float = 1e-12) -> float:
    """Break-even premium when ``phi`` and ``rho`` do not depend on ``p``."""
    if config.phi[1] != 0 or config.rho[1] != 0:
        raise ValueError("closed-form premium needs p-independent surrender; use solve_premium")
    lam, c = config.checked(0.0)
    g, A, m, n = config.gamma, config.A, config.m, config.n
    J = 2.0 * i_gamma(2.0 * g, c, lam, tol)
    return A * m / (lam * g * J) + A * n - A * m * c / lam


# ---------------------------------------------------------------------------
# Surrender-rate positivity


def occupation_quantile(gamma: float, r: float, level: float = 1 - 1e-6) -> float:
    """Quantile of ``X_tau`` with ``X_0 ~ Exp(gamma)`` and ``tau ~ Exp(r)``.

    Given ``tau = t`` the state is exponential with mean ``1/gamma + 2t``, so
    the tail is ``int_0^inf r e^{-rt} exp(-x / (1/gamma + 2t)) dt``.
    """
    def tail(x):
        return integrate.quad(lambda t: r * math.exp(-r * t - x / (1.0 / gamma + 2.0 * t)),
                              0.0, np.inf, limit=200)[0]

    target = 1.0 - level
    hi = 1.0 / gamma
    while tail(hi) > target:
        hi *= 2.0
    return optimize.brentq(lambda x: tail(x) - target, 0.0, hi, xtol=1e-10, rtol=1e-12)


def check_surrender_positivity(p: float, config: Bessel2Config, level: float = 1 - 1e-6) -> bool:
    """Warn when ``D(x, p) < 0`` somewhere below the ``level`` occupation quantile.

    With ``phi(p) < 0`` the affine surrender rate turns negative for large
    states, so positivity can only be checked on a bulk range.  Returns
    ``True`` when no negativity was found there.
    """
    x_hi = occupation_quantile(config.gamma, config.r, level)
    worst = min(config.rho_at(p), config.phi_at(p) * x_hi + config.rho_at(p))
    if worst < 0:
        warnings.warn(f"surrender rate reaches {worst:.4g} < 0 on [0, {x_hi:.4g}] at p={p}",
                      RuntimeWarning, stacklevel=2)
        return False
    return True
