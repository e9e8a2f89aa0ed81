"""Analytic backend for Brownian motion with drift and step killing rates.

For ``X = a W + b t`` and rates that are constant on the regions
``(y_{i-1}, y_i]`` the discounted resolvents

    z_V(y) = int_0^inf e^{-rt} E^y[V(X_t) exp(-int_0^t (V + D))] dt
    z_1(y) = int_0^inf e^{-rt} E^y[exp(-int_0^t (V + D))] dt

are, on each region, a constant plus two exponentials.  The region
coefficients follow from value and slope matching at the knots.

Coefficients are stored anchored at the region boundaries,

    z(y) = P_i exp(alpha_{i,+} (y - y_i)) + Q_i exp(alpha_{i,-} (y - y_{i-1})) + gamma_i,

which keeps every exponential bounded by one inside its region.  In these
anchored unknowns the matching system is ``L(delta) x = c`` with

    L(delta) = [[I - J^T E_-,        I - J E_+       ],
                [(I - J^T E_-) A_-,  (I - J E_+) A_+ ]],

``A_- = diag(alpha_{2,-} .. alpha_{M,-})``, ``A_+ = diag(alpha_{1,+} .. alpha_{M-1,+})``,
``E_- = exp(A_- delta)``, ``E_+ = exp(-A_+ delta)`` for equally spaced knots
and ``J`` the upper shift.  The unknown vector is
``x = (-Q_2, .., -Q_M, P_1, .., P_{M-1})``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import (DegenerateAlphas, NonHyperbolicRegion, NonUniformKnots,
                     QuadratureNonConvergence, SingularSystem)
from .processes import BrownianDrift, StepRate, StepSurrender

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class StepModelConfig:
    """Step-rate model materialised at one premium level.

    ``mortality[i]`` and ``surrender[i]`` apply on region ``i`` (0-based) of
    ``knots``; ``r`` is the discount rate.
    """

    a: float
    b: float
    knots: tuple
    mortality: tuple
    surrender: tuple
    r: float

    def __post_init__(self):
        for name in ("knots", "mortality", "surrender"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        M = len(self.knots) + 1
        if len(self.mortality) != M or len(self.surrender) != M:
            raise ValueError("need len(knots) + 1 mortality and surrender values")
        if not self.a > 0 or not self.r > 0:
            raise ValueError("need a > 0 and r > 0")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be strictly increasing")
        if any(v < 0 for v in self.mortality + self.surrender):
            raise ValueError("rates must be >= 0")

    @property
    def M(self) -> int:
        return len(self.mortality)

    @property
    def kappa(self) -> np.ndarray:
        """Total killing-plus-discount rate per region."""
        return np.asarray(self.mortality) + np.asarray(self.surrender) + self.r

    @classmethod
    def from_rates(cls, model: BrownianDrift, V: StepRate, D: StepRate | StepSurrender | None,
                   r: float, p: float = 0.0) -> "StepModelConfig":
        """Merge the knots of ``V`` and ``D`` (evaluated at ``p``) into one config."""
        if isinstance(D, StepSurrender):
            D = D.at(p)
        if D is None:
            D = StepRate.constant(0.0)
        knots = np.union1d(V.knots, D.knots)
        # representative point of each merged region
        reps = np.concatenate([[knots[0] - 1.0], (knots[:-1] + knots[1:]) / 2, [knots[-1] + 1.0]]) \
            if len(knots) else np.array([0.0])
        return cls(model.a, model.b, tuple(knots), tuple(V(reps)), tuple(D(reps)), r)

    def mortality_rate(self) -> StepRate:
        return StepRate(self.knots, self.mortality)


@dataclass(frozen=True)
class ResolventSolution:
    knots: np.ndarray
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    particular: np.ndarray
    P: np.ndarray  # anchored at the right knot, zero on the last region
    Q: np.ndarray  # anchored at the left knot, zero on the first region

    @property
    def C_plus(self) -> np.ndarray:
        """Coefficients of ``exp(alpha_{i,+} y)`` in the unanchored form."""
        out = np.zeros_like(self.P)
        with np.errstate(over="ignore"):
            out[:-1] = self.P[:-1] * np.exp(-self.alpha_plus[:-1] * self.knots)
        return out

    @property
    def C_minus(self) -> np.ndarray:
        out = np.zeros_like(self.Q)
        with np.errstate(over="ignore"):
            out[1:] = self.Q[1:] * np.exp(-self.alpha_minus[1:] * self.knots)
        return out

    def _parts(self, y):
        y = np.asarray(y, dtype=float)
        i = np.searchsorted(self.knots, y, side="left")
        M = len(self.particular)
        right = np.append(self.knots, np.inf)[i]
        left = np.insert(self.knots, 0, -np.inf)[i]
        with np.errstate(invalid="ignore", over="ignore"):
            ep = np.where(i < M - 1, np.exp(self.alpha_plus[i] * (y - right)), 0.0)
            em = np.where(i > 0, np.exp(self.alpha_minus[i] * (y - left)), 0.0)
        return i, ep, em

    def __call__(self, y):
        i, ep, em = self._parts(y)
        return self.P[i] * ep + self.Q[i] * em + self.particular[i]

    def derivative(self, y, order: int = 1):
        i, ep, em = self._parts(y)
        return self.P[i] * self.alpha_plus[i] ** order * ep + self.Q[i] * self.alpha_minus[i] ** order * em


@dataclass(frozen=True)
class BlockSystem:
    """The knot-matching system in the unanchored coefficients.

    Unknowns are ``(C_{2,-}, .., C_{M,-}, C_{1,+}, .., C_{M-1,+})``; the first
    ``M - 1`` rows match values and the last ``M - 1`` rows match slopes.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    J: np.ndarray
    y: np.ndarray
    alpha_minus_shifted: np.ndarray  # diag(alpha_{2,-}, .., alpha_{M,-})
    alpha_plus: np.ndarray  # diag(alpha_{1,+}, .., alpha_{M-1,+})


def alpha_coeffs(config: StepModelConfig, i: int) -> tuple[float, float]:
    """Characteristic exponents ``(alpha_+, alpha_-)`` on region ``i`` (0-based)."""
    kappa = config.kappa[i]
    disc = config.b ** 2 + 2 * config.a ** 2 * kappa
    if not disc > 0 or not kappa > 0:
        raise NonHyperbolicRegion(f"region {i}: killing + discount rate {kappa} must be > 0")
    root = math.sqrt(disc)
    a2 = config.a ** 2
    return (-config.b + root) / a2, (-config.b - root) / a2


def particular_terms(config: StepModelConfig, i: int, halved_gamma: bool = False) -> tuple[float, float]:
    """Constant particular solutions ``(gamma_i, gamma_tilde_i)`` on region ``i``.

    ``halved_gamma=True`` halves ``gamma_i``; this variant does not solve the
    resolvent ODE and exists only so validation can show it being rejected.
    """
    kappa = float(config.kappa[i])
    gt = 1.0 / kappa
    g = config.mortality[i] * gt
    if halved_gamma:
        g /= 2.0
    return g, gt


def _alphas(config: StepModelConfig) -> tuple[np.ndarray, np.ndarray]:
    pairs = [alpha_coeffs(config, i) for i in range(config.M)]
    return np.array([p for p, _ in pairs]), np.array([m for _, m in pairs])


def _shift(n: int) -> np.ndarray:
    return np.eye(n, k=1)


def assemble_system(config: StepModelConfig, halved_gamma: bool = False) -> tuple[BlockSystem, BlockSystem]:
    """Value and slope matching at every knot, one system for ``z_V`` and one for ``z_1``."""
    M = config.M
    if M < 2:
        raise ValueError("matching system needs at least one knot (M >= 2)")
    n = M - 1
    ap, am = _alphas(config)
    y = np.asarray(config.knots)
    mat = np.zeros((2 * n, 2 * n))
    for i in range(n):
        # region i on the left of knot i, region i+1 on the right
        e = lambda alpha: math.exp(alpha * y[i])
        # minus unknowns: column j holds C_{j+1,-} (regions 1..M-1 in 0-based)
        mat[i, i] -= e(am[i + 1])
        mat[n + i, i] -= am[i + 1] * e(am[i + 1])
        if i > 0:
            mat[i, i - 1] += e(am[i])
            mat[n + i, i - 1] += am[i] * e(am[i])
        # plus unknowns: column n + j holds C_{j,+} (regions 0..M-2)
        mat[i, n + i] += e(ap[i])
        mat[n + i, n + i] += ap[i] * e(ap[i])
        if i + 1 < n:
            mat[i, n + i + 1] -= e(ap[i + 1])
            mat[n + i, n + i + 1] -= ap[i + 1] * e(ap[i + 1])
    g = np.array([particular_terms(config, i, halved_gamma) for i in range(M)])
    systems = []
    for col in (0, 1):
        rhs = np.concatenate([np.diff(g[:, col]), np.zeros(n)])
        systems.append(BlockSystem(mat, rhs, _shift(n), np.diag(y), np.diag(am[1:]), np.diag(ap[:-1])))
    return systems[0], systems[1]


def scaled_matrix(config: StepModelConfig, spacing: np.ndarray | float | None = None) -> np.ndarray:
    """``L(delta)`` for the anchored unknowns.

    ``spacing`` defaults to the knot gaps; a scalar gives the equally spaced case.
    """
    n = config.M - 1
    ap, am = _alphas(config)
    Am = am[1:]
    Ap = ap[:-1]
    if spacing is None:
        gaps = np.diff(config.knots)
    else:
        gaps = np.broadcast_to(np.asarray(spacing, dtype=float), (max(n - 1, 0),))
    # column c of J^T E_- uses the gap to the right of knot c; column c of J E_+ the gap to its left
    e_minus = np.ones(n)
    e_plus = np.ones(n)
    if n > 1:
        e_minus[:-1] = np.exp(Am[:-1] * gaps)
        e_plus[1:] = np.exp(-Ap[1:] * gaps)
    J = _shift(n)
    Pm = np.eye(n) - J.T * e_minus[None, :]
    Qp = np.eye(n) - J * e_plus[None, :]
    return np.block([[Pm, Qp], [Pm * Am[None, :], Qp * Ap[None, :]]])


def l0_matrix(config: StepModelConfig) -> np.ndarray:
    """``L(0)``, the equal-spacing matrix at zero spacing."""
    return scaled_matrix(config, 0.0)


def l0_inverse(config: StepModelConfig) -> np.ndarray:
    """Closed-form inverse of ``L(0)``.

    With ``K = (I - J)^{-1} (I - J^T)``, ``A_1 = (A_+ K - K A_-)^{-1}`` and
    ``A_2 = (A_- K^{-1} - K^{-1} A_+)^{-1}`` (both bordered-diagonal, inverted
    explicitly)::

        L(0)^{-1} = [[A_1 A_+ (I-J)^{-1},    -A_1 (I-J)^{-1}  ],
                     [A_2 A_- (I-J^T)^{-1},  -A_2 (I-J^T)^{-1}]]
    """
    n = config.M - 1
    ap, am = _alphas(config)
    Am = am[1:]
    Ap = ap[:-1]
    a1p, aMm = ap[0], am[-1]
    hat_p, hat_m = ap[1:-1], am[1:-1]
    s = a1p - aMm
    d = hat_m - hat_p
    if s == 0 or np.any(d == 0):
        raise DegenerateAlphas("alpha_{1,+} = alpha_{M,-} or alpha_{i,+} = alpha_{i,-} for an interior region")
    # A_1^{-1} = [[0, s], [diag(d), v]] with v = hat_p - aMm, inverted blockwise
    A1 = np.zeros((n, n))
    A1[: n - 1, 0] = -(hat_p - aMm) / (d * s)
    A1[: n - 1, 1:] = np.diag(1.0 / d) if n > 1 else np.zeros((0, 0))
    A1[n - 1, 0] = 1.0 / s
    # A_2^{-1} = [[w, diag(d2)], [s2, 0]], w = hat_m - a1p, d2 = hat_p - hat_m, s2 = aMm - a1p
    s2 = -s
    d2 = -d
    A2 = np.zeros((n, n))
    A2[0, n - 1] = 1.0 / s2
    A2[1:, : n - 1] = np.diag(1.0 / d2) if n > 1 else np.zeros((0, 0))
    A2[1:, n - 1] = -(hat_m - a1p) / (d2 * s2)
    inv_q = np.triu(np.ones((n, n)))  # (I - J)^{-1}
    inv_p = np.tril(np.ones((n, n)))  # (I - J^T)^{-1}
    top = np.hstack([A1 @ (Ap[:, None] * inv_q), -A1 @ inv_q])
    bottom = np.hstack([A2 @ (Am[:, None] * inv_p), -A2 @ inv_p])
    return np.vstack([top, bottom])


def taylor_block(config: StepModelConfig, k: int) -> np.ndarray:
    """``k``-th derivative of ``L(delta)`` at ``delta = 0`` (``k >= 1``)."""
    n = config.M - 1
    ap, am = _alphas(config)
    Am = am[1:]
    Ap = ap[:-1]
    J = _shift(n)
    jm = -J.T * (Am ** k)[None, :]
    jp = -J * ((-Ap) ** k)[None, :]
    return np.block([[jm, jp], [jm * Am[None, :], jp * Ap[None, :]]])


def uniform_spacing(config: StepModelConfig) -> float:
    gaps = np.diff(config.knots)
    if len(gaps) == 0:
        return 0.0
    if np.max(np.abs(gaps - gaps[0])) > 1e-9 * max(1.0, abs(gaps[0])):
        raise NonUniformKnots("perturbative solve needs equally spaced knots")
    return float(gaps[0])


def perturbative_solve(config: StepModelConfig, rhs: np.ndarray, order: int,
                       delta: float | None = None) -> np.ndarray:
    """Truncated series ``sum_{k<=order} delta^k x_k`` for ``L(delta) x = rhs``.

    ``x_0 = L(0)^{-1} rhs`` and
    ``x_k = -L(0)^{-1} sum_{j<k} L^{(k-j)}(0) x_j / (k-j)!``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if delta is None:
        delta = uniform_spacing(config)
    inv = l0_inverse(config)
    xs = [inv @ rhs]
    blocks = {}
    for k in range(1, order + 1):
        acc = np.zeros_like(rhs, dtype=float)
        for j in range(k):
            m = k - j
            if m not in blocks:
                blocks[m] = taylor_block(config, m) / math.factorial(m)
            acc += blocks[m] @ xs[j]
        xs.append(-(inv @ acc))
    return sum(delta ** k * x for k, x in enumerate(xs))


def _from_anchored(config: StepModelConfig, x: np.ndarray, particular: np.ndarray) -> ResolventSolution:
    n = config.M - 1
    ap, am = _alphas(config)
    P = np.zeros(config.M)
    Q = np.zeros(config.M)
    P[:n] = x[n:]
    Q[1:] = -x[:n]
    return ResolventSolution(np.asarray(config.knots), ap, am, particular, P, Q)


def solve_resolvents(config: StepModelConfig, method: str = "dense", order: int = 8,
                     halved_gamma: bool = False) -> tuple[ResolventSolution, ResolventSolution]:
    """``(z_V, z_1)`` for the configuration.

    ``method="perturbative"`` replaces the dense solve by the truncated series
    of :func:`perturbative_solve` (equally spaced knots only).
    """
    g = np.array([particular_terms(config, i, halved_gamma) for i in range(config.M)])
    ap, am = _alphas(config)
    if config.M == 1:
        z = lambda col: ResolventSolution(np.array([]), ap, am, g[:, col], np.zeros(1), np.zeros(1))
        return z(0), z(1)
    n = config.M - 1
    L = scaled_matrix(config)
    if method == "dense":
        cond = np.linalg.cond(L)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularSystem(f"matching system condition number {cond:.3g}")
    out = []
    for col in (0, 1):
        c = np.concatenate([np.diff(g[:, col]), np.zeros(n)])
        if method == "dense":
            x = np.linalg.solve(L, c)
        elif method == "perturbative":
            x = perturbative_solve(config, c, order)
        else:
            raise ValueError(f"unknown method {method!r}")
        out.append(_from_anchored(config, x, g[:, col]))
    return out[0], out[1]


def var_bm(p: float, config: StepModelConfig, density=None, A: float = 1.0, measure=None,
           tail_mass: float = 1e-10, epsabs: float = 1e-9, halved_gamma: bool = False) -> float:
    """Per-capita expected return ``int f (p z_1 - A z_V)``.

    With ``measure`` (a lattice :class:`~lapsepricing.thermodynamic.InitialMeasure`)
    the integral becomes the lattice sum; multiply by ``N`` for the cohort total.
    """
    zV, z1 = solve_resolvents(config, halved_gamma=halved_gamma)
    g = lambda x: p * z1(x) - A * zV(x)
    if measure is not None:
        return measure.expect(g)
    if density is None:
        raise ValueError("need a density or a lattice measure")
    lo = float(density.ppf(tail_mass / 2))
    hi = float(density.ppf(1 - tail_mass / 2))
    cuts = [lo] + [k for k in config.knots if lo < k < hi] + [hi]
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for u, v in zip(cuts, cuts[1:]):
            try:
                val, _ = integrate.quad(lambda x: density.pdf(x) * g(x), u, v,
                                        epsabs=epsabs, epsrel=1e-10, limit=200)
            except integrate.IntegrationWarning as exc:
                raise QuadratureNonConvergence(str(exc)) from exc
            total += val
    return float(total)


def premium_bm(config: StepModelConfig, density=None, A: float = 1.0, measure=None) -> float:
    """Break-even premium for a ``p``-independent configuration."""
    num = var_bm(0.0, config, density, A, measure)
    den = var_bm(1.0, config, density, A, measure) - num
    return -num / den
