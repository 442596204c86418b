"""Special functions and the elementary tests used throughout the package.

The special functions delegate to :mod:`scipy.special` (Cephes-derived,
double precision) after enforcing their domains. Everything here is pure and
works on scalars; the distribution functions also broadcast over arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import special

from .errors import ConstantRegressor, DomainError

TestKind = Literal["welch_t", "two_proportion_z", "chi_square_lr", "wald_z"]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: Optional[float]
    p_value: float
    kind: TestKind
    degenerate: bool = False

    __test__ = False  # not a pytest class

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


@dataclass(frozen=True)
class EstimateWithSE:
    """Point estimate with a normal-theory confidence interval."""

    estimate: float
    se: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    degenerate: bool = False

    @classmethod
    def normal(cls, estimate: float, se: float, level: float = 0.95,
               degenerate: bool = False) -> "EstimateWithSE":
        half = std_normal_quantile(0.5 + level / 2.0) * se
        return cls(estimate, se, estimate - half, estimate + half, level, degenerate)

    def z_test(self) -> TestResult:
        """Two-sided Wald z test of ``estimate == 0``."""
        return wald_z_test(self.estimate, self.se)


def _scalar_or_array(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def std_normal_cdf(x):
    """Standard normal CDF, accurate in both tails."""
    return _scalar_or_array(special.ndtr(x))


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi))


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"normal quantile requires 0 < p < 1, got {p!r}")
    return _scalar_or_array(special.ndtri(p_arr))


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)``, the regularized incomplete beta function."""
    if not (a > 0.0 and b > 0.0):
        raise DomainError(f"incomplete beta requires a, b > 0, got a={a!r}, b={b!r}")
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"incomplete beta requires 0 <= x <= 1, got {x!r}")
    return float(special.betainc(a, b, x))


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variate with ``df`` degrees of freedom."""
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise DomainError(f"chi-square df must be a positive integer, got {df!r}")
    if not x >= 0.0:
        raise DomainError(f"chi-square statistic must be >= 0, got {x!r}")
    if math.isinf(x):
        return 0.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` via the incomplete beta."""
    if not df > 0.0:
        raise DomainError(f"t distribution requires df > 0, got {df!r}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def welch_t_test(mean_a: float, sd_a: float, n_a: int,
                 mean_b: float, sd_b: float, n_b: int) -> TestResult:
    """Unequal-variance two-sample t test from summary statistics.

    Degrees of freedom follow Welch-Satterthwaite. When both standard
    deviations are zero the result is flagged ``degenerate``: equal means give
    ``t = 0, p = 1`` and unequal means give ``t = +-inf, p = 0``.
    """
    if n_a < 2 or n_b < 2:
        raise DomainError(f"welch test needs n >= 2 per group, got {n_a} and {n_b}")
    if sd_a < 0 or sd_b < 0:
        raise DomainError("standard deviations must be non-negative")
    diff = mean_a - mean_b
    m = max(sd_a, sd_b)
    if m == 0.0:
        df = float(n_a + n_b - 2)
        if diff == 0.0:
            return TestResult(0.0, df, 1.0, "welch_t", degenerate=True)
        return TestResult(math.copysign(math.inf, diff), df, 0.0, "welch_t", degenerate=True)
    # variances relative to the larger SD, so tiny SDs do not underflow
    va = (sd_a / m) ** 2 / n_a
    vb = (sd_b / m) ** 2 / n_b
    t = diff / (m * math.sqrt(va + vb))
    df = (va + vb) ** 2 / (va * va / (n_a - 1) + vb * vb / (n_b - 1))
    return TestResult(t, df, student_t_two_sided_p(t, df), "welch_t")


def welch_t_test_samples(a, b) -> TestResult:
    """:func:`welch_t_test` applied to raw samples (sample SDs, ``ddof=1``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return welch_t_test(float(a.mean()), float(a.std(ddof=1)), a.size,
                        float(b.mean()), float(b.std(ddof=1)), b.size)


def wald_z_test(estimate: float, se: float) -> TestResult:
    if se < 0:
        raise DomainError("standard error must be non-negative")
    if se == 0.0:
        if estimate == 0.0:
            return TestResult(0.0, None, 1.0, "wald_z", degenerate=True)
        return TestResult(math.copysign(math.inf, estimate), None, 0.0, "wald_z", degenerate=True)
    z = estimate / se
    return TestResult(z, None, float(2.0 * special.ndtr(-abs(z))), "wald_z")


def two_proportion_diff(p1: float, n1: int, p0: float, n0: int,
                        level: float = 0.95) -> EstimateWithSE:
    """Difference of two independent proportions with unpooled binomial SE."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p0 <= 1.0):
        raise DomainError("proportions must lie in [0, 1]")
    if n1 < 1 or n0 < 1:
        raise DomainError("group sizes must be >= 1")
    se = math.sqrt(p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0)
    return EstimateWithSE.normal(p1 - p0, se, level, degenerate=(se == 0.0))


def ols_residuals(response, regressor) -> np.ndarray:
    """Residuals of ``response`` on ``regressor`` with an intercept."""
    y = np.asarray(response, dtype=float)
    x = np.asarray(regressor, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise DomainError("response and regressor must be equal-length vectors")
    if y.size < 2:
        raise DomainError("need at least two observations")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0.0 or np.ptp(x) == 0.0:
        raise ConstantRegressor("regressor is constant")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    return yc - slope * xc
