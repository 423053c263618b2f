"""Comparator confidence ellipsoids: the asymptotic chi-squared region and
the exact-for-Gaussian-noise F region.

Both share the center ``theta_hat`` and shape ``R_n`` with the over-bound;
only the radius differs.  Quantiles are obtained by bracketed bisection on
the regularized incomplete gamma / beta functions, which is slow but robust,
and these are nowhere near a hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .ellipsoid import Ellipsoid
from .errors import BadConfig, DegenerateSample
from .regression import RegressionSummary

__all__ = [
    "ChiSquared",
    "FisherF",
    "QuantileSpec",
    "chi2_cdf",
    "f_cdf",
    "quantile",
    "asymptotic_ellipsoid",
    "f_ellipsoid",
]


@dataclass(frozen=True)
class ChiSquared:
    df: int


@dataclass(frozen=True)
class FisherF:
    df1: int
    df2: int


@dataclass(frozen=True)
class QuantileSpec:
    family: ChiSquared | FisherF
    level: float

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise BadConfig(f"level must be in (0, 1), got {self.level}")
        if isinstance(self.family, ChiSquared):
            if self.family.df < 1:
                raise BadConfig("chi-squared degrees of freedom must be >= 1")
        elif isinstance(self.family, FisherF):
            if self.family.df1 < 1 or self.family.df2 < 1:
                raise BadConfig("F degrees of freedom must be >= 1")
        else:
            raise BadConfig(f"unknown family {self.family!r}")


def chi2_cdf(x: float, df: int) -> float:
    """Regularized incomplete gamma form of the chi-squared CDF."""
    if x <= 0.0:
        return 0.0
    return float(special.gammainc(0.5 * df, 0.5 * x))


def f_cdf(x: float, df1: int, df2: int) -> float:
    """Regularized incomplete beta form of the F CDF."""
    if x <= 0.0:
        return 0.0
    return float(special.betainc(0.5 * df1, 0.5 * df2, df1 * x / (df1 * x + df2)))


def _bisect_quantile(cdf, level: float) -> float:
    hi = 1.0
    for _ in range(400):
        if cdf(hi) >= level:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(260):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


@lru_cache(maxsize=256)
def _cached_quantile(kind: str, df1: int, df2: int, level: float) -> float:
    if kind == "chi2":
        return _bisect_quantile(lambda x: chi2_cdf(x, df1), level)
    return _bisect_quantile(lambda x: f_cdf(x, df1, df2), level)


def quantile(spec: QuantileSpec) -> float:
    """Value ``mu`` with ``CDF(mu) = level``, well below 1e-10 in CDF error."""
    if isinstance(spec.family, ChiSquared):
        return _cached_quantile("chi2", spec.family.df, 0, spec.level)
    return _cached_quantile("f", spec.family.df1, spec.family.df2, spec.level)


def _check_sample_size(summary: RegressionSummary, n: int) -> None:
    if n <= summary.d:
        raise DegenerateSample(f"need n > d, got n={n}, d={summary.d}")
    if not math.isfinite(summary.sigma2_hat):
        raise DegenerateSample("summary has no residual variance estimate")


def asymptotic_ellipsoid(summary: RegressionSummary, n: int, level: float) -> Ellipsoid:
    """Large-sample heuristic region: radius ``mu * sigma2_hat / n`` with
    ``mu`` the chi-squared(d) quantile at ``level``.  Approximate only; it
    carries no finite-sample guarantee."""
    _check_sample_size(summary, n)
    mu = quantile(QuantileSpec(ChiSquared(summary.d), level))
    return Ellipsoid(center=summary.theta_hat.copy(), shape=summary.r_n.copy(), radius=mu * summary.sigma2_hat / n)


def f_ellipsoid(summary: RegressionSummary, n: int, level: float) -> Ellipsoid:
    """Region with exact coverage when the noise is i.i.d. Gaussian: radius
    ``mu * d * sigma2_hat / n`` with ``mu`` the F(d, n-d) quantile."""
    _check_sample_size(summary, n)
    mu = quantile(QuantileSpec(FisherF(summary.d, n - summary.d), level))
    return Ellipsoid(
        center=summary.theta_hat.copy(),
        shape=summary.r_n.copy(),
        radius=mu * summary.d * summary.sigma2_hat / n,
    )
