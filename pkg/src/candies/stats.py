"""
Numerical building blocks: chi-squared distribution functions, Gaussian
densities, Mahalanobis and Hellinger distances.

The chi-squared functions are implemented on top of the regularized lower
incomplete gamma function (power series below ``a + 1``, Lentz continued
fraction above) so that results do not depend on a particular SciPy build.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from candies.errors import DataError, InvalidParameterError, NumericalError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000
_LOG_2PI = math.log(2.0 * math.pi)

RIDGE_FACTOR = 1e-6


# ---------------------------------------------------------------------------
# incomplete gamma / chi-squared
# ---------------------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by power series, valid for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericalError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_cont_frac(a: float, x: float) -> float:
    # Q(a, x) = 1 - P(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericalError(f"incomplete gamma fraction did not converge (a={a}, x={x})")


def regularized_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise InvalidParameterError(f"shape must be positive, got {a}")
    if x < 0:
        raise InvalidParameterError(f"x must be non-negative, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_frac(a, x)


def _check_dof(dof: int) -> None:
    if dof < 1 or int(dof) != dof:
        raise InvalidParameterError(f"degrees of freedom must be a positive integer, got {dof}")


def chi2_cdf(dof: int, x: float) -> float:
    """Cumulative distribution function of the chi-squared distribution."""
    _check_dof(dof)
    if x < 0:
        raise InvalidParameterError(f"x must be non-negative, got {x}")
    return regularized_lower_gamma(0.5 * dof, 0.5 * x)


def chi2_pdf(dof: int, x: float) -> float:
    _check_dof(dof)
    if x < 0:
        return 0.0
    k = 0.5 * dof
    if x == 0:
        if dof == 1:
            return math.inf
        return 0.5 if dof == 2 else 0.0
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_inverse_cdf(dof: int, q: float) -> float:
    """
    Quantile function of the chi-squared distribution.

    Safeguarded Newton iteration on :func:`chi2_cdf`: every Newton step that
    leaves the current bracket is replaced by a bisection step.

    Parameters
    ----------
    dof: int
        Degrees of freedom, at least 1.
    q: float
        Probability in ``[0, 1)``.

    Returns
    -------
    float
        The value ``x`` with ``chi2_cdf(dof, x) == q``.
    """
    _check_dof(dof)
    if not 0.0 <= q < 1.0:
        raise InvalidParameterError(f"quantile probability must lie in [0, 1), got {q}")
    if q == 0.0:
        return 0.0

    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(dof, hi) < q:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            raise NumericalError(f"cannot bracket chi2 quantile (dof={dof}, q={q})")

    # Wilson-Hilferty start
    z = _normal_quantile(q)
    h = 2.0 / (9.0 * dof)
    x = dof * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)

    for _ in range(200):
        f = chi2_cdf(dof, x) - q
        if f == 0.0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        dens = chi2_pdf(dof, x)
        step_ok = False
        if dens > 0 and math.isfinite(dens):
            nx = x - f / dens
            if lo < nx < hi:
                step_ok = True
        if not step_ok:
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 1e-15 * max(1.0, abs(x)):
            return nx
        x = nx
    return x


def _normal_quantile(p: float) -> float:
    # Acklam's rational approximation; only used as a starting point.
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    plow = 0.02425
    if p < plow:
        s = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * s + c[1]) * s + c[2]) * s + c[3]) * s + c[4]) * s + c[5]) / \
            ((((d[0] * s + d[1]) * s + d[2]) * s + d[3]) * s + 1.0)
    if p > 1.0 - plow:
        s = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * s + c[1]) * s + c[2]) * s + c[3]) * s + c[4]) * s + c[5]) / \
            ((((d[0] * s + d[1]) * s + d[2]) * s + d[3]) * s + 1.0)
    s = p - 0.5
    r = s * s
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * s / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def critical_value(dof: int, significance: float) -> float:
    """Upper critical value of a chi-squared test at the given significance."""
    if not 0.0 < significance < 1.0:
        raise InvalidParameterError(f"significance must lie in (0, 1), got {significance}")
    return chi2_inverse_cdf(dof, 1.0 - significance)


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

def regularize_covariance(cov: np.ndarray, factor: float = RIDGE_FACTOR) -> np.ndarray:
    """Symmetrize ``cov`` and add a ridge of ``factor * trace / D`` to the diagonal."""
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    ridge = factor * np.trace(cov) / d
    if not np.isfinite(ridge) or ridge <= 0.0:
        ridge = factor
    return cov + ridge * np.eye(d)


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """
    Mean and covariance of a multivariate Gaussian with cached precision,
    Cholesky factor and log-determinant.

    A covariance that is not numerically positive definite is repaired by
    repeatedly adding a ridge (see :func:`regularize_covariance`).
    """

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray = field(init=False, repr=False)
    chol: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DataError(f"covariance shape {cov.shape} does not match mean of length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericalError("non-finite Gaussian parameters")
        cov = 0.5 * (cov + cov.T)
        chol = None
        factor = RIDGE_FACTOR
        for _ in range(12):
            try:
                chol = np.linalg.cholesky(cov)
                if np.all(np.diag(chol) > 0):
                    break
            except np.linalg.LinAlgError:
                pass
            cov = regularize_covariance(cov, factor)
            factor *= 10.0
            chol = None
        if chol is None:
            raise NumericalError("covariance could not be made positive definite")
        inv_chol = np.linalg.solve(chol, np.eye(d))
        precision = inv_chol.T @ inv_chol
        mean.setflags(write=False)
        cov.setflags(write=False)
        precision.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "precision", 0.5 * (precision + precision.T))
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "logdet", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _diff(g: GaussianParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise DataError(f"sample dimension {x.shape[-1]} does not match model dimension {g.dim}")
    return x - g.mean


def mahalanobis_sq(g: GaussianParams, x) -> float | np.ndarray:
    """
    Squared Mahalanobis distance of ``x`` to the Gaussian ``g``.

    ``x`` may be a single vector or an ``(n, D)`` array, in which case an
    array of ``n`` distances is returned.
    """
    diff = _diff(g, x)
    if diff.ndim == 1:
        z = np.linalg.solve(g.chol, diff) if g.dim > 1 else diff / g.chol[0, 0]
        return float(z @ z)
    z = np.linalg.solve(g.chol, diff.T)
    return np.einsum("ij,ij->j", z, z)


def gaussian_log_density(g: GaussianParams, x) -> float | np.ndarray:
    """Log density of ``N(x | mean, covariance)``."""
    d2 = mahalanobis_sq(g, x)
    return -0.5 * (g.dim * _LOG_2PI + g.logdet + d2)


def hellinger_distance(a: GaussianParams, b: GaussianParams) -> float:
    """Closed-form Hellinger distance between two Gaussians, in ``[0, 1]``."""
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    avg = 0.5 * (a.covariance + b.covariance)
    sign, logdet_avg = np.linalg.slogdet(avg)
    if sign <= 0:
        raise NumericalError("averaged covariance is not positive definite")
    delta = a.mean - b.mean
    quad = float(delta @ np.linalg.solve(avg, delta))
    log_bc = 0.25 * a.logdet + 0.25 * b.logdet - 0.5 * logdet_avg - 0.125 * quad
    h2 = 1.0 - math.exp(min(log_bc, 0.0))
    return math.sqrt(min(max(h2, 0.0), 1.0))


def logsumexp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    top = np.max(values)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.sum(np.exp(values - top))))
