import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from candies.errors import DataError, InvalidParameterError
from candies.stats import (
    GaussianParams,
    chi2_cdf,
    chi2_inverse_cdf,
    critical_value,
    gaussian_log_density,
    hellinger_distance,
    logsumexp,
    mahalanobis_sq,
    regularize_covariance,
)

# frozen from scipy.stats.chi2 (independent implementation)
CDF_REFERENCE = [
    (1, 0.5, 0.5204998778130466),
    (2, 4.60517, 0.899999990700595),
    (5, 11.0705, 0.9500000445719564),
    (11, 19.675, 0.949997938199087),
    (20, 31.41, 0.9499947607976849),
    (40, 10.0, 3.452135820914455e-07),
]
QUANTILE_REFERENCE = [
    (1, 0.9, 2.705543454095404),
    (2, 0.95, 5.991464547107979),
    (5, 0.95, 11.070497693516351),
    (18, 0.99, 34.805305734705065),
    (19, 0.99, 36.19086912927004),
]


def test_cdf_lower_bound():
    assert chi2_cdf(2, 0.0) == 0.0


@pytest.mark.parametrize("dof,x,expected", CDF_REFERENCE)
def test_cdf_matches_reference(dof, x, expected):
    assert chi2_cdf(dof, x) == pytest.approx(expected, abs=1e-10)


def test_cdf_two_dof_closed_form():
    for x in (0.1, 1.0, 4.60517, 12.0, 50.0):
        assert chi2_cdf(2, x) == pytest.approx(1 - math.exp(-x / 2), abs=1e-12)


def test_cdf_eleven_dof_against_quadrature():
    from scipy.integrate import quad
    val, _ = quad(lambda t: sst.chi2.pdf(t, 11), 0, 19.675)
    assert chi2_cdf(11, 19.675) == pytest.approx(val, abs=1e-9)
    assert chi2_cdf(11, 19.675) == pytest.approx(0.95, abs=1e-3)


@pytest.mark.parametrize("dof,q,expected", QUANTILE_REFERENCE)
def test_quantile_matches_reference(dof, q, expected):
    assert chi2_inverse_cdf(dof, q) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("dof,q,root", [(2, 0.90, 2.15), (2, 0.66, 1.47), (1, 0.90, 1.64)])
def test_region_radius_anchors(dof, q, root):
    assert math.sqrt(chi2_inverse_cdf(dof, q)) == pytest.approx(root, abs=0.01)


def test_quantile_of_zero():
    for dof in (1, 3, 30):
        assert chi2_inverse_cdf(dof, 0.0) == 0.0


@pytest.mark.parametrize("bad", [1.0, 1.5, -0.1])
def test_quantile_rejects_out_of_range(bad):
    with pytest.raises(InvalidParameterError):
        chi2_inverse_cdf(2, bad)


def test_zero_dof_rejected():
    with pytest.raises(InvalidParameterError):
        chi2_cdf(0, 1.0)


@pytest.mark.parametrize("dof", [1, 2, 5, 20])
def test_round_trip_grid(dof):
    for q in np.arange(0.01, 1.0, 0.01):
        assert chi2_cdf(dof, chi2_inverse_cdf(dof, q)) == pytest.approx(q, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(dof=st.integers(1, 60), q=st.floats(1e-6, 0.999999))
def test_round_trip_property(dof, q):
    assert chi2_cdf(dof, chi2_inverse_cdf(dof, q)) == pytest.approx(q, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(dof=st.integers(1, 40), q1=st.floats(0.001, 0.998), dq=st.floats(1e-4, 0.001))
def test_quantile_strictly_increasing(dof, q1, dq):
    assert chi2_inverse_cdf(dof, q1) < chi2_inverse_cdf(dof, q1 + dq)


@settings(max_examples=100, deadline=None)
@given(dof=st.integers(1, 40), x=st.floats(0, 200), dx=st.floats(0, 10))
def test_cdf_monotone(dof, x, dx):
    assert chi2_cdf(dof, x) <= chi2_cdf(dof, x + dx) + 1e-15


def test_critical_values():
    assert critical_value(18, 0.01) == pytest.approx(34.805305734705065, rel=1e-9)
    with pytest.raises(InvalidParameterError):
        critical_value(18, 0.0)


def test_mahalanobis_examples():
    g = GaussianParams(np.zeros(2), np.eye(2))
    assert mahalanobis_sq(g, [0.0, 0.0]) == 0.0
    assert mahalanobis_sq(g, [3.0, 4.0]) == pytest.approx(25.0)
    h = GaussianParams(np.zeros(2), np.diag([4.0, 1.0]))
    assert mahalanobis_sq(h, [2.0, 1.0]) == pytest.approx(2.0)


def test_mahalanobis_batch_and_dimension_check():
    g = GaussianParams([1.0, 2.0, 3.0], np.diag([1.0, 2.0, 3.0]))
    X = np.random.default_rng(0).normal(size=(7, 3))
    batch = mahalanobis_sq(g, X)
    assert batch.shape == (7,)
    assert batch == pytest.approx([mahalanobis_sq(g, x) for x in X])
    with pytest.raises(DataError):
        mahalanobis_sq(g, [1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(shift=st.lists(st.floats(-50, 50), min_size=3, max_size=3), seed=st.integers(0, 1000))
def test_mahalanobis_translation_invariant(shift, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + 0.5 * np.eye(3)
    mu = rng.normal(size=3)
    x = rng.normal(size=3)
    s = np.array(shift)
    a = mahalanobis_sq(GaussianParams(mu, cov), x)
    b = mahalanobis_sq(GaussianParams(mu + s, cov), x + s)
    assert b == pytest.approx(a, rel=1e-7, abs=1e-9)
    assert a == pytest.approx(float((x - mu) @ np.linalg.solve(cov, x - mu)), rel=1e-9)


def test_log_density_examples():
    assert gaussian_log_density(GaussianParams([0.0], [[1.0]]), [0.0]) == pytest.approx(-0.9189385332046727)
    assert gaussian_log_density(GaussianParams([0.0, 0.0], np.eye(2)), [0.0, 0.0]) == pytest.approx(-1.8378770664093453)
    g = GaussianParams([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    v = np.array([0.7, -0.2])
    assert gaussian_log_density(g, g.mean + v) == pytest.approx(gaussian_log_density(g, g.mean - v))


def test_log_density_matches_scipy_and_survives_far_tails():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    cov = A @ A.T + np.eye(4)
    g = GaussianParams(np.zeros(4), cov)
    x = rng.normal(size=4)
    assert gaussian_log_density(g, x) == pytest.approx(sst.multivariate_normal(np.zeros(4), cov).logpdf(x))
    far = np.linalg.cholesky(cov) @ np.array([37.0, 0, 0, 0])  # distance^2 = 1369
    val = gaussian_log_density(g, far)
    assert np.isfinite(val) and val < -680


def test_hellinger_examples():
    a = GaussianParams(np.zeros(2), np.eye(2))
    assert hellinger_distance(a, a) == pytest.approx(0.0, abs=1e-7)
    for d in (0.5, 1.0, 3.0):
        b = GaussianParams([d, 0.0], np.eye(2))
        assert hellinger_distance(a, b) == pytest.approx(math.sqrt(1 - math.exp(-d * d / 8)))
    assert hellinger_distance(a, GaussianParams([1e3, 0.0], np.eye(2))) == pytest.approx(1.0)


def test_hellinger_against_numerical_integration():
    # independent oracle: H^2 = 1 - integral of sqrt(p q) on a grid
    a = GaussianParams([0.0, 0.0], [[1.0, 0.4], [0.4, 2.0]])
    b = GaussianParams([1.0, -0.5], [[1.5, -0.2], [-0.2, 0.7]])
    xs = np.linspace(-9, 9, 601)
    X, Y = np.meshgrid(xs, xs)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    p = sst.multivariate_normal(a.mean, a.covariance).pdf(pts)
    q = sst.multivariate_normal(b.mean, b.covariance).pdf(pts)
    bc = np.sum(np.sqrt(p * q)) * (xs[1] - xs[0]) ** 2
    assert hellinger_distance(a, b) == pytest.approx(math.sqrt(1 - bc), abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(1, 4))
def test_hellinger_bounded_and_symmetric(seed, dim):
    rng = np.random.default_rng(seed)
    def rand_gauss():
        A = rng.normal(size=(dim, dim))
        return GaussianParams(rng.normal(scale=3, size=dim), A @ A.T + 0.1 * np.eye(dim))
    a, b = rand_gauss(), rand_gauss()
    h = hellinger_distance(a, b)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(hellinger_distance(b, a), abs=1e-12)


def test_regularization_repairs_singular_covariance():
    g = GaussianParams([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    assert np.all(np.linalg.eigvalsh(g.covariance) > 0)
    r = regularize_covariance(np.diag([2.0, 4.0]))
    assert r == pytest.approx(np.diag([2.0 + 3e-6, 4.0 + 3e-6]))


def test_logsumexp():
    assert logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000 + math.log(2))
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
