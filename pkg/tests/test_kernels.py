import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import LinAlgError

from replgp.kernels import (FAMILIES, JITTER, Domain, Kernel, corr_and_grad, cross_cov,
                            kernel_eval, safe_cholesky)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_distance_is_one(family):
    k = Kernel(family, [0.3, 2.0])
    x = np.array([0.1, 0.7])
    assert kernel_eval(k, x, x) == 1.0


def test_se_value():
    k = Kernel("squared-exponential", [1.0])
    assert kernel_eval(k, [0.0], [1.0]) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_matern_value():
    # r = |x - x'| / theta = 0.5
    k = Kernel("matern-5/2", [2.0])
    r = 0.5
    want = (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)
    assert kernel_eval(k, [0.0], [1.0]) == pytest.approx(want, rel=1e-14)


def test_aliases_and_validation():
    assert Kernel("rbf", [1.0]).family == "squared-exponential"
    assert Kernel("matern52", [1.0]).family == "matern-5/2"
    with pytest.raises(ValueError):
        Kernel("cosine", [1.0])
    with pytest.raises(ValueError):
        Kernel("se", [0.0])
    with pytest.raises(ValueError):
        Kernel("se", [1.0], process_variance=0.0)
    with pytest.raises(ValueError):
        Domain([0.0, 1.0], [1.0, 1.0])


def test_dimension_mismatch():
    k = Kernel("se", [1.0, 1.0])
    with pytest.raises(ValueError):
        kernel_eval(k, [0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        cross_cov(k, np.zeros((2, 3)), np.zeros((2, 2)))


def test_small_cross_cov_cases():
    k = Kernel("matern-5/2", [0.4])
    assert np.array_equal(cross_cov(k, [[0.3]], [[0.3]]), [[1.0]])
    X = np.array([[0.3], [0.3]])
    assert np.array_equal(cross_cov(k, X, X), np.ones((2, 2)))


@pytest.mark.parametrize("family", FAMILIES)
def test_cross_cov_matches_kernel_eval(family, rng):
    k = Kernel(family, rng.uniform(0.1, 1.0, 3))
    X1 = rng.uniform(size=(3, 3))
    X2 = rng.uniform(size=(4, 3))
    C = cross_cov(k, X1, X2)
    loop = np.array([[kernel_eval(k, a, b) for b in X2] for a in X1])
    np.testing.assert_allclose(C, loop, rtol=0, atol=1e-15)


@pytest.mark.parametrize("family", FAMILIES)
def test_symmetric_unit_diagonal_in_range(family, rng):
    k = Kernel(family, [0.2, 0.5])
    X = rng.uniform(size=(50, 2))
    C = cross_cov(k, X, X)
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 1.0)
    assert np.all((C > 0) & (C <= 1))


@pytest.mark.parametrize("family", FAMILIES)
def test_cholesky_with_jitter_up_to_500_points(family, rng):
    # 500 points in 1d with a long lengthscale is nearly singular
    X = rng.uniform(size=(500, 1))
    C = cross_cov(Kernel(family, [0.5]), X, X)
    L, used = safe_cholesky(C, JITTER)
    assert np.all(np.isfinite(L))
    assert used >= JITTER


def test_safe_cholesky_gives_up():
    A = -np.eye(3)
    with pytest.raises(LinAlgError):
        safe_cholesky(A, 1e-8)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(0.01, 5.0), st.floats(1.0001, 3.0),
       st.floats(-1, 1), st.floats(-1, 1))
def test_lengthscale_monotone(family, theta, factor, x, xp):
    if x == xp:
        return
    c1 = kernel_eval(Kernel(family, [theta]), [x], [xp])
    c2 = kernel_eval(Kernel(family, [theta * factor]), [x], [xp])
    assert c2 >= c1


@pytest.mark.parametrize("family", FAMILIES)
def test_lengthscale_derivative_fd(family, rng):
    theta = rng.uniform(0.2, 1.0, 2)
    X = rng.uniform(size=(6, 2))
    _, dC = corr_and_grad(Kernel(family, theta), X)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        Cp = cross_cov(Kernel(family, theta * np.exp(e)), X, X)
        Cm = cross_cov(Kernel(family, theta * np.exp(-e)), X, X)
        np.testing.assert_allclose(dC[d], (Cp - Cm) / (2 * h), atol=1e-8)
