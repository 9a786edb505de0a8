"""Stationary correlation functions with anisotropic lengthscales."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, LinAlgError

FAMILIES = ("squared-exponential", "matern-5/2")
_ALIASES = {
    "se": "squared-exponential",
    "gaussian": "squared-exponential",
    "rbf": "squared-exponential",
    "squared-exponential": "squared-exponential",
    "matern52": "matern-5/2",
    "matern5_2": "matern-5/2",
    "matern-5/2": "matern-5/2",
}

JITTER = 1e-8
JITTER_DOUBLINGS = 6
_SQRT5 = np.sqrt(5.0)


def canonical_family(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}; choose from {FAMILIES}") from None


@dataclass(frozen=True)
class Kernel:
    """Covariance family, per-dimension lengthscales and process variance."""

    family: str
    lengthscales: np.ndarray
    process_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        theta = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        theta.setflags(write=False)
        if theta.ndim != 1 or np.any(~(theta > 0)):
            raise ValueError("lengthscales must be positive")
        if not self.process_variance > 0:
            raise ValueError("process_variance must be positive")
        object.__setattr__(self, "lengthscales", theta)
        object.__setattr__(self, "process_variance", float(self.process_variance))

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box of admissible inputs."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ValueError("domain needs lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int = 1) -> Domain:
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def scale(self, U):
        """Map points of the unit cube into the box."""
        return self.lower + np.asarray(U) * self.width


def _as_points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, d) if d > 1 or X.size == 0 else X[:, None]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {np.shape(X)}")
    return X


def _scaled_sq(kernel, X1, X2):
    """Per-dimension squared scaled differences, shape (n1, n2, d)."""
    D = (X1[:, None, :] - X2[None, :, :]) / kernel.lengthscales
    return D * D


def _corr_from_sq(family, sq):
    r2 = sq.sum(axis=-1)
    if family == "squared-exponential":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def cross_cov(kernel: Kernel, X1, X2) -> np.ndarray:
    """Correlation matrix ``c(X1_i, X2_j)``, shape ``(len(X1), len(X2))``.

    Values are correlations (unit diagonal); multiply by
    ``kernel.process_variance`` for covariances.
    """
    X1 = _as_points(X1, kernel.dim)
    X2 = _as_points(X2, kernel.dim)
    C = _corr_from_sq(kernel.family, _scaled_sq(kernel, X1, X2))
    if X1 is X2:
        C = 0.5 * (C + C.T)
    return C


def kernel_eval(kernel: Kernel, x, x_prime) -> float:
    """Correlation between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != (kernel.dim,) or x_prime.shape != (kernel.dim,):
        raise ValueError(f"points must have dimension {kernel.dim}")
    return float(cross_cov(kernel, x[None, :], x_prime[None, :])[0, 0])


def corr_and_grad(kernel: Kernel, X) -> tuple[np.ndarray, np.ndarray]:
    """Correlation of ``X`` with itself and its derivatives w.r.t. log lengthscales.

    Returns ``C`` (n, n) and ``dC`` (d, n, n).
    """
    X = _as_points(X, kernel.dim)
    sq = _scaled_sq(kernel, X, X)
    C = _corr_from_sq(kernel.family, sq)
    if kernel.family == "squared-exponential":
        dC = C[None, :, :] * np.moveaxis(sq, -1, 0)
    else:
        r = np.sqrt(sq.sum(axis=-1))
        g = (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
        dC = g[None, :, :] * np.moveaxis(sq, -1, 0)
    return C, dC


def safe_cholesky(A: np.ndarray, jitter: float = JITTER, diag_scale=None):
    """Lower Cholesky factor of ``A + jitter * diag_scale``.

    The jitter is doubled (at most ``JITTER_DOUBLINGS`` times) until the
    factorization succeeds.  ``diag_scale`` defaults to ones.  Returns the
    factor and the jitter actually used.
    """
    n = A.shape[0]
    if diag_scale is None:
        diag_scale = np.ones(n)
    for _ in range(JITTER_DOUBLINGS + 1):
        try:
            L = cholesky(A + np.diag(jitter * diag_scale), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except LinAlgError:
            pass
        jitter *= 2.0
    raise LinAlgError(f"matrix not positive definite even with jitter {jitter / 2:g}")
