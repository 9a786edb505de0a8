"""Grouping of replicated observations into unique designs.

A :class:`CompactedDesign` carries everything the n-form GP equations need:
unique inputs, replicate counts, per-design means and empirical variances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DUPLICATE_RTOL = 1e-12


@dataclass(frozen=True)
class RawData:
    """Full list of N observations, one row per simulator call."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
        if y.shape[0] < 1:
            raise ValueError("need at least one observation")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class CompactedDesign:
    """Unique designs with replicate statistics.

    Attributes
    ----------
    Xu : (n, d) array of unique inputs, sorted lexicographically.
    counts : (n,) replicate counts ``a_i``.
    means : (n,) per-design output means.
    emp_vars : (n,) unbiased sample variances, NaN where ``a_i < 2``.
    emp_skews : (n,) sample skewness, NaN where ``a_i < 3`` or variance is 0.
    group_index : (N,) unique-design index of each raw row, or None when the
        design was built from summaries (e.g. a loaded model file).
    y : (N,) raw outputs aligned with ``group_index``, or None.
    """

    Xu: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    emp_vars: np.ndarray
    emp_skews: np.ndarray
    group_index: np.ndarray | None = None
    y: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Xu.shape[0]

    @property
    def d(self) -> int:
        return self.Xu.shape[1]

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    def group_values(self, i: int) -> np.ndarray:
        """Raw outputs observed at unique design ``i``."""
        if self.y is None:
            raise ValueError("raw outputs are not available for this design")
        return self.y[self.group_index == i]

    @classmethod
    def from_summaries(cls, Xu, counts, means, emp_vars=None) -> CompactedDesign:
        """Build a design from per-design summaries (no raw rows)."""
        Xu = np.atleast_2d(np.asarray(Xu, dtype=float))
        n = Xu.shape[0]
        counts = np.asarray(counts, dtype=np.int64).reshape(n)
        means = np.asarray(means, dtype=float).reshape(n)
        if emp_vars is None:
            emp_vars = np.full(n, np.nan)
        emp_vars = np.asarray(emp_vars, dtype=float).reshape(n)
        return cls(Xu, counts, means, emp_vars, np.full(n, np.nan))


def empirical_moments(values):
    """Mean, unbiased variance and skewness of one group of replicates.

    Variance uses the ``a - 1`` denominator and is None for fewer than two
    values.  Skewness is ``m3 / m2**1.5`` with biased central moments; it is
    None for fewer than three values or zero spread.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("need at least one value")
    if np.all(v == v[0]):
        # exact: v.mean() can be off by an ulp and leave a 1e-36 variance
        return float(v[0]), (0.0 if v.size > 1 else None), None
    mean = float(v.mean())
    if v.size < 2:
        return mean, None, None
    dev = v - mean
    m2 = float(np.mean(dev**2))
    var = m2 * v.size / (v.size - 1)
    if v.size < 3 or m2 == 0.0:
        return mean, var, None
    m3 = float(np.mean(dev**3))
    return mean, var, m3 / m2**1.5


def empirical_quantiles(values, levels) -> np.ndarray:
    """Sample quantiles by linear interpolation of order statistics.

    The k-th order statistic (1-based) sits at plotting position
    ``(k - 1) / (a - 1)``.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("need at least one value")
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((lv <= 0.0) | (lv >= 1.0)):
        raise ValueError("quantile levels must lie in (0, 1)")
    return np.quantile(v, lv, method="linear")


def _merge_near_duplicates(U: np.ndarray) -> np.ndarray:
    """Label rows of the (lexicographically sorted) unique matrix ``U``.

    Rows within the duplicate tolerance of an earlier representative get its
    label.
    """
    labels = np.full(U.shape[0], -1, dtype=np.int64)
    reps = []
    for i in range(U.shape[0]):
        if reps:
            R = U[reps]
            tol = DUPLICATE_RTOL * (1.0 + np.abs(R))
            hit = np.flatnonzero(np.all(np.abs(R - U[i]) <= tol, axis=1))
            if hit.size:
                labels[i] = labels[reps[hit[0]]]
                continue
        labels[i] = len(reps)
        reps.append(i)
    return labels


def compact(raw: RawData) -> CompactedDesign:
    """Collapse raw rows into unique designs with replicate statistics."""
    X, y = raw.X, raw.y
    U, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    labels = _merge_near_duplicates(U)
    group = labels[inverse]
    n = int(labels.max()) + 1
    # representative of each merged group is its first (smallest) exact row
    first = np.full(n, -1, dtype=np.int64)
    for j in range(U.shape[0] - 1, -1, -1):
        first[labels[j]] = j
    Xu = U[first]
    counts = np.bincount(group, minlength=n)
    means = np.empty(n)
    emp_vars = np.full(n, np.nan)
    emp_skews = np.full(n, np.nan)
    order = np.argsort(group, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for i in range(n):
        vals = y[order[bounds[i]:bounds[i + 1]]]
        mean, var, skew = empirical_moments(vals)
        means[i] = mean
        if var is not None:
            emp_vars[i] = var
        if skew is not None:
            emp_skews[i] = skew
    return CompactedDesign(Xu, counts.astype(np.int64), means, emp_vars, emp_skews,
                           group.astype(np.int64), y.copy())
