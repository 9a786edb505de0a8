"""Noise variance functions r(x).

Four flavours share one small interface: call the model on an (m, d) array
to get variances, and expose any free parameters to the likelihood
optimizer through ``get_params`` / ``with_params`` / ``param_jacobian``.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import digamma

from .replication import CompactedDesign


class ReplicationError(ValueError):
    """The data lack the replication a method needs."""


def _points(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _noise_scale(design: CompactedDesign) -> float:
    """Rough magnitude of per-observation noise, used for bounds and starts."""
    s = float(np.var(design.means)) * float(design.counts.max()) if design.n else 0.0
    ev = design.emp_vars[np.isfinite(design.emp_vars)]
    if ev.size:
        s = max(s, float(ev.mean()))
    return s if s > 0 else 1.0


def _log_bounds(design):
    s = _noise_scale(design)
    return (np.log(1e-10 * s), np.log(1e4 * s))


class NoiseModel:
    """Base class; subclasses are immutable and callable."""

    floor: float = 0.0
    n_params: int = 0

    def __call__(self, X) -> np.ndarray:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def with_params(self, q) -> NoiseModel:
        return self

    def param_jacobian(self, X) -> np.ndarray:
        return np.zeros((_points(X).shape[0], 0))

    def param_bounds(self, design: CompactedDesign) -> list:
        return []


@dataclass(frozen=True)
class ConstantNoise(NoiseModel):
    """Homoscedastic noise ``r(x) = nu``; ``nu`` is estimated unless ``fixed``."""

    nu: float = 0.0
    fixed: bool = False

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def n_params(self):
        return 0 if self.fixed else 1

    @classmethod
    def initial_guess(cls, design: CompactedDesign) -> ConstantNoise:
        ev = design.emp_vars[np.isfinite(design.emp_vars)]
        if ev.size:
            nu = float(ev.mean())
        else:
            nu = 0.1 * float(np.var(design.means)) * float(np.median(design.counts)) if design.n else 0.0
        return cls(nu)

    def __call__(self, X):
        return np.full(_points(X).shape[0], self.nu)

    def get_params(self):
        if self.fixed:
            return np.zeros(0)
        with np.errstate(divide="ignore"):
            return np.array([np.log(self.nu)])

    def with_params(self, q):
        return self if self.fixed else replace(self, nu=float(np.exp(q[0])))

    def param_jacobian(self, X):
        m = _points(X).shape[0]
        return np.zeros((m, 0)) if self.fixed else np.full((m, 1), self.nu)

    def param_bounds(self, design):
        return [] if self.fixed else [_log_bounds(design)]


def _separable_poly(X, coeffs):
    X = _points(X)
    out = np.full(X.shape[0], float(coeffs[0]))
    for k, c in enumerate(coeffs[1:], start=1):
        out += c * np.sum(X**k, axis=1)
    return out


def _load_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "x" not in rows[0] or "var" not in rows[0]:
        raise ValueError(f"{path}: variance table needs columns 'x' and 'var'")
    x = np.array([float(r["x"]) for r in rows])
    v = np.array([float(r["var"]) for r in rows])
    order = np.argsort(x)
    return x[order], v[order]


@dataclass(frozen=True)
class KnownNoise(NoiseModel):
    """A variance function given in advance.

    Build from a named built-in with :meth:`from_spec`:

    ``constant:V``        r(x) = V
    ``poly:c0,c1,...``    r(x) = c0 + sum_k c_k sum_d x_d^k, clipped at 0
    ``exp-poly:c0,...``   r(x) = exp(c0 + sum_k c_k sum_d x_d^k)
    ``table:PATH``        linear interpolation of the ``var`` column of a
                          CSV with columns ``x, var`` (1d inputs)

    A plain callable is also accepted but cannot be serialized.
    """

    func: Callable = field(compare=False)
    spec: str | None = None

    @classmethod
    def from_spec(cls, spec: str) -> KnownNoise:
        kind, _, arg = spec.partition(":")
        if kind == "table":
            xs, vs = _load_table(arg)
            return cls(lambda X: np.interp(_points(X)[:, 0], xs, vs), spec)
        try:
            vals = [float(v) for v in arg.split(",")] if arg else []
        except ValueError:
            raise ValueError(f"bad numbers in noise spec {spec!r}") from None
        if kind == "constant" and len(vals) == 1:
            if vals[0] < 0:
                raise ValueError("constant noise must be nonnegative")
            v = vals[0]
            return cls(lambda X: np.full(_points(X).shape[0], v), spec)
        if kind == "poly" and vals:
            return cls(lambda X: np.maximum(_separable_poly(X, vals), 0.0), spec)
        if kind == "exp-poly" and vals:
            return cls(lambda X: np.exp(_separable_poly(X, vals)), spec)
        raise ValueError(f"unknown known-noise spec {spec!r}")

    def __call__(self, X):
        return np.maximum(np.asarray(self.func(_points(X)), dtype=float).ravel(), 0.0)


def _exponents(d, degree):
    """Multi-indices of total degree <= degree, constant term first."""
    out = [e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree]
    return sorted(out, key=lambda e: (sum(e), tuple(-v for v in e)))


@dataclass(frozen=True)
class ParametricNoise(NoiseModel):
    """``r(x) = exp(h(x))`` with ``h`` a polynomial of total degree ``degree``.

    Inputs are rescaled from ``[lower, upper]`` to ``[-1, 1]`` per dimension
    before the monomial basis is evaluated.  ``coeffs[0]`` is the constant
    term, so degree 0 is ``log`` of a constant variance.
    """

    coeffs: np.ndarray
    degree: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.degree not in (0, 1, 2, 3):
            raise ValueError("degree must be 0, 1, 2 or 3")
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "coeffs", c)
        if c.size != len(_exponents(lo.size, self.degree)):
            raise ValueError("wrong number of coefficients for this degree and dimension")

    @classmethod
    def initial(cls, design: CompactedDesign, degree: int, lower=None, upper=None):
        lower = design.Xu.min(axis=0) if lower is None else lower
        upper = design.Xu.max(axis=0) if upper is None else upper
        upper = np.where(np.asarray(upper) > np.asarray(lower), upper, np.asarray(lower) + 1.0)
        c = np.zeros(len(_exponents(design.d, degree)))
        nu = ConstantNoise.initial_guess(design).nu
        c[0] = np.log(nu) if nu > 0 else np.log(_noise_scale(design)) - 5.0
        return cls(c, degree, lower, upper)

    @property
    def n_params(self):
        return self.coeffs.size

    def basis(self, X) -> np.ndarray:
        X = _points(X)
        U = 2.0 * (X - self.lower) / (self.upper - self.lower) - 1.0
        exps = np.array(_exponents(self.lower.size, self.degree))
        return np.prod(U[:, None, :] ** exps[None, :, :], axis=2)

    def log_variance(self, X):
        return self.basis(X) @ self.coeffs

    def __call__(self, X):
        return np.exp(self.log_variance(X))

    def get_params(self):
        return self.coeffs.copy()

    def with_params(self, q):
        return replace(self, coeffs=np.asarray(q, dtype=float).copy())

    def param_jacobian(self, X):
        return self(X)[:, None] * self.basis(X)

    def param_bounds(self, design):
        return [_log_bounds(design)] + [(-30.0, 30.0)] * (self.n_params - 1)


@dataclass(frozen=True)
class StochasticKrigingNoise(NoiseModel):
    """``r(x) = exp(inner mean)`` from a GP fit to log variance estimates.

    ``inner`` is a :class:`~replgp.gp_core.GPModel`; results are floored at
    ``floor``.
    """

    inner: object
    floor: float = 0.0

    def __call__(self, X):
        return np.maximum(np.exp(self.inner.predict(_points(X)).mean), self.floor)

    def log_variance(self, X):
        """Prediction of the inner GP on the log-variance scale."""
        return self.inner.predict(_points(X))


def eval_r(noise: NoiseModel, X) -> np.ndarray:
    """Noise variance at ``X`` (never below the model's floor)."""
    return np.maximum(noise(X), noise.floor)


def _variance_floor(design: CompactedDesign) -> float:
    v = float(np.var(design.means)) if design.n else 0.0
    return 1e-12 * v if v > 0 else 1e-300


def fit_stochastic_kriging(design: CompactedDesign, options=None) -> StochasticKrigingNoise:
    """Second GP on ``log max(emp_var, floor)`` over designs with ``a_i >= 2``.

    The inner GP has a constant trend and a constant noise variance, both
    estimated by maximum likelihood.  Designs with a single observation are
    skipped here but remain part of the mean model.
    """
    from .gp_core import FitOptions, fit

    usable = (design.counts >= 2) & np.isfinite(design.emp_vars)
    if usable.sum() < 3:
        raise ReplicationError(
            f"stochastic kriging needs at least 3 designs with 2+ replicates, "
            f"found {int(usable.sum())}; use the latent or parametric variance model")
    floor = _variance_floor(design)
    logs = np.log(np.maximum(design.emp_vars[usable], floor))
    inner_design = CompactedDesign.from_summaries(
        design.Xu[usable], np.ones(int(usable.sum()), dtype=np.int64), logs)
    opts = replace(options, trend="constant") if options is not None else FitOptions()
    inner = fit(inner_design, "constant", opts)
    return StochasticKrigingNoise(inner, floor)


def fit_parametric_variance(design: CompactedDesign, degree: int, options=None):
    """Jointly fit ``r(x) = exp(h(x))`` and the kernel; returns ``(noise, model)``."""
    from .gp_core import FitOptions, fit

    options = options or FitOptions()
    if design.n <= degree + 1:
        raise ValueError(f"need more than {degree + 1} unique designs for degree {degree}")
    lo = options.domain.lower if options.domain is not None else None
    hi = options.domain.upper if options.domain is not None else None
    init = ParametricNoise.initial(design, degree, lo, hi)
    model = fit(design, init, options)
    return model.noise, model


def _log_chi2_bias(dof):
    """E[log(chi2_dof / dof)], the bias of a log sample variance."""
    return digamma(dof / 2.0) + np.log(2.0 / dof)


def fit_latent_variance(design: CompactedDesign, options=None, rounds: int = 3,
                        rtol: float = 1e-4):
    """Smoothed log-variance model that also works with little replication.

    Alternates between the mean GP and a GP on pooled log variance proxies.
    Each design's proxy combines its within-replicate sum of squares with
    the squared leave-one-out residual of its mean, and the log is corrected
    for the chi-square bias at the pooled degrees of freedom.  Stops after
    ``rounds`` refits or when the mean-model likelihood changes by less than
    ``rtol`` relatively.  Returns ``(noise, model)``.
    """
    from .gp_core import FitOptions, fit

    options = options or FitOptions()
    if design.n < 3:
        raise ValueError("need at least 3 unique designs")
    model = fit(design, "constant", options)
    a = design.counts.astype(float)
    ss = np.where(design.counts >= 2, (a - 1) * np.nan_to_num(design.emp_vars), 0.0)
    floor = _variance_floor(design)
    inner_opts = replace(options, trend="constant")
    noise = model.noise
    prev = model.nll
    for _ in range(rounds):
        loo_res = _loo_residuals(model)
        proxy = (ss + a * loo_res**2) / a
        logs = np.log(np.maximum(proxy, floor)) - _log_chi2_bias(a)
        inner_design = CompactedDesign.from_summaries(design.Xu, np.ones(design.n, dtype=np.int64), logs)
        inner = fit(inner_design, "constant", inner_opts)
        noise = StochasticKrigingNoise(inner, floor)
        model = fit(design, noise, options, init=model.kernel)
        if abs(model.nll - prev) <= rtol * max(abs(prev), 1.0):
            break
        prev = model.nll
    return noise, model


def _loo_residuals(model) -> np.ndarray:
    """Leave-one-out residuals of the replicate means (fixed hyperparameters)."""
    from scipy.linalg import cho_solve

    n = model.n
    Kinv = cho_solve((model.chol, True), np.eye(n), check_finite=False)
    res = model.design.means - model.beta
    return (Kinv @ res) / np.diag(Kinv)


NOISE_KINDS = ("homoscedastic", "sk", "latent", "parametric:D", "known:SPEC")


def fit_model(design: CompactedDesign, kind: str = "homoscedastic", options=None, init=None):
    """Fit a mean GP together with the noise model named by ``kind``.

    ``kind`` is one of ``homoscedastic``, ``sk`` (stochastic kriging),
    ``latent``, ``parametric:D`` or ``known:SPEC`` (see
    :meth:`KnownNoise.from_spec`).
    """
    from .gp_core import fit

    if kind in ("homoscedastic", "constant"):
        return fit(design, "constant", options, init=init)
    if kind == "sk":
        return fit(design, fit_stochastic_kriging(design, options), options, init=init)
    if kind == "latent":
        return fit_latent_variance(design, options)[1]
    head, _, arg = kind.partition(":")
    if head == "parametric":
        try:
            degree = int(arg)
        except ValueError:
            raise ValueError(f"bad polynomial degree in {kind!r}") from None
        return fit_parametric_variance(design, degree, options)[1]
    if head == "known":
        return fit(design, KnownNoise.from_spec(arg), options, init=init)
    raise ValueError(f"unknown noise model {kind!r}; choose from {NOISE_KINDS}")
