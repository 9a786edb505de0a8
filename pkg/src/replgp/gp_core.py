"""Exact GP inference on compacted (unique-design) data.

With ``a_i`` replicates at each unique input the posterior only needs the
n x n system ``C_n + Lambda_n A_n^{-1}`` built on replicate means, where
``Lambda_n = diag(r(x_i)) / sigma^2``.  All matrices here are kept in
correlation units; the process variance multiplies them back.

A numerical nugget ``jitter`` is treated as extra noise-to-signal ratio on
every *observation*, so design ``i`` receives ``jitter / a_i`` on the
diagonal.  This keeps the replicate-averaging identity exact: ``a``
replicates of noise ratio ``lambda`` are the same as one pseudo-observation
of ratio ``lambda / a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.stats import qmc

from .kernels import (JITTER, Domain, Kernel, corr_and_grad, cross_cov, safe_cholesky,
                      _as_points)
from .noise import ConstantNoise, NoiseModel
from .replication import CompactedDesign

logger = logging.getLogger(__name__)

TRENDS = ("zero", "constant")
_LOG2PI = np.log(2.0 * np.pi)
_FAIL = 1e25


class FitError(RuntimeError):
    """Raised when no multi-start produces a usable factorization."""


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    latent_var: np.ndarray
    obs_var: np.ndarray

    @property
    def latent_sd(self):
        return np.sqrt(self.latent_var)

    @property
    def obs_sd(self):
        return np.sqrt(self.obs_var)


@dataclass
class FitOptions:
    """Settings for maximum-likelihood fitting.

    ``likelihood="means"`` scores only the replicate means under the
    collapsed covariance.  ``"full"`` adds the within-replicate term so the
    value equals the joint density of all N raw outputs.
    """

    family: str = "matern-5/2"
    trend: str = "constant"
    n_starts: int = 5
    seed: int = 0
    likelihood: str = "means"
    jitter: float = JITTER
    maxiter: int = 200
    lengthscale_bounds: tuple = (1e-3, 10.0)
    variance_bounds: tuple = (1e-8, 1e4)
    domain: Domain | None = None


def _domain_width(design: CompactedDesign, domain: Domain | None) -> np.ndarray:
    if domain is not None:
        return domain.width
    if design.n == 0:
        return np.ones(design.d)
    w = np.ptp(design.Xu, axis=0)
    return np.where(w > 0, w, 1.0)


def _noise_ratio(noise: NoiseModel, kernel: Kernel, Xu, jitter) -> np.ndarray:
    return noise(Xu) / kernel.process_variance + jitter


@dataclass(frozen=True)
class GPModel:
    """A GP conditioned on a compacted design at fixed hyperparameters.

    Use :func:`condition` to build one and :func:`fit` to also estimate the
    hyperparameters.
    """

    kernel: Kernel
    noise: NoiseModel
    design: CompactedDesign
    trend: str
    beta: float
    chol: np.ndarray
    weights: np.ndarray
    jitter: float
    nll: float = np.nan
    degenerate: bool = False
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def noise_ratio(self) -> np.ndarray:
        """Per-observation noise-to-signal ratio at each unique design."""
        return _noise_ratio(self.noise, self.kernel, self.design.Xu, self.jitter)

    def predict(self, X, chunk: int = 4096) -> Prediction:
        """Posterior mean, latent variance and observation variance at ``X``."""
        X = _as_points(X, self.kernel.dim)
        s2 = self.kernel.process_variance
        mean = np.empty(X.shape[0])
        latent = np.empty(X.shape[0])
        for start in range(0, X.shape[0], chunk):
            sl = slice(start, start + chunk)
            if self.n == 0:
                mean[sl] = self.beta
                latent[sl] = s2
                continue
            c = cross_cov(self.kernel, self.design.Xu, X[sl])
            mean[sl] = self.beta + c.T @ self.weights
            V = solve_triangular(self.chol, c, lower=True, check_finite=False)
            latent[sl] = s2 * np.maximum(1.0 - np.einsum("ij,ij->j", V, V), 0.0)
        return Prediction(mean, latent, latent + self.noise(X))

    def whitened(self, X) -> np.ndarray:
        """``L^{-1} c(X_u, X)``, the building block of posterior covariances."""
        X = _as_points(X, self.kernel.dim)
        if self.n == 0:
            return np.zeros((0, X.shape[0]))
        c = cross_cov(self.kernel, self.design.Xu, X)
        return solve_triangular(self.chol, c, lower=True, check_finite=False)

    def posterior_corr(self, X1, X2) -> np.ndarray:
        """Posterior covariance of the latent process divided by sigma^2."""
        return cross_cov(self.kernel, X1, X2) - self.whitened(X1).T @ self.whitened(X2)

    def with_design(self, design: CompactedDesign) -> GPModel:
        """Same hyperparameters and noise model, new data."""
        return condition(design, self.kernel, self.noise, self.trend, jitter=self.jitter)


def _gls_beta(chol, resid_source, trend):
    if trend == "zero":
        return 0.0
    ones = np.ones(chol.shape[0])
    ki1 = cho_solve((chol, True), ones, check_finite=False)
    return float(ki1 @ resid_source / (ki1 @ ones))


def condition(design: CompactedDesign, kernel: Kernel, noise: NoiseModel | None = None,
              trend: str = "constant", beta: float | None = None,
              jitter: float = JITTER) -> GPModel:
    """Condition the GP on ``design`` with all hyperparameters fixed.

    ``beta`` overrides the trend coefficient; by default it is the GLS
    estimate for ``trend="constant"`` and 0 for ``trend="zero"``.
    """
    if trend not in TRENDS:
        raise ValueError(f"trend must be one of {TRENDS}")
    if noise is None:
        noise = ConstantNoise(0.0, fixed=True)
    n = design.n
    if n == 0:
        b = 0.0 if beta is None else float(beta)
        return GPModel(kernel, noise, design, trend, b, np.zeros((0, 0)), np.zeros(0), jitter)
    if design.d != kernel.dim:
        raise ValueError(f"design has dimension {design.d}, kernel {kernel.dim}")
    counts = design.counts.astype(float)
    lam = noise(design.Xu) / kernel.process_variance
    C = cross_cov(kernel, design.Xu, design.Xu)
    L, used = safe_cholesky(C + np.diag(lam / counts), jitter, 1.0 / counts)
    if used != jitter:
        logger.warning("jitter raised from %g to %g", jitter, used)
    b = _gls_beta(L, design.means, trend) if beta is None else float(beta)
    w = cho_solve((L, True), design.means - b, check_finite=False)
    return GPModel(kernel, noise, design, trend, b, L, w, used)


# ---------------------------------------------------------------------------
# likelihood


class _Objective:
    """Negative log-likelihood over ``[log theta, log sigma2, noise params]``."""

    def __init__(self, design: CompactedDesign, family, noise: NoiseModel, trend,
                 jitter, likelihood):
        if likelihood not in ("means", "full"):
            raise ValueError("likelihood must be 'means' or 'full'")
        self.design = design
        self.family = family
        self.noise = noise
        self.trend = trend
        self.jitter = jitter
        self.likelihood = likelihood
        self.d = design.d
        self.counts = design.counts.astype(float)
        if likelihood == "full":
            multi = design.counts >= 2
            if np.any(np.isnan(design.emp_vars[multi])):
                raise ValueError("full likelihood needs empirical variances")
            self.ss = np.where(multi, (self.counts - 1) * np.nan_to_num(design.emp_vars), 0.0)

    @property
    def size(self):
        return self.d + 1 + self.noise.n_params

    def unpack(self, p):
        p = np.asarray(p, dtype=float)
        kernel = Kernel(self.family, np.exp(p[: self.d]), np.exp(p[self.d]))
        noise = self.noise.with_params(p[self.d + 1:]) if self.noise.n_params else self.noise
        return kernel, noise

    def pack(self, kernel: Kernel, noise: NoiseModel):
        return np.concatenate([np.log(kernel.lengthscales), [np.log(kernel.process_variance)],
                               noise.get_params()])

    def __call__(self, p, grad=True):
        kernel, noise = self.unpack(p)
        D = self.design
        a = self.counts
        s2 = kernel.process_variance
        r = noise(D.Xu)
        C, dC = corr_and_grad(kernel, D.Xu)
        Kt = C + np.diag((r / s2 + self.jitter) / a)
        L, _ = safe_cholesky(Kt, 0.0)
        n = D.n
        beta = _gls_beta(L, D.means, self.trend)
        res = D.means - beta
        u = cho_solve((L, True), res, check_finite=False)
        quad = res @ u / s2
        value = 0.5 * (n * _LOG2PI + n * np.log(s2) + quad) + np.sum(np.log(np.diag(L)))
        rt = r + s2 * self.jitter
        if self.likelihood == "full":
            value += np.sum(0.5 * (a - 1) * (_LOG2PI + np.log(rt)) + 0.5 * np.log(a)
                            + 0.5 * self.ss / rt)
        if not grad:
            return value
        # W = K^{-1} - alpha alpha^T in covariance units
        Kinv, info = dpotri(L, lower=1)
        if info != 0:
            raise LinAlgError("dpotri failed")
        Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
        alpha = u / s2
        W = Kinv / s2 - np.outer(alpha, alpha)
        g = np.empty(self.size)
        for k in range(self.d):
            g[k] = 0.5 * s2 * np.sum(W * dC[k])
        Wdiag = np.diag(W)
        # dK/dlog s2 = s2 C + s2 jitter / a
        g[self.d] = 0.5 * (s2 * np.sum(W * C) + s2 * self.jitter * np.sum(Wdiag / a))
        if self.likelihood == "full":
            dw = 0.5 * (a - 1) / rt - 0.5 * self.ss / rt**2
            g[self.d] += np.sum(dw * s2 * self.jitter)
        if noise.n_params:
            J = noise.param_jacobian(D.Xu)  # (n, q): dr_i / dq
            gq = 0.5 * (Wdiag / a) @ J
            if self.likelihood == "full":
                gq = gq + dw @ J
            g[self.d + 1:] = gq
        return value, g

    def safe(self, p):
        try:
            v, g = self(p)
        except (LinAlgError, FloatingPointError, ValueError):
            return _FAIL, np.zeros(self.size)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return _FAIL, np.zeros(self.size)
        return v, g


def neg_log_likelihood(kernel: Kernel, noise: NoiseModel, design: CompactedDesign,
                       trend: str = "constant", jitter: float = JITTER,
                       likelihood: str = "means", grad: bool = False):
    """Negative log-likelihood of the design at the given hyperparameters.

    With ``likelihood="means"`` this is ``-log N(ybar; beta, sigma^2 (C_n +
    Lambda_n A_n^{-1}))``.  With ``grad=True`` also returns the gradient with
    respect to ``[log lengthscales, log process_variance, noise params]``.
    The trend coefficient is profiled out by GLS, so it contributes no
    gradient term.
    """
    obj = _Objective(design, kernel.family, noise, trend, jitter, likelihood)
    p = obj.pack(kernel, noise)
    if grad:
        return obj(p, grad=True)
    return obj(p, grad=False)


def parameter_vector(kernel: Kernel, noise: NoiseModel) -> np.ndarray:
    """The free-parameter vector used by :func:`neg_log_likelihood` gradients."""
    return np.concatenate([np.log(kernel.lengthscales), [np.log(kernel.process_variance)],
                           noise.get_params()])


def from_parameter_vector(p, family: str, noise: NoiseModel):
    d = len(p) - 1 - noise.n_params
    kernel = Kernel(family, np.exp(p[:d]), np.exp(p[d]))
    return kernel, (noise.with_params(p[d + 1:]) if noise.n_params else noise)


# ---------------------------------------------------------------------------
# fitting


def _degenerate_model(design, noise, options, width):
    """Flat model for data whose means show no spread at all."""
    scale = float(np.max(np.abs(design.means))) ** 2
    kernel = Kernel(options.family, options.lengthscale_bounds[1] * width,
                    1e-8 * max(scale, 1e-300))
    beta = float(design.means[0]) if options.trend == "constant" else None
    model = condition(design, kernel, noise, options.trend, beta=beta, jitter=options.jitter)
    return replace(model, degenerate=True)


def fit(design: CompactedDesign, noise: NoiseModel | str = "constant",
        options: FitOptions | None = None, init: Kernel | None = None) -> GPModel:
    """Maximum-likelihood GP fit with multi-start L-BFGS-B.

    ``noise`` may be ``"constant"`` (noise variance estimated) or any
    :class:`~replgp.noise.NoiseModel`; its free parameters, if any, are
    estimated jointly with the kernel and its current values seed the
    default start.  ``init`` seeds the default start for the kernel.
    """
    options = options or FitOptions()
    if options.trend not in TRENDS:
        raise ValueError(f"trend must be one of {TRENDS}")
    width = _domain_width(design, options.domain)
    spread = float(np.var(design.means)) if design.n else 0.0
    if isinstance(noise, str):
        if noise != "constant":
            raise ValueError(f"unknown noise spec {noise!r}")
        noise = ConstantNoise.initial_guess(design)
    if design.n >= 1 and spread == 0.0:
        return _degenerate_model(design, noise, options, width)
    if design.n < 2:
        raise ValueError("need at least 2 unique designs to estimate lengthscales")

    obj = _Objective(design, options.family, noise, options.trend, options.jitter,
                     options.likelihood)
    lo_t, hi_t = options.lengthscale_bounds
    lo_v, hi_v = options.variance_bounds
    bounds = ([(np.log(lo_t * w), np.log(hi_t * w)) for w in width]
              + [(np.log(lo_v * spread), np.log(hi_v * spread))]
              + list(noise.param_bounds(design)))
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])

    if init is None:
        init = Kernel(options.family, 0.2 * width, spread)
    x0 = np.clip(obj.pack(init, noise), lb, ub)
    starts = [x0]
    if options.n_starts > 1:
        sampler = qmc.LatinHypercube(d=len(lb), seed=options.seed)
        starts += list(qmc.scale(sampler.random(options.n_starts - 1), lb, ub))

    best_p, best_v = None, np.inf
    n_ok = 0
    for s in starts:
        v0, _ = obj.safe(s)
        if v0 < best_v:
            best_p, best_v = np.array(s), v0
        if v0 >= _FAIL:
            continue
        res = minimize(obj.safe, s, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": options.maxiter})
        if res.fun < _FAIL:
            n_ok += 1
        if res.fun < best_v:
            best_p, best_v = np.array(res.x), float(res.fun)
    if best_p is None or best_v >= _FAIL:
        raise FitError("all multi-starts failed to factorize the covariance")
    kernel, noise_fit = obj.unpack(best_p)
    model = condition(design, kernel, noise_fit, options.trend, jitter=options.jitter)
    return replace(model, nll=float(best_v),
                   info={"starts": len(starts), "converged": n_ok,
                         "likelihood": options.likelihood})


def reinterpolate(model: GPModel) -> GPModel:
    """Noise-free GP through the posterior mean at the unique designs.

    The kernel is shared with ``model``; each design enters once with zero
    noise, so the new mean interpolates ``m_n`` at the designs.
    """
    D = model.design
    means = model.predict(D.Xu).mean if D.n else np.zeros(0)
    interp = CompactedDesign.from_summaries(D.Xu, np.ones(D.n, dtype=np.int64), means)
    return condition(interp, model.kernel, ConstantNoise(0.0, fixed=True), model.trend,
                     jitter=model.jitter)
