"""Chain-binomial SIR epidemic used as a stochastic test simulator.

The input ``x`` in [0, 1] is mapped affinely to a per-contact transmission
probability.  Each run returns the cumulative fraction of the population
ever infected after ``horizon`` steps.

Random draws come from a counter-based generator keyed on ``(seed, step)``
and turned into binomial counts by inverse-CDF search.  Because the stream
does not depend on ``x`` in ``"crn"`` mode, fixing the seed and sweeping
``x`` gives a coherent trajectory.  In ``"iid"`` mode the bits of ``x`` are
mixed into the key so distinct inputs get independent streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import qmc

from .replication import RawData, empirical_moments, empirical_quantiles

_U53 = 1.0 / 9007199254740992.0  # 2**-53


@dataclass(frozen=True)
class SIRConfig:
    """Parameters of the chain-binomial epidemic.

    ``beta_min``/``beta_max`` bound the per-contact transmission probability
    reached at ``x = 0`` and ``x = 1``.
    """

    population: int = 1000
    initial_infected: int = 10
    recovery_prob: float = 0.1
    beta_min: float = 0.0
    beta_max: float = 0.0003
    horizon: int = 200
    mode: str = "iid"

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be positive")
        if not 0 < self.initial_infected < self.population:
            raise ValueError("need 0 < initial_infected < population")
        if not 0.0 < self.recovery_prob < 1.0:
            raise ValueError("recovery_prob must lie in (0, 1)")
        # beta_min == beta_max is allowed so an all-zero (no spread) config exists
        if not 0.0 <= self.beta_min <= self.beta_max <= 1.0:
            raise ValueError("need 0 <= beta_min <= beta_max <= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.mode not in ("iid", "crn"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def transmission(self, x):
        return self.beta_min + np.asarray(x, dtype=float) * (self.beta_max - self.beta_min)


@numba.njit(cache=True)
def _mix(z):
    # splitmix64 finalizer
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _uniform(key, step, stream):
    h = _mix(key ^ _mix(np.uint64(step) * np.uint64(4) + np.uint64(stream)))
    return (float(h >> np.uint64(11)) + 0.5) * _U53


@numba.njit(cache=True)
def _binomial_inv(n, p, u):
    """Smallest k with P(Bin(n, p) <= k) >= u, searched outward from the mode."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0 - p
    ratio = p / q
    m = int(math.floor((n + 1) * p))
    if m > n:
        m = n
    logpm = (math.lgamma(n + 1.0) - math.lgamma(m + 1.0) - math.lgamma(n - m + 1.0)
             + m * math.log(p) + (n - m) * math.log1p(-p))
    pm = math.exp(logpm)
    # cdf at the mode, summing the lower tail until it is negligible
    cdf = pm
    f = pm
    j = m
    while j > 0:
        f *= j / ((n - j + 1) * ratio)
        j -= 1
        cdf += f
        if f < cdf * 1e-17:
            break
    k = m
    if u <= cdf:
        f = pm
        while k > 0:
            below = cdf - f
            if below < u:
                break
            f *= k / ((n - k + 1) * ratio)
            cdf = below
            k -= 1
        return k
    f = pm
    while cdf < u and k < n:
        f *= ratio * (n - k) / (k + 1.0)
        k += 1
        cdf += f
        if f == 0.0:
            break
    return k


@numba.njit(cache=True)
def _key(seed, xbits, crn):
    if crn:
        return _mix(seed)
    return _mix(seed ^ _mix(xbits))


@numba.njit(cache=True)
def _run_batch(betas, keys, population, infected0, gamma, horizon):
    out = np.empty(betas.shape[0])
    for b in range(betas.shape[0]):
        beta = betas[b]
        key = keys[b]
        s = population - infected0
        i = infected0
        lq = math.log1p(-beta) if beta < 1.0 else -np.inf
        for t in range(horizon):
            if i == 0:
                break
            p_inf = -math.expm1(i * lq)
            new = _binomial_inv(s, p_inf, _uniform(key, t, 0))
            rec = _binomial_inv(i, gamma, _uniform(key, t, 1))
            s -= new
            i += new - rec
        out[b] = (population - s) / population
    return out


@numba.njit(cache=True)
def _run_path(beta, key, population, infected0, gamma, horizon):
    path = np.zeros((horizon + 1, 3), dtype=np.int64)
    s = population - infected0
    i = infected0
    path[0, 0] = s
    path[0, 1] = i
    lq = math.log1p(-beta) if beta < 1.0 else -np.inf
    for t in range(horizon):
        if i > 0:
            p_inf = -math.expm1(i * lq)
            new = _binomial_inv(s, p_inf, _uniform(key, t, 0))
            rec = _binomial_inv(i, gamma, _uniform(key, t, 1))
            s -= new
            i += new - rec
        path[t + 1, 0] = s
        path[t + 1, 1] = i
        path[t + 1, 2] = population - s - i
    return path


@numba.njit(cache=True)
def _keys(seeds, xbits, crn):
    out = np.empty(seeds.shape[0], dtype=np.uint64)
    for b in range(seeds.shape[0]):
        out[b] = _key(seeds[b], xbits[b], crn)
    return out


def _as_keys(config: SIRConfig, x, seeds):
    x = np.ascontiguousarray(x, dtype=np.float64)
    seeds = np.ascontiguousarray(np.asarray(seeds).astype(np.uint64))
    # +0.0 folds -0.0 onto 0.0 so both share a stream
    xbits = (x + 0.0).view(np.uint64)
    return _keys(seeds, xbits, config.mode == "crn")


def simulate(config: SIRConfig, x, seed) -> np.ndarray | float:
    """Run the epidemic at input(s) ``x`` with seed(s) ``seed``.

    ``x`` and ``seed`` broadcast against each other.  A scalar pair returns
    a float; otherwise an array of attack fractions.
    """
    x_arr, s_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(seed))
    if np.any((x_arr < 0.0) | (x_arr > 1.0)):
        raise ValueError("x must lie in [0, 1]")
    shape = x_arr.shape
    xf = x_arr.ravel()
    keys = _as_keys(config, xf, s_arr.ravel())
    out = _run_batch(config.transmission(xf), keys, config.population,
                     config.initial_infected, config.recovery_prob, config.horizon)
    if shape == ():
        return float(out[0])
    return out.reshape(shape)


def simulate_path(config: SIRConfig, x: float, seed: int) -> np.ndarray:
    """Full ``(horizon + 1, 3)`` array of S, I, R counts for one run."""
    keys = _as_keys(config, np.array([x]), np.array([seed]))
    return _run_path(float(config.transmission(x)), keys[0], config.population,
                     config.initial_infected, config.recovery_prob, config.horizon)


def derive_seeds(master_seed: int, count: int) -> np.ndarray:
    """Deterministic per-evaluation seeds from one master seed."""
    return np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)


@dataclass
class SIRSimulator:
    """Callable wrapper ``sim(X, seeds) -> y`` used by the sequential loop."""

    config: SIRConfig = field(default_factory=SIRConfig)
    reentrant: bool = True

    def __call__(self, X, seeds):
        X = np.asarray(X, dtype=float)
        x = X[:, 0] if X.ndim == 2 else X
        return simulate(self.config, x, seeds)


def build_dataset(config: SIRConfig, layout: str = "replicated", n_unique: int = 25,
                  reps: int = 100, n_points: int = 2500, seed: int = 0) -> RawData:
    """Training data in one of two layouts.

    ``"replicated"`` puts ``reps`` independent runs at each of ``n_unique``
    equispaced inputs; ``"dense"`` evaluates ``n_points`` scrambled Halton
    inputs once each.
    """
    if layout == "replicated":
        if n_unique < 1 or reps < 1:
            raise ValueError("n_unique and reps must be positive")
        grid = np.linspace(0.0, 1.0, n_unique) if n_unique > 1 else np.array([0.5])
        x = np.repeat(grid, reps)
    elif layout == "dense":
        if n_points < 1:
            raise ValueError("n_points must be positive")
        x = qmc.Halton(d=1, scramble=True, seed=seed).random(n_points)[:, 0]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    seeds = derive_seeds(seed, x.size)
    y = simulate(config, x, seeds)
    return RawData(x[:, None], np.asarray(y))


REFERENCE_LEVELS = (0.05, 0.5, 0.95)


def reference_stats(config: SIRConfig, grid_size: int = 51, reps: int = 10000,
                    levels=REFERENCE_LEVELS, seed: int = 12345) -> dict:
    """Moments and quantiles from ``reps`` runs on an equispaced grid.

    Returns a dict of columns: ``x``, ``mean``, ``var``, ``skew`` and one
    ``q..`` column per level (see :func:`replgp.io.level_name`).
    Skewness is NaN where the sample variance is zero.
    """
    from .io import level_name

    if grid_size < 2 or reps < 4:
        raise ValueError("need grid_size >= 2 and reps >= 4")
    # i.i.d. draws regardless of the configured mode
    cfg = SIRConfig(**{**config.__dict__, "mode": "iid"})
    grid = np.linspace(0.0, 1.0, grid_size)
    seeds = derive_seeds(seed, grid_size * reps).reshape(grid_size, reps)
    y = simulate(cfg, np.repeat(grid[:, None], reps, axis=1), seeds)
    table = {"x": grid, "mean": np.empty(grid_size), "var": np.empty(grid_size),
             "skew": np.empty(grid_size)}
    qcols = [level_name(a) for a in levels]
    for name in qcols:
        table[name] = np.empty(grid_size)
    for g in range(grid_size):
        mean, var, skew = empirical_moments(y[g])
        table["mean"][g] = mean
        table["var"][g] = var
        table["skew"][g] = np.nan if skew is None else skew
        qs = empirical_quantiles(y[g], levels)
        for name, q in zip(qcols, qs):
            table[name][g] = q
    return table
