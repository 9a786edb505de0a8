"""Acquisition criteria and the sequential design loop.

All criteria are written for minimization problems and work at fixed
hyperparameters.  One-step lookahead uses the closed-form rank-one update
of the posterior: adding an observation at ``x+`` with noise ratio
``lam+`` lowers the latent variance at ``x`` by
``sigma^2 k(x, x+)^2 / (k(x+, x+) + lam+)`` where ``k`` is the current
posterior correlation.  A replicate at an existing design is the same
update with that design's noise ratio.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm, qmc

from .gp_core import FitOptions, GPModel
from .kernels import Domain, cross_cov
from .noise import fit_model
from .replication import CompactedDesign, RawData, compact

logger = logging.getLogger(__name__)

_GH_ORDER = 9
_TIE_RTOL = 1e-12
STRATEGIES = ("imspe-lookahead", "contour-sur+budget", "ei-plugin", "ucb", "fixed-replicates-k")


def sobol_points(n: int, domain: Domain, seed) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence scaled to ``domain``."""
    m = max(int(math.ceil(math.log2(max(n, 1)))), 0)
    U = qmc.Sobol(d=domain.dim, scramble=True, seed=seed).random_base2(m)[:n]
    return domain.scale(U)


@dataclass
class AcquisitionConfig:
    """Settings shared by the acquisition criteria.

    ``quad_nodes`` are the equal-weight integration points for IMSPE and
    contour SUR.  ``threshold`` is the level-set target for SUR and, when
    set, overrides the plug-in best value for EI.
    """

    quad_nodes: np.ndarray
    domain: Domain
    threshold: float | None = None
    ucb_beta: float = 2.0
    reduction_ratio: float = 0.9
    replicate_cap: int = 50
    candidate_count: int | None = None
    horizon: int = 3

    def __post_init__(self):
        self.quad_nodes = np.atleast_2d(np.asarray(self.quad_nodes, dtype=float))
        if self.quad_nodes.shape[0] < 32:
            raise ValueError("need at least 32 quadrature nodes")
        if self.quad_nodes.shape[1] != self.domain.dim:
            raise ValueError("quadrature nodes do not match the domain dimension")
        if not 0.0 < self.reduction_ratio <= 1.0:
            raise ValueError("reduction_ratio must lie in (0, 1]")
        if self.replicate_cap < 1:
            raise ValueError("replicate_cap must be at least 1")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.ucb_beta < 0:
            raise ValueError("ucb_beta must be nonnegative")
        if self.candidate_count is None:
            self.candidate_count = 100 * self.domain.dim

    @classmethod
    def default(cls, domain: Domain | None = None, seed: int = 0, **kw) -> AcquisitionConfig:
        """Config with ``512 * d`` scrambled Sobol quadrature nodes."""
        domain = domain or Domain.unit(1)
        nodes = sobol_points(512 * domain.dim, domain, seed)
        return cls(nodes, domain, **kw)


@dataclass(frozen=True)
class DesignDecision:
    action: str  # "new" or "replicate"
    x: np.ndarray
    index: int | None = None
    batch_size: int = 1
    criterion_value: float = float("nan")
    saturated: bool = False


@dataclass(frozen=True)
class ReplicateBudget:
    size: int
    saturated: bool = False
    noop: bool = False


# ---------------------------------------------------------------------------
# criteria


def imspe(model: GPModel, config: AcquisitionConfig) -> float:
    """Average latent predictive variance over the quadrature nodes."""
    return float(np.mean(model.predict(config.quad_nodes).latent_var))


def _new_ratio(model: GPModel, Xp, n_reps=1):
    return (model.noise(Xp) / model.kernel.process_variance + model.jitter) / n_reps


def _lookahead(model: GPModel, Q, Xp):
    """Posterior correlations needed by one-step updates.

    Returns ``kQp`` (|Q|, |Xp|) and ``kpp`` (|Xp|,).
    """
    VQ = model.whitened(Q)
    Vp = model.whitened(Xp)
    kQp = cross_cov(model.kernel, Q, Xp) - VQ.T @ Vp
    kpp = np.maximum(1.0 - np.einsum("ij,ij->j", Vp, Vp), 0.0)
    return kQp, kpp


def imspe_one_step(model: GPModel, Xp, config: AcquisitionConfig, n_reps: int = 1) -> np.ndarray:
    """IMSPE after ``n_reps`` new evaluations at each candidate in ``Xp``.

    No outputs are needed; the update only depends on where we sample.
    """
    Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
    kQp, kpp = _lookahead(model, config.quad_nodes, Xp)
    lam = _new_ratio(model, Xp, n_reps)
    drop = model.kernel.process_variance * np.mean(kQp**2, axis=0) / (kpp + lam)
    return imspe(model, config) - drop


def _pick(rep_vals, new_vals):
    """Index into ``rep_vals`` (replicate) or ``new_vals``; replication wins ties."""
    i = int(np.argmin(rep_vals)) if rep_vals.size else -1
    j = int(np.argmin(new_vals)) if new_vals.size else -1
    if i >= 0 and (j < 0 or rep_vals[i] <= new_vals[j] + _TIE_RTOL * abs(new_vals[j])):
        return "replicate", i, float(rep_vals[i])
    return "new", j, float(new_vals[j])


def _decision(model, kind, idx, value, new_pts, batch=1, saturated=False):
    if kind == "replicate":
        return DesignDecision("replicate", model.design.Xu[idx].copy(), idx, batch, value, saturated)
    return DesignDecision("new", new_pts[idx].copy(), None, batch, value, saturated)


def candidate_points(model: GPModel, config: AcquisitionConfig, seed=None) -> np.ndarray:
    return sobol_points(config.candidate_count, config.domain, seed)


def select_next_imspe(model: GPModel, config: AcquisitionConfig, seed=None,
                      candidates=None, n_reps: int = 1) -> DesignDecision:
    """Minimize one-step IMSPE over new candidates and all existing designs."""
    new_pts = candidate_points(model, config, seed) if candidates is None else np.atleast_2d(candidates)
    Xu = model.design.Xu
    vals = imspe_one_step(model, np.vstack([Xu, new_pts]), config, n_reps)
    kind, idx, value = _pick(vals[: Xu.shape[0]], vals[Xu.shape[0]:])
    return _decision(model, kind, idx, value, new_pts, n_reps)


def _pretend(model: GPModel, x, index=None) -> GPModel:
    """Model after one fictive evaluation at ``x`` (or at design ``index``).

    The posterior variance ignores outputs, so the predicted mean stands in.
    """
    d = model.design
    if index is None:
        Xu = np.vstack([d.Xu, x])
        counts = np.append(d.counts, 1)
        means = np.append(d.means, model.predict(x[None, :]).mean)
        ev = np.append(d.emp_vars, np.nan)
    else:
        Xu, means, ev = d.Xu, d.means, d.emp_vars
        counts = d.counts.copy()
        counts[index] += 1
    return model.with_design(CompactedDesign.from_summaries(Xu, counts, means, ev))


def _path(model, config, new_pts, new_at, horizon):
    """Greedy IMSPE path of ``horizon + 1`` steps with one new design at step ``new_at``."""
    first = None
    for step in range(horizon + 1):
        if step == new_at:
            vals = imspe_one_step(model, new_pts, config)
            j = int(np.argmin(vals))
            move = ("new", j, float(vals[j]))
            x, idx = new_pts[j], None
        else:
            vals = imspe_one_step(model, model.design.Xu, config)
            i = int(np.argmin(vals))
            move = ("replicate", i, float(vals[i]))
            x, idx = model.design.Xu[i], i
        first = first or move
        if step < horizon:
            model = _pretend(model, x, idx)
    return move[2], first


def select_next_imspe_lookahead(model: GPModel, config: AcquisitionConfig, seed=None,
                                candidates=None) -> DesignDecision:
    """Replicate-or-explore decision looking ``config.horizon`` steps ahead.

    Each of the ``horizon + 1`` paths places exactly one new design (at
    step 0, 1, ..., horizon) and greedily replicates at the other steps.
    If the best final IMSPE comes from a path that starts by replicating,
    we replicate now; otherwise the new design is taken.  With horizon 0
    this is :func:`select_next_imspe`.
    """
    new_pts = candidate_points(model, config, seed) if candidates is None else np.atleast_2d(candidates)
    if config.horizon == 0 or model.n == 0:
        return select_next_imspe(model, config, candidates=new_pts)
    explore, first_new = _path(model, config, new_pts, 0, config.horizon)
    wait = [_path(model, config, new_pts, j, config.horizon) for j in range(1, config.horizon + 1)]
    best, first_rep = min(wait, key=lambda t: t[0])
    if best <= explore + _TIE_RTOL * abs(explore):
        return _decision(model, *first_rep, new_pts)
    return _decision(model, *first_new, new_pts)


def plugin_threshold(model: GPModel) -> float:
    """Smallest posterior mean over the evaluated designs."""
    if model.n == 0:
        return float(model.beta)
    return float(np.min(model.predict(model.design.Xu).mean))


def ei_plugin(model: GPModel, X, threshold: float | None = None) -> np.ndarray:
    """Expected improvement below the plug-in best mean (latent variance)."""
    T = plugin_threshold(model) if threshold is None else float(threshold)
    pred = model.predict(X)
    s = pred.latent_sd
    diff = T - pred.mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, diff / s, 0.0)
    ei = np.where(s > 0, diff * ndtr(z) + s * norm.pdf(z), np.maximum(diff, 0.0))
    return np.maximum(ei, 0.0)


def ucb(model: GPModel, X, beta: float) -> np.ndarray:
    """Lower confidence bound ``m - beta * sd`` (smaller is better)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    pred = model.predict(X)
    return pred.mean - beta * pred.latent_sd


def _misclassification(mean, var, T):
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(sd > 0, ndtr((mean - T) / sd),
                     np.where(mean > T, 1.0, np.where(mean < T, 0.0, 0.5)))
    return p * (1.0 - p)


def contour_uncertainty(model: GPModel, config: AcquisitionConfig) -> float:
    """Current average ``p (1 - p)`` over the quadrature nodes."""
    T = _require_threshold(config)
    pred = model.predict(config.quad_nodes)
    return float(np.mean(_misclassification(pred.mean, pred.latent_var, T)))


def _require_threshold(config):
    if config.threshold is None:
        raise ValueError("contour criteria need config.threshold")
    return float(config.threshold)


def sur_updates(model: GPModel, Xp, config: AcquisitionConfig, n_reps: int = 1):
    """Mean shift per unit of standardized new output, and updated variances.

    For a new observation ``y+ = m(x+) + sd(y+) z`` the posterior mean at the
    nodes moves by ``b z`` and the latent variance becomes ``v - b^2``.
    Returns ``(mean, b, v_new)`` with ``b`` and ``v_new`` shaped (|Q|, |Xp|).
    """
    Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
    s2 = model.kernel.process_variance
    pred = model.predict(config.quad_nodes)
    kQp, kpp = _lookahead(model, config.quad_nodes, Xp)
    lam = _new_ratio(model, Xp, n_reps)
    b = s2 * kQp / np.sqrt(s2 * (kpp + lam))
    v_new = np.maximum(pred.latent_var[:, None] - b**2, 0.0)
    return pred.mean, b, v_new


def contour_sur(model: GPModel, Xp, config: AcquisitionConfig, n_reps: int = 1) -> np.ndarray:
    """Expected average ``p (1 - p)`` after one new observation at each candidate.

    The expectation over the unknown output uses Gauss-Hermite quadrature.
    """
    T = _require_threshold(config)
    mean, b, v_new = sur_updates(model, Xp, config, n_reps)
    z, w = np.polynomial.hermite_e.hermegauss(_GH_ORDER)
    w = w / w.sum()
    out = np.zeros(b.shape[1])
    for zk, wk in zip(z, w):
        out += wk * np.mean(_misclassification(mean[:, None] + b * zk, v_new, T), axis=0)
    return np.clip(out, 0.0, 0.25)


def contour_sur_given(model: GPModel, xp, z, config: AcquisitionConfig) -> np.ndarray:
    """Average ``p (1 - p)`` after observing standardized outputs ``z`` at ``xp``."""
    T = _require_threshold(config)
    mean, b, v_new = sur_updates(model, np.atleast_2d(xp), config)
    z = np.atleast_1d(z)
    m = mean[:, None] + b[:, :1] * z[None, :]
    return np.mean(_misclassification(m, v_new[:, :1], T), axis=0)


def replicates_for_target_reduction(model: GPModel, xp, ratio: float, cap: int) -> ReplicateBudget:
    """Smallest batch at ``xp`` cutting its latent variance to ``ratio`` times today's.

    Returns ``cap`` with ``saturated=True`` when no batch up to ``cap`` gets
    there, and a size-1 ``noop`` budget when the variance is already zero.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    _, kpp = _lookahead(model, xp[:1], xp)
    k = float(kpp[0])
    if k <= 0.0:
        return ReplicateBudget(1, noop=True)
    lam = float(_new_ratio(model, xp)[0])
    a = np.arange(1, cap + 1)
    frac = (lam / a) / (k + lam / a)  # v_after / v_now
    ok = np.flatnonzero(frac <= ratio)
    if ok.size:
        return ReplicateBudget(int(a[ok[0]]))
    return ReplicateBudget(cap, saturated=True)


def level_set_crossings(model: GPModel, grid, threshold: float) -> np.ndarray:
    """Linear-interpolated points of a 1d grid where the mean crosses ``threshold``."""
    g = np.asarray(grid, dtype=float).ravel()
    m = model.predict(g[:, None]).mean - threshold
    idx = np.flatnonzero(np.sign(m[:-1]) * np.sign(m[1:]) <= 0)
    out = []
    for i in idx:
        if m[i] == m[i + 1]:
            out.append(g[i])
        else:
            out.append(g[i] - m[i] * (g[i + 1] - g[i]) / (m[i + 1] - m[i]))
    return np.unique(np.array(out))


# ---------------------------------------------------------------------------
# sequential loop


class SimulationFailed(RuntimeError):
    """The simulator raised; ``checkpoint`` holds the state for resuming."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class SequentialOptions:
    noise: str = "homoscedastic"
    fit: FitOptions = field(default_factory=FitOptions)
    refresh_every: int = 5
    refresh_starts: int = 2
    seed: int = 0
    checkpoint_path: str | None = None
    fixed_k: int | None = None


@dataclass
class RunLog:
    records: list
    raw: RawData
    model: GPModel
    strategy: str

    def to_jsonl(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @property
    def design(self):
        return self.model.design


def _parse_strategy(strategy: str, fixed_k):
    m = re.fullmatch(r"fixed-replicates-(\d+)", strategy)
    if m:
        return "fixed-replicates-k", int(m.group(1))
    if strategy == "fixed-replicates-k":
        if not fixed_k:
            raise ValueError("fixed-replicates-k needs a replicate count")
        return strategy, int(fixed_k)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return strategy, None


def _choose(model, strategy, k, config, seed) -> DesignDecision:
    if strategy == "imspe-lookahead":
        return select_next_imspe_lookahead(model, config, seed)
    if strategy == "fixed-replicates-k":
        return select_next_imspe(model, config, seed, n_reps=k)
    new_pts = candidate_points(model, config, seed)
    Xu = model.design.Xu
    allpts = np.vstack([Xu, new_pts])
    if strategy == "contour-sur+budget":
        vals = contour_sur(model, allpts, config)
    elif strategy == "ei-plugin":
        vals = -ei_plugin(model, allpts, config.threshold)
    else:
        vals = ucb(model, allpts, config.ucb_beta)
    kind, idx, value = _pick(vals[: Xu.shape[0]], vals[Xu.shape[0]:])
    if strategy == "ei-plugin":
        value = -value
    dec = _decision(model, kind, idx, value, new_pts)
    if strategy == "contour-sur+budget":
        budget = replicates_for_target_reduction(model, dec.x, config.reduction_ratio,
                                                 config.replicate_cap)
        dec = replace(dec, batch_size=budget.size, saturated=budget.saturated)
    return dec


def _progress(model, strategy, config):
    if strategy == "contour-sur+budget":
        return contour_uncertainty(model, config)
    return imspe(model, config)


def _snapshot(model):
    return {"lengthscales": model.kernel.lengthscales.tolist(),
            "process_variance": model.kernel.process_variance,
            "beta": model.beta, "nll": None if np.isnan(model.nll) else model.nll}


def run_sequential(simulator, initial_X, strategy: str, budget: int,
                   config: AcquisitionConfig, options: SequentialOptions | None = None,
                   resume: dict | None = None, log_stream=None) -> RunLog:
    """Grow a design one decision at a time until ``budget`` evaluations.

    ``simulator(X, seeds)`` returns one output per row of ``X``; seeds are
    derived from ``options.seed`` and the evaluation counter, so a run is
    reproducible.  The model hyperparameters are refit every
    ``options.refresh_every`` iterations and held fixed in between.
    If the simulator raises, a checkpoint is written (when
    ``options.checkpoint_path`` is set) and :class:`SimulationFailed` is
    raised; pass the checkpoint back as ``resume`` to continue.
    """
    options = options or SequentialOptions()
    strategy, k = _parse_strategy(strategy, options.fixed_k)
    seeds = np.random.SeedSequence(options.seed).generate_state(budget, dtype=np.uint64)

    if resume is not None:
        X = np.asarray(resume["X"], dtype=float)
        y = np.asarray(resume["y"], dtype=float)
        records = list(resume["records"])
        it = int(resume["iteration"])
        model = fit_model(compact(RawData(X, y)), options.noise, options.fit)
    else:
        X = np.atleast_2d(np.asarray(initial_X, dtype=float))
        if X.shape[0] == 1 and X.shape[1] != config.domain.dim:
            X = X.T
        if budget < X.shape[0]:
            raise ValueError(f"budget {budget} is smaller than the initial design ({X.shape[0]})")
        y = np.asarray(simulator(X, seeds[: X.shape[0]]), dtype=float)
        model = fit_model(compact(RawData(X, y)), options.noise, options.fit)
        it = 0
        records = [{"iteration": 0, "action": "initial", "x": None, "batch": int(X.shape[0]),
                    "criterion": None, "unique_count": model.n,
                    "imspe_or_gamma": _progress(model, strategy, config),
                    "saturated": False, "snapshot": 0, "model": _snapshot(model)}]
        if log_stream is not None:
            log_stream.write(json.dumps(records[0], sort_keys=True) + "\n")
    last_refit = records[-1]["snapshot"] if records else 0

    while X.shape[0] < budget:
        it += 1
        dec = _choose(model, strategy, k, config, np.random.default_rng([options.seed, it]))
        batch = min(dec.batch_size, budget - X.shape[0])
        Xb = np.repeat(dec.x[None, :], batch, axis=0)
        try:
            yb = np.asarray(simulator(Xb, seeds[X.shape[0]: X.shape[0] + batch]), dtype=float)
        except Exception as exc:
            state = {"X": X.tolist(), "y": y.tolist(), "iteration": it - 1, "records": records,
                     "strategy": strategy, "budget": budget}
            if options.checkpoint_path:
                with open(options.checkpoint_path, "w") as fh:
                    json.dump(state, fh)
            raise SimulationFailed(f"simulator failed at iteration {it}: {exc}", state) from exc
        X = np.vstack([X, Xb])
        y = np.concatenate([y, yb])
        design = compact(RawData(X, y))
        if it % options.refresh_every == 0:
            fopts = replace(options.fit, n_starts=options.refresh_starts, seed=options.fit.seed + it)
            model = fit_model(design, options.noise, fopts, init=model.kernel)
            last_refit = it
        else:
            model = model.with_design(design)
        rec = {"iteration": it, "action": dec.action, "x": dec.x.tolist(), "batch": int(batch),
               "criterion": dec.criterion_value, "unique_count": model.n,
               "imspe_or_gamma": _progress(model, strategy, config),
               "saturated": bool(dec.saturated), "snapshot": last_refit}
        if last_refit == it:
            rec["model"] = _snapshot(model)
        records.append(rec)
        if log_stream is not None:
            log_stream.write(json.dumps(rec, sort_keys=True) + "\n")
        logger.debug("iteration %d: %s x=%s batch=%d", it, dec.action, dec.x, batch)
    return RunLog(records, RawData(X, y), model, strategy)
