"""GP models of output quantiles.

Two ways to use replicates: fit one homoscedastic GP per quantile level to
the empirical quantiles, or fit a single GP on inputs augmented with the
level.  Either way, predicted quantiles are sorted pointwise across levels
so they never cross.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .gp_core import FitOptions, GPModel, fit
from .kernels import Domain
from .noise import ReplicationError
from .replication import CompactedDesign, empirical_quantiles

MODES = ("per-level", "augmented")


@dataclass(frozen=True)
class QuantileModel:
    levels: np.ndarray
    mode: str
    models: tuple

    @property
    def level_range(self):
        return float(self.levels[0]), float(self.levels[-1])

    def _scale_level(self, levels):
        lo, hi = self.level_range
        if hi == lo:
            return np.zeros_like(levels)
        return (levels - lo) / (hi - lo)


def empirical_quantile_table(design: CompactedDesign, levels) -> np.ndarray:
    """(n, L) empirical quantiles of each unique design's replicates."""
    return np.vstack([empirical_quantiles(design.group_values(i), levels)
                      for i in range(design.n)])


def _check_levels(levels):
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    if lv.size == 0 or np.any((lv <= 0) | (lv >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    if np.any(np.diff(lv) <= 0):
        raise ValueError("quantile levels must be strictly increasing")
    return lv


def fit_quantile_model(design: CompactedDesign, levels, mode: str = "per-level",
                       options: FitOptions | None = None) -> QuantileModel:
    """Fit GP quantile surfaces to replicated data.

    Every unique design needs at least two replicates; without replication
    use :func:`gaussian_predictive_quantile` on an ordinary fitted GP.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    lv = _check_levels(levels)
    if design.y is None:
        raise ValueError("quantile models need the raw replicate values")
    if np.any(design.counts < 2):
        raise ReplicationError(
            f"{int(np.sum(design.counts < 2))} designs have a single observation; "
            "replicate them or use the Gaussian predictive quantile instead")
    if design.n < 3:
        raise ReplicationError("need at least 3 unique designs")
    options = options or FitOptions()
    Q = empirical_quantile_table(design, lv)
    ones = np.ones(design.n, dtype=np.int64)
    if mode == "per-level":
        models = tuple(fit(CompactedDesign.from_summaries(design.Xu, ones, Q[:, j]),
                           "constant", options) for j in range(lv.size))
        return QuantileModel(lv, mode, models)

    qm = QuantileModel(lv, mode, ())
    a = qm._scale_level(lv)
    Xa = np.hstack([np.repeat(design.Xu, lv.size, axis=0), np.tile(a, design.n)[:, None]])
    aug = CompactedDesign.from_summaries(Xa, np.ones(Xa.shape[0], dtype=np.int64), Q.ravel())
    if options.domain is not None:
        dom = Domain(np.append(options.domain.lower, 0.0), np.append(options.domain.upper, 1.0))
        options = replace(options, domain=dom)
    return replace(qm, models=(fit(aug, "constant", options),))


def predict_quantiles(model: QuantileModel, X, levels=None, return_sd: bool = False):
    """Quantile predictions at ``X`` for ascending ``levels``, shape (m, L).

    Per-level models only predict the trained levels; augmented models
    interpolate anywhere inside the trained range.  Rows are sorted so the
    output never decreases with the level.  With ``return_sd`` the latent
    predictive standard deviation of each (rearranged) entry is returned too.
    """
    lv = model.levels if levels is None else _check_levels(levels)
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    if model.mode == "per-level":
        idx = []
        for a in lv:
            hit = np.flatnonzero(np.abs(model.levels - a) <= 1e-12)
            if hit.size == 0:
                raise ValueError(f"level {a} was not trained; per-level models cannot extrapolate")
            idx.append(int(hit[0]))
        preds = [model.models[i].predict(X) for i in idx]
        vals = np.column_stack([p.mean for p in preds])
        sds = np.column_stack([p.latent_sd for p in preds])
    else:
        lo, hi = model.level_range
        if np.any((lv < lo - 1e-12) | (lv > hi + 1e-12)):
            raise ValueError(f"levels must lie within the trained range [{lo}, {hi}]")
        a = model._scale_level(lv)
        m = X.shape[0]
        Xa = np.hstack([np.repeat(X, lv.size, axis=0), np.tile(a, m)[:, None]])
        p = model.models[0].predict(Xa)
        vals = p.mean.reshape(m, lv.size)
        sds = p.latent_sd.reshape(m, lv.size)
    order = np.argsort(vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    if not return_sd:
        return vals
    return vals, np.take_along_axis(sds, order, axis=1)


def gaussian_predictive_quantile(model: GPModel, X, alpha) -> np.ndarray:
    """Closed-form quantile ``m(x) + z_alpha * sqrt(obs_var(x))`` of the predictive."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    p = model.predict(X)
    return p.mean + ndtri(alpha) * np.sqrt(p.obs_var)
