import numpy as np
import pytest
from scipy.stats import norm

from replgp.gp_core import FitOptions, condition
from replgp.kernels import Domain, Kernel
from replgp.noise import ConstantNoise, ReplicationError
from replgp.quantile import (QuantileModel, empirical_quantile_table, fit_quantile_model,
                             gaussian_predictive_quantile, predict_quantiles)
from replgp.replication import CompactedDesign, RawData, compact

UNIT = FitOptions(domain=Domain.unit(1))
LEVELS = [0.05, 0.5, 0.95]


def replicated(seed, n=12, a=30):
    rng = np.random.default_rng(seed)
    X = np.repeat(np.linspace(0, 1, n), a)[:, None]
    y = np.cos(3 * X[:, 0]) + (0.1 + 0.2 * X[:, 0]) * rng.standard_normal(X.shape[0])
    return compact(RawData(X, y))


def test_requires_replication():
    d = compact(RawData(np.linspace(0, 1, 10)[:, None], np.arange(10.0)))
    with pytest.raises(ReplicationError, match="Gaussian predictive quantile"):
        fit_quantile_model(d, LEVELS)
    d = compact(RawData([[0.0], [0.0], [1.0], [1.0]], [0, 1, 2, 3]))
    with pytest.raises(ReplicationError):
        fit_quantile_model(d, LEVELS)


def test_level_validation():
    d = replicated(0)
    for bad in ([0.5, 0.05], [0.0, 0.5], [1.2], []):
        with pytest.raises(ValueError):
            fit_quantile_model(d, bad)
    with pytest.raises(ValueError):
        fit_quantile_model(d, LEVELS, mode="tensor")


@pytest.mark.parametrize("mode", ["per-level", "augmented"])
def test_constant_data(mode):
    X = np.repeat(np.linspace(0, 1, 5), 3)[:, None]
    qm = fit_quantile_model(compact(RawData(X, np.full(15, 2.5))), LEVELS, mode, UNIT)
    Q = predict_quantiles(qm, np.linspace(0, 1, 17))
    np.testing.assert_allclose(Q, 2.5, atol=1e-6)


def test_single_level_is_raw_prediction():
    d = replicated(1)
    qm = fit_quantile_model(d, [0.5], options=UNIT)
    G = np.linspace(0, 1, 40)[:, None]
    np.testing.assert_array_equal(predict_quantiles(qm, G)[:, 0], qm.models[0].predict(G).mean)


def test_crossed_inner_models_are_sorted():
    # two hand-made surfaces that cross at x = 0.5
    X = np.linspace(0, 1, 5)[:, None]
    k = Kernel("se", [0.3], 1.0)
    up = condition(CompactedDesign.from_summaries(X, np.ones(5), X[:, 0]), k)
    down = condition(CompactedDesign.from_summaries(X, np.ones(5), 1 - X[:, 0]), k)
    qm = QuantileModel(np.array([0.1, 0.9]), "per-level", (up, down))
    G = np.linspace(0, 1, 21)[:, None]
    Q, sd = predict_quantiles(qm, G, return_sd=True)
    assert np.all(np.diff(Q, axis=1) >= 0)
    np.testing.assert_allclose(Q[:, 0], np.minimum(up.predict(G).mean, down.predict(G).mean))
    assert sd.shape == Q.shape


def test_non_crossing_randomized():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, a = int(rng.integers(3, 8)), int(rng.integers(2, 6))
        X = np.repeat(rng.uniform(size=n), a)[:, None]
        y = rng.standard_normal(n * a) * rng.uniform(0.1, 2.0)
        levels = np.sort(rng.choice(np.arange(1, 20) / 20, size=int(rng.integers(2, 5)),
                                    replace=False))
        qm = fit_quantile_model(compact(RawData(X, y)), levels,
                                rng.choice(["per-level", "augmented"]), FitOptions(n_starts=2))
        Q = predict_quantiles(qm, np.linspace(0, 1, 200))
        assert np.all(np.diff(Q, axis=1) >= 0)


def test_level_requests():
    d = replicated(2)
    per = fit_quantile_model(d, LEVELS, "per-level", UNIT)
    with pytest.raises(ValueError, match="not trained"):
        predict_quantiles(per, [[0.3]], [0.25])
    aug = fit_quantile_model(d, LEVELS, "augmented", UNIT)
    assert predict_quantiles(aug, [[0.3]], [0.25, 0.75]).shape == (1, 2)
    with pytest.raises(ValueError, match="trained range"):
        predict_quantiles(aug, [[0.3]], [0.99])


def test_negation_symmetry():
    d = replicated(3)
    neg = compact(RawData(np.repeat(d.Xu, d.counts, axis=0),
                          -d.y[np.argsort(d.group_index, kind="stable")]))
    Qp = empirical_quantile_table(d, [0.1])[:, 0]
    Qn = empirical_quantile_table(neg, [0.9])[:, 0]
    np.testing.assert_allclose(Qn, -Qp, atol=1e-12)
    qp = fit_quantile_model(d, [0.1], options=UNIT)
    # shared hyperparameters: condition the negated data on the same kernel and noise
    m = qp.models[0]
    mn = condition(CompactedDesign.from_summaries(d.Xu, np.ones(d.n), Qn), m.kernel, m.noise)
    G = np.linspace(0, 1, 50)[:, None]
    np.testing.assert_allclose(mn.predict(G).mean, -m.predict(G).mean, atol=1e-6)


def test_modes_agree():
    d = replicated(4)
    G = np.linspace(0, 1, 51)[:, None]
    Qa = predict_quantiles(fit_quantile_model(d, LEVELS, "augmented", UNIT), G)
    Qp = predict_quantiles(fit_quantile_model(d, LEVELS, "per-level", UNIT), G)
    spread = np.ptp(d.y)
    assert np.mean(np.abs(Qa - Qp)) < 0.05 * spread


def test_gaussian_quantile():
    X = np.linspace(0, 1, 6)[:, None]
    m = condition(CompactedDesign.from_summaries(X, np.ones(6), np.sin(X[:, 0])),
                  Kernel("se", [0.4], 1.0), ConstantNoise(4.0, fixed=True))
    G = np.array([[0.33]])
    p = m.predict(G)
    assert gaussian_predictive_quantile(m, G, 0.5)[0] == p.mean[0]
    assert gaussian_predictive_quantile(m, G, norm.cdf(1.0))[0] == pytest.approx(p.mean[0] + p.obs_sd[0])
    z95 = gaussian_predictive_quantile(m, G, 0.95)[0] - p.mean[0]
    assert z95 / p.obs_sd[0] == pytest.approx(1.644854, abs=1e-6)
    vals = [gaussian_predictive_quantile(m, G, a)[0] for a in np.linspace(0.01, 0.99, 30)]
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(ValueError):
        gaussian_predictive_quantile(m, G, 1.0)


def test_median_tracks_mean_under_symmetric_noise():
    # Gaussian noise, 25 designs x 100 replicates; the realized worst ratio is 1.37
    rng = np.random.default_rng(0)
    X = np.repeat(np.linspace(0, 1, 25), 100)[:, None]
    f = lambda x: 0.5 * np.sin(2 * np.pi * x) + x
    sd = lambda x: 0.05 + 0.1 * x
    y = f(X[:, 0]) + sd(X[:, 0]) * rng.standard_normal(X.shape[0])
    qm = fit_quantile_model(compact(RawData(X, y)), [0.5], options=UNIT)
    g = np.linspace(0, 1, 51)
    med = predict_quantiles(qm, g)[:, 0]
    mc = np.sqrt(np.pi / 2) * sd(g) / np.sqrt(100)  # sd of a sample median
    assert np.max(np.abs(med - f(g)) / mc) < 2.0


def test_sir_reference_coverage(sir_replicated, sir_reference):
    # both reference quantiles inside [q05 - 2e, q95 + 2e], e the inner sd;
    # realized 48 of 51 grid points (0.941)
    x = sir_reference["x"][:, None]
    Q, e = predict_quantiles(fit_quantile_model(sir_replicated, [0.05, 0.95]), x, return_sd=True)
    lo, hi = Q[:, 0] - 2 * e[:, 0], Q[:, 1] + 2 * e[:, 1]
    inside = [(lo <= sir_reference[k]) & (sir_reference[k] <= hi) for k in ("q05", "q95")]
    cover = np.mean(inside[0] & inside[1])
    assert cover >= 0.9
    assert cover == pytest.approx(48 / 51)
