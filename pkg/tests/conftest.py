import json
from pathlib import Path

import numpy as np
import pytest

from replgp.noise import KnownNoise
from replgp.replication import RawData, compact
from replgp.sir import SIRConfig, build_dataset, reference_stats

CACHE = Path(__file__).parent / "_cache"
ACCEPTANCE = pytest.StashKey[dict]()


def random_raw(rng, d=None, n=None, amax=5):
    """Random replicated data set: n unique points in [0,1]^d, 1..amax replicates each."""
    d = d or int(rng.integers(1, 4))
    n = n or int(rng.integers(2, 21))
    Xu = rng.uniform(size=(n, d))
    a = rng.integers(1, amax + 1, size=n)
    X = np.repeat(Xu, a, axis=0)
    y = np.sin(3 * X).sum(axis=1) + 0.3 * rng.standard_normal(X.shape[0])
    perm = rng.permutation(X.shape[0])
    return RawData(X[perm], y[perm])


def random_noise(rng, d):
    """Smooth positive variance function with random coefficients."""
    c = rng.uniform(-2, 1, size=d + 1)
    return KnownNoise(lambda X: np.exp(c[0] + np.asarray(X) @ c[1:]))


@pytest.fixture
def rng():
    return np.random.default_rng(20241)


@pytest.fixture(scope="session")
def sir_config():
    return SIRConfig()


@pytest.fixture(scope="session")
def sir_replicated(sir_config):
    return compact(build_dataset(sir_config, "replicated", n_unique=25, reps=100, seed=1))


@pytest.fixture(scope="session")
def sir_reference(sir_config):
    """51-point / 10,000-replicate reference table, cached on disk."""
    key = json.dumps({**sir_config.__dict__, "grid": 51, "reps": 10000, "seed": 12345},
                     sort_keys=True)
    path = CACHE / "sir_reference.json"
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key:
            return {k: np.array(v, dtype=float) for k, v in doc["table"].items()}
    table = reference_stats(sir_config, grid_size=51, reps=10000)
    CACHE.mkdir(exist_ok=True)
    path.write_text(json.dumps({"key": key, "table": {
        k: [None if not np.isfinite(v) else float(v) for v in col] for k, col in table.items()}}))
    return table


@pytest.fixture
def report(request):
    """``report(n, ok, detail)`` records one acceptance line for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def _report(n, ok, detail):
        lines[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
