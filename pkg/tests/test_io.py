import io as _io

import numpy as np
import pytest
import yaml

from replgp import io
from replgp.gp_core import fit
from replgp.noise import fit_model
from replgp.replication import RawData, compact


def small_raw(seed=0, d=1):
    rng = np.random.default_rng(seed)
    X = np.repeat(rng.uniform(size=(8, d)), 3, axis=0)
    return RawData(X, np.sin(4 * X).sum(axis=1) + 0.1 * rng.standard_normal(X.shape[0]))


def test_level_names():
    assert [io.level_name(a) for a in (0.05, 0.5, 0.975, 0.9)] == ["q05", "q50", "q975", "q90"]


def test_dataset_round_trip(tmp_path):
    raw = small_raw(d=2)
    raw = RawData(raw.X, raw.y * np.pi * 1e-7)
    p = tmp_path / "d.csv"
    io.write_dataset(p, raw)
    text = p.read_bytes()
    assert b"\r" not in text and text.startswith(b"x_1,x_2,y\n")
    back = io.read_dataset(p)
    assert np.array_equal(back.X, raw.X) and np.array_equal(back.y, raw.y)
    io.write_dataset(tmp_path / "e.csv", back)
    assert (tmp_path / "e.csv").read_bytes() == text


def test_single_x_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n0.1,1\n0.2,2\n")
    assert io.read_dataset(p).X.shape == (2, 1)


@pytest.mark.parametrize("body, line", [("x_1,y\n0.1,1\n0.2,abc\n", 3),
                                        ("x_1,y\n0.1,1,5\n", 2),
                                        ("x_1,y\n0.1,nan\n", 2)])
def test_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(io.DataError, match=f"bad.csv:{line}:"):
        io.read_dataset(p)


def test_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(io.DataError, match="'y'"):
        io.read_dataset(p)
    with pytest.raises(io.DataError):
        io.read_dataset(tmp_path / "nope.csv")


def test_table_to_stream():
    buf = _io.StringIO()
    io.write_table(buf, {"a": [1, 2], "b": [0.1, np.nan]})
    assert buf.getvalue() == "a,b\n1,0.10000000000000001\n2,nan\n"
    with pytest.raises(ValueError):
        io.write_table(buf, {"a": [1], "b": [1, 2]})


@pytest.mark.parametrize("kind", ["homoscedastic", "sk", "parametric:1", "known:exp-poly:-3,1"])
def test_model_round_trip(tmp_path, kind):
    model = fit_model(compact(small_raw(1)), kind)
    p = tmp_path / "m.json"
    io.save_model(model, p)
    back = io.load_model(p)
    G = np.linspace(0, 1, 57)[:, None]
    a, b = model.predict(G), back.predict(G)
    np.testing.assert_allclose(b.mean, a.mean, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.obs_var, a.obs_var, rtol=0, atol=1e-12)
    assert back.nll == model.nll or (np.isnan(back.nll) and np.isnan(model.nll))
    assert io.dumps_model(back) == p.read_text()


def test_bare_callable_cannot_be_saved():
    from replgp.noise import KnownNoise
    model = fit(compact(small_raw()), KnownNoise(lambda X: np.full(len(X), 0.1)))
    with pytest.raises(ValueError):
        io.dumps_model(model)


def test_bad_model_documents(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"schema": "other"}')
    with pytest.raises(io.DataError):
        io.load_model(p)
    p.write_text("{oops")
    with pytest.raises(io.DataError, match="m.json:1"):
        io.load_model(p)


def test_config_layers(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"seed": 3, "fit": {"n_starts": 2}, "acquisition": {"budget": 50}}))
    cfg = io.load_config(p, {"fit": {"likelihood": "full"}, "seed": 9})
    assert cfg.seed == 9 and cfg.fit.n_starts == 2 and cfg.fit.likelihood == "full"
    assert cfg.acquisition.budget == 50 and cfg.acquisition.horizon == 3
    j = tmp_path / "c.json"
    j.write_text('{"kernel": "squared-exponential"}')
    assert io.load_config(j).kernel == "squared-exponential"


@pytest.mark.parametrize("doc", ['{"sede": 1}', '{"fit": {"n_start": 2}}',
                                 '{"acquisition": {"strategy": "random"}}',
                                 '{"quantile_levels": [0.5, 0.1]}', "[1, 2]", "{bad"])
def test_config_rejects(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(doc)
    with pytest.raises(io.ConfigError):
        io.load_config(p)


def test_output_dir(monkeypatch, tmp_path):
    monkeypatch.delenv(io.OUTPUT_DIR_ENV, raising=False)
    assert str(io.output_dir()) == "."
    monkeypatch.setenv(io.OUTPUT_DIR_ENV, str(tmp_path))
    assert io.output_dir() == tmp_path
    assert str(io.output_dir("elsewhere")) == "elsewhere"


def test_svg():
    x = np.linspace(0, 1, 20)
    svg = io.svg_band_plot(x, x, x - 0.1, x + 0.1, points=(x[::4], x[::4]), title="t")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "polyline" in svg and svg.count("<circle") == 5
