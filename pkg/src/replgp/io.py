"""File formats: CSV tables, model documents, run configs and SVG plots.

CSV dialect: comma separated, header row, LF line endings, floats written
with 17 significant digits so they read back bit for bit.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
from dataclasses import replace
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .gp_core import GPModel, condition
from .kernels import Kernel
from .noise import ConstantNoise, KnownNoise, NoiseModel, ParametricNoise, StochasticKrigingNoise
from .replication import CompactedDesign, RawData

MODEL_SCHEMA = "replgp.model"
MODEL_VERSION = 1
OUTPUT_DIR_ENV = "REPLGP_OUTPUT_DIR"


class DataError(ValueError):
    """Malformed or unusable input data."""


class ConfigError(ValueError):
    """Invalid run configuration."""


def level_name(level) -> str:
    """Column name for a quantile level: 0.05 -> q05, 0.5 -> q50, 0.975 -> q975."""
    digits = f"{float(level):.10f}".split(".")[1].rstrip("0")
    return "q" + digits.ljust(2, "0")


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def output_dir(explicit=None) -> Path:
    """Explicit directory, else ``$REPLGP_OUTPUT_DIR``, else the working directory."""
    return Path(explicit or os.environ.get(OUTPUT_DIR_ENV) or ".")


# -- CSV ---------------------------------------------------------------------

def write_table(path, columns: dict) -> None:
    """Write equal-length columns to ``path`` (or a text stream)."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = {c.shape[0] for c in cols}
    if len(n) > 1:
        raise ValueError("columns have different lengths")
    buf = _io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in zip(*cols):
        buf.write(",".join(fmt(v) for v in row) + "\n")
    if hasattr(path, "write"):
        path.write(buf.getvalue())
        return
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_table(path) -> dict:
    """Read a numeric CSV into a dict of float arrays keyed by header name."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}:1: missing header row")
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric value in {row!r}") from None
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: arr[:, j] for j, h in enumerate(header)}


def x_columns(d: int) -> list:
    return [f"x_{j + 1}" for j in range(d)]


def write_dataset(path, raw: RawData) -> None:
    cols = {name: raw.X[:, j] for j, name in enumerate(x_columns(raw.X.shape[1]))}
    cols["y"] = raw.y
    write_table(path, cols)


def read_dataset(path) -> RawData:
    """Read a ``x_1, ..., x_d, y`` dataset; a single input column may be named ``x``."""
    tab = read_table(path)
    if "y" not in tab:
        raise DataError(f"{path}:1: no 'y' column")
    xs = [k for k in tab if k != "y"]
    if xs == ["x"]:
        X = tab["x"][:, None]
    else:
        want = x_columns(len(xs))
        if sorted(xs) != sorted(want):
            raise DataError(f"{path}:1: input columns must be named {', '.join(want)}")
        X = np.column_stack([tab[k] for k in want]) if xs else np.zeros((tab["y"].size, 0))
    if X.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    bad = ~np.all(np.isfinite(X), axis=1) | ~np.isfinite(tab["y"])
    if bad.any():
        raise DataError(f"{path}:{int(np.argmax(bad)) + 2}: non-finite value")
    return RawData(X, tab["y"])


def write_reference(path, stats: dict) -> None:
    write_table(path, stats)


# -- model documents ---------------------------------------------------------

def _floats(a):
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]


def _unfloat(a):
    return np.array([np.nan if v is None else v for v in a], dtype=float)


def noise_to_dict(noise: NoiseModel) -> dict:
    if isinstance(noise, ConstantNoise):
        return {"type": "constant", "nu": noise.nu, "fixed": noise.fixed}
    if isinstance(noise, KnownNoise):
        if noise.spec is None:
            raise ValueError("a known-noise model built from a bare callable cannot be saved")
        return {"type": "known", "spec": noise.spec}
    if isinstance(noise, ParametricNoise):
        return {"type": "parametric", "degree": noise.degree, "coeffs": _floats(noise.coeffs),
                "lower": _floats(noise.lower), "upper": _floats(noise.upper)}
    if isinstance(noise, StochasticKrigingNoise):
        return {"type": "stochastic-kriging", "floor": noise.floor,
                "inner": model_to_dict(noise.inner)}
    raise ValueError(f"cannot serialize noise model {type(noise).__name__}")


def noise_from_dict(d: dict) -> NoiseModel:
    kind = d.get("type")
    if kind == "constant":
        return ConstantNoise(float(d["nu"]), bool(d["fixed"]))
    if kind == "known":
        return KnownNoise.from_spec(d["spec"])
    if kind == "parametric":
        return ParametricNoise(_unfloat(d["coeffs"]), int(d["degree"]),
                               _unfloat(d["lower"]), _unfloat(d["upper"]))
    if kind == "stochastic-kriging":
        return StochasticKrigingNoise(model_from_dict(d["inner"]), float(d["floor"]))
    raise DataError(f"unknown noise type {kind!r}")


def model_to_dict(model: GPModel) -> dict:
    dz = model.design
    return {
        "schema": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        "kernel": {"family": model.kernel.family,
                   "lengthscales": _floats(model.kernel.lengthscales),
                   "process_variance": model.kernel.process_variance},
        "noise": noise_to_dict(model.noise),
        "trend": {"mode": model.trend, "beta": model.beta},
        "jitter": model.jitter,
        "nll": None if not math.isfinite(model.nll) else model.nll,
        "degenerate": model.degenerate,
        "design": {"dim": dz.d, "Xu": [_floats(r) for r in dz.Xu],
                   "counts": [int(c) for c in dz.counts],
                   "means": _floats(dz.means), "emp_vars": _floats(dz.emp_vars)},
    }


def model_from_dict(d: dict) -> GPModel:
    if d.get("schema") != MODEL_SCHEMA:
        raise DataError("not a model document")
    if d.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {d.get('version')!r}")
    try:
        k = d["kernel"]
        kernel = Kernel(k["family"], _unfloat(k["lengthscales"]), k["process_variance"])
        dz = d["design"]
        Xu = np.array([_unfloat(r) for r in dz["Xu"]], dtype=float).reshape(-1, int(dz["dim"]))
        design = CompactedDesign.from_summaries(Xu, dz["counts"], _unfloat(dz["means"]),
                                                _unfloat(dz["emp_vars"]))
        model = condition(design, kernel, noise_from_dict(d["noise"]), d["trend"]["mode"],
                          beta=float(d["trend"]["beta"]), jitter=float(d["jitter"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model document: {exc}") from None
    nll = np.nan if d.get("nll") is None else float(d["nll"])
    return replace(model, nll=nll, degenerate=bool(d.get("degenerate", False)))


def dumps_model(model: GPModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: GPModel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> GPModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return model_from_dict(doc)


# -- run configuration ---------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimulatorSpec(_Strict):
    population: int = Field(1000, gt=0)
    initial_infected: int = Field(10, gt=0)
    recovery_prob: float = Field(0.1, gt=0, le=1)
    beta_min: float = Field(0.0, ge=0)
    beta_max: float = Field(0.0003, ge=0)
    horizon: int = Field(200, gt=0)
    mode: Literal["iid", "crn"] = "iid"
    layout: Literal["replicated", "dense"] = "replicated"
    n_unique: int = Field(25, gt=0)
    reps: int = Field(100, gt=0)
    n_points: int = Field(2500, gt=0)


class FitSpec(_Strict):
    n_starts: int = Field(5, ge=1)
    likelihood: Literal["means", "full"] = "means"
    maxiter: int = Field(200, ge=1)


class AcquisitionSpec(_Strict):
    strategy: str = "imspe-lookahead"
    budget: int = Field(1000, ge=1)
    initial_unique: int = Field(20, ge=1)
    initial_reps: int = Field(5, ge=1)
    threshold: float | None = None
    ucb_beta: float = Field(2.0, ge=0)
    reduction_ratio: float = Field(0.9, gt=0, le=1)
    replicate_cap: int = Field(50, ge=1)
    candidate_count: int | None = Field(None, ge=1)
    quad_count: int | None = Field(None, ge=32)
    horizon: int = Field(3, ge=0)
    refresh_every: int = Field(5, ge=1)
    noise: str = "homoscedastic"

    @field_validator("strategy")
    @classmethod
    def _known(cls, v):
        if v in ("imspe-lookahead", "contour-sur+budget", "ei-plugin", "ucb") or \
                (v.startswith("fixed-replicates-") and v[17:].isdigit() and int(v[17:]) >= 1):
            return v
        raise ValueError(f"unknown strategy {v!r}")


class RunConfig(_Strict):
    """Validated configuration shared by all commands.  Unknown keys are errors."""

    data: str | None = None
    simulator: SimulatorSpec = Field(default_factory=SimulatorSpec)
    kernel: Literal["matern-5/2", "squared-exponential"] = "matern-5/2"
    noise: str = "homoscedastic"
    trend: Literal["constant", "zero"] = "constant"
    fit: FitSpec = Field(default_factory=FitSpec)
    quantile_levels: list[float] = Field(default_factory=lambda: [0.05, 0.5, 0.95])
    quantile_mode: Literal["per-level", "augmented"] = "per-level"
    acquisition: AcquisitionSpec = Field(default_factory=AcquisitionSpec)
    seed: int = Field(0, ge=0)
    output_dir: str | None = None

    @field_validator("quantile_levels")
    @classmethod
    def _levels(cls, v):
        if not v or any(not 0 < a < 1 for a in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("quantile levels must be increasing and inside (0, 1)")
        return v


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON/YAML file at ``path``, then ``overrides``."""
    from pydantic import ValidationError

    doc = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        try:
            doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot parse: {exc}") from None
        doc = doc or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    doc = _deep_update(doc, overrides or {})
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


# -- SVG -------------------------------------------------------------------------

def svg_band_plot(x, mean, lower, upper, points=None, width=640, height=400,
                  title="") -> str:
    """Minimal SVG: mean polyline, shaded band, axes and optional scatter."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x)
    x, mean, lower, upper = x[order], np.asarray(mean)[order], np.asarray(lower)[order], np.asarray(upper)[order]
    ys = [lower, upper, mean] + ([np.asarray(points[1], dtype=float)] if points is not None else [])
    y0, y1 = min(float(np.min(v)) for v in ys), max(float(np.max(v)) for v in ys)
    if y1 <= y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    x0, x1 = float(x[0]), float(x[-1])
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 40

    def px(v):
        return pad + (np.asarray(v) - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (np.asarray(v) - y0) / (y1 - y0) * (height - 2 * pad)

    def pts(xs, vs):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(xs), py(vs)))

    band = pts(np.concatenate([x, x[::-1]]), np.concatenate([upper, lower[::-1]]))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>',
           f'<polyline points="{pts(x, mean)}" fill="none" stroke="#08519c" stroke-width="1.5"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{pad}" y="{height - pad + 16}" font-size="11">{x0:.3g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 16}" font-size="11" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="11" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" font-size="11" text-anchor="end">{y1:.3g}</text>']
    if title:
        out.append(f'<text x="{width / 2}" y="{pad / 2}" font-size="13" text-anchor="middle">{title}</text>')
    if points is not None:
        for a, b in zip(px(points[0]), py(points[1])):
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.5" fill="#444"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
