"""``replgp`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Options given as flags override the config file, which overrides
the built-in defaults.  Outputs without an explicit path land in
``--output-dir``, the config's ``output_dir``, ``$REPLGP_OUTPUT_DIR`` or the
working directory, in that order.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import io
from .gp_core import FitError, FitOptions
from .kernels import Domain
from .noise import ReplicationError, fit_model
from .quantile import fit_quantile_model, gaussian_predictive_quantile, predict_quantiles
from .replication import compact
from .seq_design import (AcquisitionConfig, SequentialOptions, SimulationFailed, run_sequential,
                         sobol_points)
from .sir import SIRConfig, SIRSimulator, build_dataset, reference_stats

logger = logging.getLogger("replgp")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _set(d: dict, dotted: str, value):
    if value is None:
        return
    *path, last = dotted.split(".")
    for p in path:
        d = d.setdefault(p, {})
    d[last] = value


def _config(args, mapping: dict) -> io.RunConfig:
    over = {}
    for flag, key in mapping.items():
        _set(over, key, getattr(args, flag, None))
    _set(over, "seed", args.seed)
    _set(over, "output_dir", args.output_dir)
    return io.load_config(args.config, over)


def _out(cfg: io.RunConfig, explicit, default_name: str) -> Path:
    if explicit:
        path = Path(explicit)
    else:
        path = io.output_dir(cfg.output_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sir_config(cfg: io.RunConfig) -> SIRConfig:
    s = cfg.simulator
    return SIRConfig(population=s.population, initial_infected=s.initial_infected,
                     recovery_prob=s.recovery_prob, beta_min=s.beta_min, beta_max=s.beta_max,
                     horizon=s.horizon, mode=s.mode)


def _fit_options(cfg: io.RunConfig) -> FitOptions:
    return FitOptions(family=cfg.kernel, trend=cfg.trend, n_starts=cfg.fit.n_starts,
                      seed=cfg.seed, likelihood=cfg.fit.likelihood, maxiter=cfg.fit.maxiter)


def _grid(spec: str | None, csv_path: str | None, d: int) -> np.ndarray:
    if csv_path:
        tab = io.read_table(csv_path)
        cols = ["x"] if d == 1 and "x" in tab else io.x_columns(d)
        missing = [c for c in cols if c not in tab]
        if missing:
            raise io.DataError(f"{csv_path}: grid for a {d}-input model needs columns {cols}")
        return np.column_stack([tab[c] for c in cols])
    if d != 1:
        raise io.DataError(f"model has {d} inputs; pass --grid-csv")
    lo, hi, n = (spec or "0:1:101").split(":")
    return np.linspace(float(lo), float(hi), int(n))[:, None]


def _grid_columns(G: np.ndarray) -> dict:
    if G.shape[1] == 1:
        return {"x": G[:, 0]}
    return {name: G[:, j] for j, name in enumerate(io.x_columns(G.shape[1]))}


def _data(cfg: io.RunConfig):
    if not cfg.data:
        raise io.ConfigError("no dataset given (use --data or 'data' in the config)")
    return io.read_dataset(cfg.data)


# -- commands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args, {"layout": "simulator.layout", "n_unique": "simulator.n_unique",
                         "reps": "simulator.reps", "n_points": "simulator.n_points",
                         "mode": "simulator.mode"})
    sim = _sir_config(cfg)
    s = cfg.simulator
    raw = build_dataset(sim, s.layout, n_unique=s.n_unique, reps=s.reps,
                        n_points=s.n_points, seed=cfg.seed)
    path = _out(cfg, args.out, "data.csv")
    io.write_dataset(path, raw)
    print(f"wrote {raw.N} rows to {path}")
    if args.reference:
        ref = reference_stats(sim, grid_size=args.ref_grid, reps=args.ref_reps)
        io.write_reference(_out(cfg, args.reference, "reference.csv"), ref)
        print(f"wrote reference table to {args.reference}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args, {"data": "data", "noise": "noise", "kernel": "kernel", "trend": "trend",
                         "n_starts": "fit.n_starts", "likelihood": "fit.likelihood"})
    design = compact(_data(cfg))
    t0 = time.perf_counter()
    model = fit_model(design, cfg.noise, _fit_options(cfg))
    wall = time.perf_counter() - t0
    path = _out(cfg, args.out, "model.json")
    io.save_model(model, path)
    report = {"n": design.n, "N": design.N, "noise": cfg.noise, "kernel": cfg.kernel,
              "nll": None if not np.isfinite(model.nll) else model.nll,
              "lengthscales": model.kernel.lengthscales.tolist(),
              "process_variance": model.kernel.process_variance,
              "degenerate": model.degenerate, "wall_time": wall}
    with open(_out(cfg, args.report, "fit_report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"fit {cfg.noise} on n={design.n} (N={design.N}) in {wall:.3f}s -> {path}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args, {})
    model = io.load_model(args.model)
    G = _grid(args.grid, args.grid_csv, model.kernel.dim)
    try:
        p = model.predict(G)
    except ValueError as exc:
        raise io.DataError(f"grid does not match the model: {exc}") from None
    cols = _grid_columns(G)
    cols.update(mean=p.mean, latent_sd=p.latent_sd, obs_sd=p.obs_sd,
                q05=gaussian_predictive_quantile(model, G, 0.05),
                q95=gaussian_predictive_quantile(model, G, 0.95))
    path = _out(cfg, args.out, "predictions.csv")
    io.write_table(path, cols)
    if args.svg:
        if G.shape[1] != 1:
            raise io.DataError("plots are only drawn for one input")
        svg = io.svg_band_plot(G[:, 0], p.mean, cols["q05"], cols["q95"],
                               points=(model.design.Xu[:, 0], model.design.means),
                               title="mean and 90% predictive band")
        _out(cfg, args.svg, "predictions.svg").write_text(svg)
    print(f"wrote {G.shape[0]} predictions to {path}")
    return 0


def cmd_quantile(args) -> int:
    if args.levels:
        try:
            args.levels = [float(v) for v in args.levels.split(",")]
        except ValueError:
            raise io.ConfigError(f"bad --levels {args.levels!r}") from None
    cfg = _config(args, {"data": "data", "quantile_mode": "quantile_mode", "kernel": "kernel",
                         "n_starts": "fit.n_starts", "levels": "quantile_levels"})
    design = compact(_data(cfg))
    qm = fit_quantile_model(design, cfg.quantile_levels, cfg.quantile_mode, _fit_options(cfg))
    G = _grid(args.grid, args.grid_csv, design.d)
    Q = predict_quantiles(qm, G)
    cols = _grid_columns(G)
    for j, a in enumerate(qm.levels):
        cols[io.level_name(a)] = Q[:, j]
    path = _out(cfg, args.out, "quantiles.csv")
    io.write_table(path, cols)
    print(f"wrote {len(qm.levels)} quantile surfaces to {path}")
    return 0


def cmd_design(args) -> int:
    cfg = _config(args, {"strategy": "acquisition.strategy", "budget": "acquisition.budget",
                         "threshold": "acquisition.threshold", "ratio": "acquisition.reduction_ratio",
                         "cap": "acquisition.replicate_cap", "horizon": "acquisition.horizon",
                         "loop_noise": "acquisition.noise", "kernel": "kernel",
                         "initial_unique": "acquisition.initial_unique",
                         "initial_reps": "acquisition.initial_reps"})
    acq = cfg.acquisition
    domain = Domain.unit(1)
    kw = dict(threshold=acq.threshold, ucb_beta=acq.ucb_beta, reduction_ratio=acq.reduction_ratio,
              replicate_cap=acq.replicate_cap, candidate_count=acq.candidate_count,
              horizon=acq.horizon)
    if acq.quad_count:
        config = AcquisitionConfig(sobol_points(acq.quad_count, domain, cfg.seed), domain, **kw)
    else:
        config = AcquisitionConfig.default(domain, cfg.seed, **kw)
    if acq.strategy == "contour-sur+budget" and acq.threshold is None:
        raise io.ConfigError("contour-sur+budget needs acquisition.threshold")
    opts = SequentialOptions(noise=acq.noise, fit=_fit_options(cfg),
                             refresh_every=acq.refresh_every, seed=cfg.seed,
                             checkpoint_path=str(_out(cfg, args.checkpoint, "checkpoint.json")))
    sim = SIRSimulator(_sir_config(cfg))
    X0 = np.repeat(np.linspace(0.0, 1.0, acq.initial_unique), acq.initial_reps)[:, None]
    resume = None
    if args.resume:
        with open(args.resume) as fh:
            resume = json.load(fh)
    log = run_sequential(sim, X0, acq.strategy, acq.budget, config, opts, resume=resume)
    log.to_jsonl(_out(cfg, args.log, "run_log.jsonl"))
    io.save_model(log.model, _out(cfg, args.model_out, "final_model.json"))
    d = log.design
    cols = _grid_columns(d.Xu)
    cols.update(count=d.counts, mean=d.means)
    io.write_table(_out(cfg, args.designs, "designs.csv"), cols)
    print(f"{acq.strategy}: {len(log.records) - 1} decisions, {d.n} unique designs, N={d.N}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args, {"n_starts": "fit.n_starts"})
    sim = _sir_config(cfg)
    s = cfg.simulator
    opts = _fit_options(cfg)
    layouts = {"replicated": build_dataset(sim, "replicated", n_unique=s.n_unique, reps=s.reps, seed=cfg.seed),
               "dense": build_dataset(sim, "dense", n_points=s.n_points, seed=cfg.seed)}
    rows = []
    times = {}
    for layout, raw in layouts.items():
        design = compact(raw)
        for noise in ("homoscedastic", "sk"):
            t0 = time.perf_counter()
            try:
                model = fit_model(design, noise, opts)
                status, nll = "ok", model.nll
            except ReplicationError as exc:
                status, nll = f"unavailable: {exc}", None
            wall = time.perf_counter() - t0
            times[(layout, noise)] = wall
            rows.append({"layout": layout, "noise": noise, "n": design.n, "N": design.N,
                         "wall_time": wall, "nll": nll, "status": status})
            print(f"{layout:>10} {noise:>13}  n={design.n:5d}  {wall:8.3f}s  {status}")
    ratio = times[("dense", "homoscedastic")] / times[("replicated", "homoscedastic")]
    print(f"n-form speed-up (homoscedastic, dense / replicated): {ratio:.1f}x")
    with open(_out(cfg, args.out, "bench.json"), "w") as fh:
        json.dump({"fits": rows, "speed_ratio": ratio}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="replgp", description="Replication-aware GP surrogates.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate SIR datasets")
    s.add_argument("--layout", choices=["replicated", "dense"])
    s.add_argument("--n-unique", dest="n_unique", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--n-points", dest="n_points", type=int)
    s.add_argument("--mode", choices=["iid", "crn"])
    s.add_argument("--out")
    s.add_argument("--reference", help="also write the reference moment/quantile table here")
    s.add_argument("--ref-grid", dest="ref_grid", type=int, default=51)
    s.add_argument("--ref-reps", dest="ref_reps", type=int, default=10000)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit a GP to a dataset")
    s.add_argument("--data")
    s.add_argument("--noise", help="homoscedastic | sk | latent | parametric:D | known:SPEC")
    s.add_argument("--kernel", choices=["matern-5/2", "squared-exponential"])
    s.add_argument("--trend", choices=["constant", "zero"])
    s.add_argument("--n-starts", dest="n_starts", type=int)
    s.add_argument("--likelihood", choices=["means", "full"])
    s.add_argument("--out")
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--grid", help="LO:HI:N for one input (default 0:1:101)")
    s.add_argument("--grid-csv", dest="grid_csv")
    s.add_argument("--out")
    s.add_argument("--svg", help="write a band plot here")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("quantile", parents=[common], help="fit quantile surfaces")
    s.add_argument("--data")
    s.add_argument("--levels", help="comma separated, e.g. 0.05,0.5,0.95")
    s.add_argument("--mode", dest="quantile_mode", choices=["per-level", "augmented"])
    s.add_argument("--kernel", choices=["matern-5/2", "squared-exponential"])
    s.add_argument("--n-starts", dest="n_starts", type=int)
    s.add_argument("--grid")
    s.add_argument("--grid-csv", dest="grid_csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_quantile)

    s = sub.add_parser("design", parents=[common], help="run a sequential design on the SIR simulator")
    s.add_argument("--strategy")
    s.add_argument("--budget", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--ratio", type=float, help="target variance ratio after a batch")
    s.add_argument("--cap", type=int, help="largest replicate batch")
    s.add_argument("--horizon", type=int)
    s.add_argument("--noise", dest="loop_noise")
    s.add_argument("--kernel", choices=["matern-5/2", "squared-exponential"])
    s.add_argument("--initial-unique", dest="initial_unique", type=int)
    s.add_argument("--initial-reps", dest="initial_reps", type=int)
    s.add_argument("--log")
    s.add_argument("--model-out", dest="model_out")
    s.add_argument("--designs")
    s.add_argument("--checkpoint")
    s.add_argument("--resume")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("bench", parents=[common], help="time n-form against N-form fits")
    s.add_argument("--n-starts", dest="n_starts", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicationError as exc:
        print(f"replication required: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (io.DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, LinAlgError, SimulationFailed, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
