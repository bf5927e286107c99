"""Command-line entry point: ``epical {simulate,fit,predict,sensitivity,report}``.

Every command reads and writes one run directory (``--out``). ``fit``
populates it; ``predict``, ``sensitivity`` and ``report`` add to it.

Exit codes: 0 success, 1 usage error, 2 data or file error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (
    CovariateScaler,
    RunConfig,
    apply_infectious_shift,
    bundled_data_dir,
    city_paths,
    load_series,
    make_synthetic,
    read_populations,
    read_series,
    write_city_files,
    write_rows,
    write_series,
    write_truth,
)
from .exceptions import (
    ConfigError,
    DataError,
    EpicalError,
    HorizonMismatch,
    MissingArtifact,
    ParseError,
)
from .mcmc import ChainSamples, run_chain
from .posterior import fitted_means, predictive_samples, summarize
from .sensitivity import FactorDistribution, posterior_sensitivity
from .sir import Compartments, MeanModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHAIN_FILE = "chain.csv"
FIT_FILE = "fit.json"
TRAIN_FILE = "series_train.csv"
TEST_FILE = "series_test.csv"
FITTED_FILE = "fitted.csv"
FORECAST_FILE = "forecast.csv"
FORECAST_DRAWS_FILE = "forecast_draws.csv"
SENSITIVITY_DIR = "sensitivity"
SUMMARY_FILE = "summary.txt"
INDEX_FILE = "index.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options (each mirrors a config-file key)")
    g.add_argument("--config", help="key = value file; explicit flags override it")
    g.add_argument("--seed", type=int, help="random seed (env EPICAL_SEED overrides the config file)")
    g.add_argument("--burn-in", type=int, help="adaptive burn-in iterations (default 2000)")
    g.add_argument("--samples", type=int, help="post-burn-in iterations (default 2000)")
    g.add_argument("--thin", type=int, help="keep every k-th post-burn-in draw (default 2)")
    g.add_argument("--shift-days", type=int,
                   help="days between infection and confirmation (default 11)")
    g.add_argument("--independent-gp", action="store_true", default=None,
                   help="fix the beta/gamma cross-correlation at zero")
    g.add_argument("--jobs", type=int, help="cities processed in parallel (default 1)")
    g.add_argument("--out", help="run directory (per-city subdirectories with --cities)")
    g.add_argument("--horizon", type=int, help="forecast length in days (default 14)")
    g.add_argument("--pairs", help="interaction pairs as name:name[,name:name...] (default all)")
    g.add_argument("--mean-model", choices=["sir", "test"], help="Poisson mean model (default sir)")
    g.add_argument("--cities", help="comma-separated city names found in --data-dir")
    g.add_argument("--data-dir", help="directory with <city>_cases.csv, <city>_covariates.csv and "
                                      "populations.csv (default: bundled data)")
    return p


def build_parser():
    common = _common_options()
    parser = _Parser(prog="epical", description="Functional SIR calibration with joint GP priors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic benchmark data set")
    p.add_argument("--city", action="store_true",
                   help="write synthetic city case/covariate files instead of the benchmark")

    p = sub.add_parser("fit", parents=[common], help="run the sampler and store the chain")
    p.add_argument("--series", help="combined day|date,count,<covariates> file to train on")
    p.add_argument("--cases", help="date,count file (daily or cumulative)")
    p.add_argument("--covariates", help="date,<covariates> file")
    p.add_argument("--population", type=int, help="city population")
    p.add_argument("--train-start", help="first training date (default: first nonzero count)")
    p.add_argument("--split-date", help="first held-out date (default: hold out --test-days)")
    p.add_argument("--test-days", type=int, help="days held out at the end (default 14)")

    p = sub.add_parser("predict", parents=[common], help="posterior-predictive forecast")
    p.add_argument("--future", help="series file with the future covariates "
                                    "(default: the held-out days of the fit)")
    p.add_argument("--draws", action="store_true", default=None, help="also write every draw")
    p.add_argument("--level", type=float, help="credible level of the intervals (default 0.95)")

    p = sub.add_parser("sensitivity", parents=[common], help="functional ANOVA of R0")
    p.add_argument("--max-draws", type=int, help="posterior draws analysed (default 200)")
    p.add_argument("--integration-points", type=int, help="Monte-Carlo points (default 2000)")
    p.add_argument("--factor-distribution", choices=["empirical", "uniform"],
                   help="marginals of the covariates (default empirical)")

    sub.add_parser("report", parents=[common], help="merge run outputs into one summary")
    return parser


_NON_CONFIG = {"command", "config", "city", "future", "draws", "level"}


def _config(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return RunConfig.resolve(args.config, overrides)


# ---------------------------------------------------------------- helpers


def _out_dir(cfg, create=True) -> Path:
    if not cfg.out:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    if create:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"{out}: cannot create output directory ({exc.strerror})") from exc
        if not os.access(out, os.W_OK):
            raise DataError(f"{out}: output directory is not writable")
    return out


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"{path}: required artifact not found")
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _key_column(series):
    return ("date", list(series.dates)) if series.dates is not None else ("day", series.day.tolist())


class FitArtifacts:
    """Everything a later command needs from a fit directory."""

    def __init__(self, out: Path):
        self.out = out
        self.meta = json.loads(_require(out / FIT_FILE).read_text(encoding="utf-8"))
        self.chain = ChainSamples.from_csv(_require(out / CHAIN_FILE))
        self.train = read_series(_require(out / TRAIN_FILE), population=self.meta["population"])
        self.scaler = CovariateScaler.from_ranges(self.meta["ranges"])
        self.X = self.scaler.transform(self.train.X)

    @property
    def columns(self):
        return list(self.train.columns)

    def model(self) -> MeanModel:
        m = self.meta["mean_model"]
        if m["kind"] == "test":
            return MeanModel(kind="test")
        return MeanModel(kind="sir", initial=Compartments.from_infected(m["population"], m["i0"]))


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args):
    out = _out_dir(cfg)
    if args.city:
        write_city_files(out)
        return [p for p in sorted(out.iterdir()) if p.suffix == ".csv"]
    train, test, truth = make_synthetic(cfg.seed)
    try:
        return [write_series(train, out / "train.csv"), write_series(test, out / "test.csv"),
                write_truth(truth, out / "truth.csv")]
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror}") from exc


def _fit_series(cfg: RunConfig, args):
    """Training and held-out series in original units."""
    series_path = getattr(args, "series", None) or cfg.series
    if series_path:
        train = read_series(series_path, population=cfg.population)
        return train, None
    if not (cfg.cases and cfg.covariates):
        raise UsageError("fit needs --series, or --cases with --covariates and --population")
    series = load_series(cfg.cases, cfg.covariates, cfg.population, cumulative=cfg.cumulative,
                         city=cfg.city)
    if cfg.train_start:
        from datetime import date

        start = date.fromisoformat(cfg.train_start).isoformat()
        first = next((k for k, d in enumerate(series.dates) if d >= start), None)
    else:
        first = next((k for k, c in enumerate(series.y) if c > 0), None)
    if first is None:
        raise ParseError("no training days after the requested start")
    series = series.slice(first, None)
    series = apply_infectious_shift(series, cfg.shift_days)
    if cfg.split_date:
        return series.split_at_date(cfg.split_date)
    if cfg.test_days <= 0:
        return series, None
    if cfg.test_days >= len(series):
        raise ParseError(f"cannot hold out {cfg.test_days} of {len(series)} days")
    return series.split(len(series) - cfg.test_days)


def cmd_fit(cfg: RunConfig, args):
    out = _out_dir(cfg)
    train, test = _fit_series(cfg, args)
    scaler = CovariateScaler().fit(train.X)
    X = scaler.transform(train.X)
    if cfg.mean_model == "sir":
        if train.population is None and cfg.population is None:
            raise UsageError("the sir mean model needs --population")
        pop = int(train.population or cfg.population)
        i0 = float(train.y[0])
        model = MeanModel(kind="sir", initial=Compartments.from_infected(pop, i0))
        model_meta = {"kind": "sir", "population": pop, "i0": i0}
    else:
        model = MeanModel(kind="test")
        model_meta = {"kind": "test"}

    class _D:
        pass

    data = _D()
    data.X, data.y = X, train.y
    chain = run_chain(data, model, cfg.prior(), cfg.chain())
    chain.to_csv(out / CHAIN_FILE)
    write_series(train, out / TRAIN_FILE)
    if test is not None and len(test):
        write_series(test, out / TEST_FILE)
    lam = fitted_means(chain, model)
    s = summarize(lam, 0.95)
    key, keys = _key_column(train)
    write_rows(out / FITTED_FILE, [key, "observed", "mean", "median", "lo", "hi"],
               ([k, int(o), float(a), float(b), float(c), float(d)]
                for k, o, a, b, c, d in zip(keys, train.y, s.mean, s.median, s.lo, s.hi)))
    meta = {
        "city": cfg.city or train.city,
        "columns": list(train.columns),
        "ranges": scaler.ranges.tolist(),
        "population": model_meta.get("population"),
        "mean_model": model_meta,
        "n_train": len(train),
        "n_test": 0 if test is None else len(test),
        "shift_days": int(train.shift),
        "first_day": keys[0],
        "draws": len(chain),
        "acceptance": chain.acceptance,
        "step_sizes": chain.step_sizes,
        "config": cfg.to_dict(),
    }
    _write_json(out / FIT_FILE, meta)
    return [out / CHAIN_FILE, out / FIT_FILE, out / FITTED_FILE]


def cmd_predict(cfg: RunConfig, args):
    out = _out_dir(cfg)
    fit = FitArtifacts(out)
    future_path = Path(args.future) if args.future else out / TEST_FILE
    if not future_path.is_file():
        raise HorizonMismatch(f"{future_path}: no future covariates for a {cfg.horizon}-day forecast")
    future = read_series(future_path)
    if future.columns != tuple(fit.columns):
        raise ParseError(f"{future_path}: covariate columns {future.columns} differ from the fit")
    h = cfg.horizon
    if h < 1 or len(future) < h:
        raise HorizonMismatch(f"{future_path}: {len(future)} covariate rows for a {h}-day horizon")
    future = future.slice(None, h)
    rng = np.random.default_rng(cfg.seed)
    pred = predictive_samples(fit.scaler.transform(future.X), fit.chain, fit.X, fit.model(), rng)
    level = args.level if args.level is not None else 0.95
    s = summarize(pred.y, level)
    key, keys = _key_column(future)
    write_rows(out / FORECAST_FILE, [key, "mean", "median", "lo", "hi", "observed", "mean_rate"],
               ([k, float(a), float(b), float(c), float(d), int(o), float(e)]
                for k, a, b, c, d, o, e in zip(keys, s.mean, s.median, s.lo, s.hi, future.y,
                                               pred.lam.mean(axis=0))))
    written = [out / FORECAST_FILE]
    if args.draws:
        write_rows(out / FORECAST_DRAWS_FILE, ["draw_index", key, "lam", "count"],
                   ([i, keys[t], float(pred.lam[i, t]), int(pred.y[i, t])]
                    for i in range(pred.y.shape[0]) for t in range(h)))
        written.append(out / FORECAST_DRAWS_FILE)
    return written


def parse_pairs(text, columns):
    """``"a:b,c:d"`` to index pairs; ``None`` means every pair."""
    if text is None or not text.strip():
        return None
    pairs = []
    for item in text.split(","):
        parts = [p.strip() for p in item.split(":")]
        if len(parts) != 2:
            raise ParseError(f"bad pair {item!r}; expected name:name")
        try:
            j, k = (columns.index(p) for p in parts)
        except ValueError as exc:
            raise ParseError(f"unknown covariate in pair {item!r}; known: {columns}") from exc
        if j == k:
            raise ParseError(f"pair {item!r} repeats a covariate")
        pairs.append((j, k))
    return pairs


def cmd_sensitivity(cfg: RunConfig, args):
    out = _out_dir(cfg)
    fit = FitArtifacts(out)
    pairs = parse_pairs(cfg.pairs, fit.columns)
    chain = fit.chain
    if len(chain) > cfg.max_draws:
        chain = chain.subset(np.linspace(0, len(chain) - 1, cfg.max_draws).round().astype(int))
    F = FactorDistribution(cfg.factor_distribution, data=fit.X, n_samples=cfg.integration_points,
                           seed=cfg.seed)
    report = posterior_sensitivity(chain, fit.X, F, names=fit.columns, pairs=pairs)
    return report.write(out / SENSITIVITY_DIR, unscale=fit.scaler.unscale_column)


def _read_csv_columns(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=str)
    return header, data


def cmd_report(cfg: RunConfig, args):
    out = _out_dir(cfg, create=False)
    fit = FitArtifacts(out)
    chain = fit.chain
    r0 = (chain.beta / chain.gamma).mean(axis=1)
    s = summarize(r0, 0.95)
    index = {
        "city": fit.meta.get("city", ""),
        "n_train": fit.meta["n_train"],
        "draws": len(chain),
        "acceptance": fit.meta["acceptance"],
        "overall_r0": {"mean": float(s.mean), "lo": float(s.lo), "hi": float(s.hi), "level": 0.95},
        "hyperparameters": {
            "rho": float(chain.rho.mean()), "tau": float(chain.tau.mean()),
            "mu1": float(chain.mu1.mean()), "mu2": float(chain.mu2.mean()),
            "phi": chain.phi.mean(axis=0).tolist(),
        },
        "artifacts": {"chain": CHAIN_FILE, "fit": FIT_FILE, "fitted": FITTED_FILE},
    }
    lines = [f"run directory: {out}"]
    if index["city"]:
        lines.append(f"city: {index['city']}")
    lines += [
        f"training days: {fit.meta['n_train']} (shift {fit.meta['shift_days']} days)",
        f"posterior draws: {len(chain)}",
        "acceptance rates: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(fit.meta["acceptance"].items())),
        f"overall R0 (mean over training days): {s.mean:.4f}  95% interval [{s.lo:.4f}, {s.hi:.4f}]",
        f"rho posterior mean: {chain.rho.mean():.4f}",
        f"tau posterior mean: {chain.tau.mean():.4g}",
        "phi posterior means: " + ", ".join(
            f"{c}={v:.4f}" for c, v in zip(fit.columns, chain.phi.mean(axis=0))),
    ]
    fc = out / FORECAST_FILE
    if fc.is_file():
        header, rows = _read_csv_columns(fc)
        mean = rows[:, 1].astype(float)
        lo, hi = rows[:, 3].astype(float), rows[:, 4].astype(float)
        obs = rows[:, 5].astype(float)
        cover = float(np.mean((obs >= lo) & (obs <= hi)))
        rmse = float(np.sqrt(np.mean((obs - mean) ** 2)))
        index["forecast"] = {"horizon": int(rows.shape[0]), "rmse": rmse, "coverage": cover}
        index["artifacts"]["forecast"] = FORECAST_FILE
        lines.append(f"forecast: {rows.shape[0]} days, RMSE {rmse:.3f}, interval coverage {cover:.2f}")
        lines.append(f"  {header[0]:>12} {'observed':>9} {'mean':>10} {'lo':>9} {'hi':>9}")
        for r in rows:
            lines.append(f"  {r[0]:>12} {int(r[5]):>9d} {float(r[1]):>10.2f} {float(r[3]):>9.1f} "
                         f"{float(r[4]):>9.1f}")
    sdir = out / SENSITIVITY_DIR
    mi = sdir / "main_indices.csv"
    if mi.is_file():
        header, rows = _read_csv_columns(mi)
        vals = rows[:, 1:].astype(float)
        index["main_indices"] = dict(zip(header[1:], vals.mean(axis=0).tolist()))
        index["artifacts"]["sensitivity"] = SENSITIVITY_DIR
        lines.append("main-effect indices (posterior mean):")
        lines += [f"  {c}: {v:.4f}" for c, v in zip(header[1:], vals.mean(axis=0))]
        ii = sdir / "interaction_indices.csv"
        if ii.is_file():
            header, rows = _read_csv_columns(ii)
            vals = rows[:, 1:].astype(float)
            index["interaction_indices"] = dict(zip(header[1:], vals.mean(axis=0).tolist()))
            lines.append("interaction indices (posterior mean):")
            lines += [f"  {c}: {v:.4f}" for c, v in zip(header[1:], vals.mean(axis=0))]
    (out / SUMMARY_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out / INDEX_FILE, index)
    return [out / SUMMARY_FILE, out / INDEX_FILE]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "sensitivity": cmd_sensitivity,
    "report": cmd_report,
}


def _city_config(cfg: RunConfig, city: str) -> RunConfig:
    data_dir = Path(cfg.data_dir) if cfg.data_dir else bundled_data_dir()
    pops = read_populations(data_dir)
    if city not in pops:
        raise ParseError(f"{data_dir / 'populations.csv'}: no population for {city!r}")
    cases, covs = city_paths(data_dir, city)
    values = cfg.to_dict()
    values.update(cases=str(cases), covariates=str(covs), population=pops[city], city=city,
                  out=str(Path(cfg.out) / city), cities=None)
    return RunConfig(**values)


def _run_one(command, cfg, args):
    return [str(p) for p in COMMANDS[command](cfg, args)]


def run(command, cfg: RunConfig, args):
    if cfg.cities and command != "simulate":
        if not cfg.out:
            raise UsageError("--out is required")
        cities = [c.strip() for c in cfg.cities.split(",") if c.strip()]
        configs = [_city_config(cfg, c) for c in cities]
        if cfg.jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(_run_one, [command] * len(configs), configs,
                                        [args] * len(configs)))
        else:
            results = [_run_one(command, c, args) for c in configs]
        return [p for r in results for p in r]
    return _run_one(command, cfg, args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = _config(args)
        written = run(args.command, cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"epical {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"epical {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        where = exc.filename or ""
        print(f"epical {args.command}: file error: {where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except (EpicalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"epical {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
