"""Reading, aligning, transforming and writing observation series.

Input files are UTF-8 comma-separated text with a header row:

* cases: ``date,count`` with ISO dates (daily or cumulative counts)
* covariates: ``date,temperature,humidity,wind_speed,pressure,precipitation,intervention``
* series (our own format): ``date|day,count,<covariate columns>``
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime as dt
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.preprocessing import MinMaxScaler
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    ConstantColumn,
    DateGapError,
    NegativePopulation,
    ConfigError,
    ParseError,
    ShiftTooLarge,
)

COVARIATE_COLUMNS = ("temperature", "humidity", "wind_speed", "pressure", "precipitation", "intervention")
DEFAULT_SHIFT_DAYS = 11
SEED_ENV = "EPICAL_SEED"


@dataclass(frozen=True)
class ObservationSeries:
    """Daily counts with one covariate row per day.

    ``dates`` holds ISO dates when the series came from dated files and is
    ``None`` for synthetic series, which are indexed by ``day`` alone.
    """

    day: np.ndarray
    y: np.ndarray
    X: np.ndarray
    columns: tuple
    dates: tuple | None = None
    population: int | None = None
    city: str = ""
    shift: int = 0
    clamped: int = 0

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != y.shape[0]:
            raise ParseError(f"{y.shape[0]} counts but {X.shape[0]} covariate rows")
        if X.shape[1] != len(self.columns):
            raise ParseError(f"{X.shape[1]} covariate columns but {len(self.columns)} names")
        if y.size and (np.any(y < 0) or np.any(y != np.round(y))):
            raise ParseError("counts must be nonnegative integers")
        if self.population is not None and self.population <= 0:
            raise NegativePopulation(f"population must be positive, got {self.population}")
        if self.dates is not None and len(self.dates) != y.shape[0]:
            raise ParseError("dates and counts differ in length")
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "day", np.asarray(self.day, dtype=np.int64))
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(self.dates))

    def __len__(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def slice(self, start=None, stop=None):
        sl = slice(start, stop)
        return dataclasses.replace(
            self, day=self.day[sl], y=self.y[sl], X=self.X[sl],
            dates=None if self.dates is None else self.dates[sl],
        )

    def split(self, n_train):
        """First ``n_train`` days and the rest."""
        if not 0 < n_train <= len(self):
            raise ParseError(f"cannot split {len(self)} days at {n_train}")
        return self.slice(None, n_train), self.slice(n_train, None)

    def split_at_date(self, date):
        """Training days strictly before ``date`` and the rest."""
        if self.dates is None:
            raise ParseError("series has no dates")
        date = _parse_date(date, "split date")
        n = sum(1 for d in self.dates if dt.date.fromisoformat(d) < date)
        return self.split(n)

    def with_X(self, X):
        return dataclasses.replace(self, X=np.asarray(X, dtype=float))


def _parse_date(text, where):
    if isinstance(text, dt.date):
        return text
    try:
        return dt.date.fromisoformat(str(text).strip())
    except ValueError as exc:
        raise ParseError(f"{where}: bad date {text!r}") from exc


def _parse_float(text, where):
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: not a number: {text!r}") from exc


def _read_table(path):
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ParseError(f"{path}: file not found") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    return header, body


def _dated_rows(path, required):
    header, body = _read_table(path)
    if header[0] != "date" or any(c not in header for c in required):
        raise ParseError(f"{path}: header must start with 'date' and contain {list(required)}")
    out = {}
    for k, r in enumerate(body, start=2):
        day = _parse_date(r[0], f"{path}:{k}")
        if day in out:
            raise ParseError(f"{path}:{k}: duplicate date {day}")
        out[day] = r
    return header, out


def _consecutive(days, path):
    for a, b in zip(days, days[1:]):
        if (b - a).days != 1:
            raise DateGapError(f"{path}: days missing between {a} and {b}")


def looks_cumulative(counts) -> bool:
    """Heuristic: at least 95% of day-to-day changes are nonnegative and the series grows."""
    counts = np.asarray(counts, dtype=float)
    if counts.size < 3:
        return False
    diffs = np.diff(counts)
    return bool(np.mean(diffs >= 0) >= 0.95 and counts[-1] > counts[0])


def to_daily(counts):
    """Difference cumulative counts; negative corrections are clamped to 0.

    Returns ``(daily, number_clamped)``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    daily = np.diff(counts, prepend=0)
    neg = int(np.sum(daily < 0))
    return np.maximum(daily, 0), neg


def load_series(cases_path, covariates_path, population, cumulative=None, city="",
                columns=COVARIATE_COLUMNS) -> ObservationSeries:
    """Join a case file and a covariate file on date.

    The case file may hold cumulative totals (detected by monotonicity
    unless ``cumulative`` is given). The covariate file must cover every
    case day.

    Raises
    ------
    ParseError, DateGapError, NegativePopulation
    """
    if population is None or int(population) <= 0:
        raise NegativePopulation(f"population must be a positive integer, got {population}")
    _, cases = _dated_rows(cases_path, ["count"])
    header, covs = _dated_rows(covariates_path, columns)
    days = sorted(cases)
    _consecutive(days, cases_path)
    raw = []
    for day in days:
        value = _parse_float(cases[day][1], f"{cases_path} ({day})")
        if value < 0 or value != round(value):
            raise ParseError(f"{cases_path} ({day}): count must be a nonnegative integer")
        raw.append(int(value))
    if cumulative is None:
        cumulative = looks_cumulative(raw)
    if cumulative:
        y, clamped = to_daily(raw)
        if clamped:
            warnings.warn(f"{clamped} negative daily differences clamped to 0 in {cases_path}",
                          stacklevel=2)
    else:
        y, clamped = np.asarray(raw, dtype=np.int64), 0
    missing = [day for day in days if day not in covs]
    if missing:
        raise DateGapError(f"{covariates_path}: no covariates for {len(missing)} day(s), first {missing[0]}")
    idx = [header.index(c) for c in columns]
    X = np.array([[_parse_float(covs[day][i], f"{covariates_path} ({day})") for i in idx] for day in days])
    return ObservationSeries(day=np.arange(1, len(days) + 1), y=y, X=X, columns=tuple(columns),
                             dates=tuple(d.isoformat() for d in days), population=int(population),
                             city=city, clamped=clamped)


def write_rows(path, header, rows):
    """Write a CSV with a header; floats use the shortest round-trip repr."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_series(series: ObservationSeries, path):
    """Write the combined series format (lossless for the stored values)."""
    key = "date" if series.dates is not None else "day"
    keys = series.dates if series.dates is not None else series.day
    rows = ([k, int(c)] + [float(v) for v in x] for k, c, x in zip(keys, series.y, series.X))
    return write_rows(path, [key, "count", *series.columns], rows)


def read_series(path, population=None, city="", shift=0) -> ObservationSeries:
    """Read the combined series format written by :func:`write_series`."""
    header, body = _read_table(path)
    if len(header) < 3 or header[0] not in ("date", "day") or header[1] != "count":
        raise ParseError(f"{path}: header must be 'date|day,count,<covariates>'")
    columns = tuple(header[2:])
    y = [_parse_float(r[1], f"{path}:{k}") for k, r in enumerate(body, start=2)]
    X = np.array([[_parse_float(v, f"{path}:{k}") for v in r[2:]] for k, r in enumerate(body, start=2)],
                 dtype=float).reshape(len(body), len(columns))
    if header[0] == "date":
        dates = [_parse_date(r[0], f"{path}:{k}") for k, r in enumerate(body, start=2)]
        _consecutive(dates, path)
        day = np.arange(1, len(body) + 1)
        dates = tuple(d.isoformat() for d in dates)
    else:
        day = np.array([int(_parse_float(r[0], f"{path}:{k}")) for k, r in enumerate(body, start=2)])
        dates = None
    return ObservationSeries(day=day, y=np.asarray(y), X=X, columns=columns, dates=dates,
                             population=population, city=city, shift=shift)


def apply_infectious_shift(series: ObservationSeries, k_days: int) -> ObservationSeries:
    """Pair the covariates of day t with the counts confirmed on day t + k.

    Day labels and dates follow the covariate (infection) day.

    Raises
    ------
    ShiftTooLarge
        If ``k_days`` is not shorter than the series.
    """
    k = int(k_days)
    if k < 0:
        raise ShiftTooLarge(f"shift must be nonnegative, got {k}")
    if k >= len(series):
        raise ShiftTooLarge(f"shift of {k} days leaves nothing of a {len(series)}-day series")
    if k == 0:
        return series
    n = len(series) - k
    return dataclasses.replace(
        series, day=series.day[:n], y=series.y[k:], X=series.X[:n],
        dates=None if series.dates is None else series.dates[:n], shift=series.shift + k,
    )


class CovariateScaler(MinMaxScaler):
    """Min-max scaling to the unit cube that refuses constant columns.

    Rows outside the training range map outside [0, 1], which is allowed.
    """

    def __init__(self, copy=True):
        super().__init__(feature_range=(0, 1), copy=copy, clip=False)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        span = X.max(axis=0) - X.min(axis=0)
        if np.any(span <= 0):
            bad = np.flatnonzero(span <= 0).tolist()
            raise ConstantColumn(f"constant covariate column(s) {bad}; cannot scale")
        return super().fit(X, y)

    @property
    def ranges(self):
        check_is_fitted(self)
        return np.column_stack([self.data_min_, self.data_max_])

    @classmethod
    def from_ranges(cls, ranges):
        ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
        return cls().fit(ranges.T)

    def unscale_column(self, j, values):
        check_is_fitted(self)
        return np.asarray(values, dtype=float) * self.data_range_[j] + self.data_min_[j]


def scale_covariates(train: ObservationSeries, *others: ObservationSeries):
    """Scale ``train`` to the unit cube and apply the same map to ``others``.

    Returns ``(train_scaled, [others_scaled...], scaler)``.
    """
    scaler = CovariateScaler().fit(train.X)
    return (train.with_X(scaler.transform(train.X)),
            [o.with_X(scaler.transform(o.X)) for o in others], scaler)


# ---------------------------------------------------------------- synthetic data


def true_beta(x):
    x = np.asarray(x, dtype=float)
    return np.sin(3 * x) * np.exp(-x) + 0.2


def true_gamma(x):
    return np.sin(3 * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SyntheticTruth:
    """Known rate functions and the means that generated a synthetic series."""

    x: np.ndarray
    lam: np.ndarray
    beta_fn: object = field(default=true_beta, repr=False)
    gamma_fn: object = field(default=true_gamma, repr=False)

    @property
    def beta(self):
        return self.beta_fn(self.x)

    @property
    def gamma(self):
        return self.gamma_fn(self.x)


def make_synthetic(seed, n=40, n_train=30):
    """Benchmark data for the ``test`` mean model.

    ``x_t ~ U(0, 1)`` and ``y_t ~ Poisson(5 beta(x_t) + gamma(x_t) (t / 10)^2)``
    with ``beta(x) = sin(3x) exp(-x) + 0.2`` and ``gamma(x) = sin(3x)``.
    Returns ``(train, test, truth)``.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    t = np.arange(1, n + 1, dtype=float)
    lam = 5.0 * true_beta(x) + true_gamma(x) * (t / 10.0) ** 2
    y = rng.poisson(lam)
    series = ObservationSeries(day=np.arange(1, n + 1), y=y, X=x[:, None], columns=("x",))
    train, test = series.split(n_train)
    return train, test, SyntheticTruth(x=x, lam=lam)


def write_truth(truth: SyntheticTruth, path):
    rows = ([t + 1, float(x), float(b), float(g), float(m)]
            for t, (x, b, g, m) in enumerate(zip(truth.x, truth.beta, truth.gamma, truth.lam)))
    return write_rows(path, ["day", "x", "beta", "gamma", "mean"], rows)


def make_city(seed, days=100, population=500_000, start="2020-06-01", i0=40,
              lag=DEFAULT_SHIFT_DAYS):
    """A synthetic city with weather, intervention levels and SIR-generated cases.

    Infections on day t follow the SIR recursion driven by day t's
    covariates and are confirmed ``lag`` days later; the first ``lag`` days
    only see a trickle of earlier cases. Returns ``(cases_rows,
    covariate_rows)`` ready for :func:`write_rows`, with cumulative counts
    as in most public feeds.
    """
    from .sir import Compartments, rollout

    rng = np.random.default_rng(seed)
    t = np.arange(days)
    temperature = 22 + 8 * np.sin(2 * np.pi * (t + rng.uniform(0, 30)) / 120) + rng.normal(0, 2, days)
    humidity = np.clip(60 + 15 * np.sin(2 * np.pi * t / 45) + rng.normal(0, 6, days), 15, 100)
    wind = np.abs(10 + rng.normal(0, 3, days))
    pressure = 1013 + np.cumsum(rng.normal(0, 1.2, days))
    precipitation = np.where(rng.uniform(size=days) < 0.3, rng.gamma(1.2, 5.0, days), 0.0)
    change = np.sort(rng.choice(np.arange(10, days - 10), size=4, replace=False))
    intervention = np.ones(days, dtype=int)
    levels = [3, 5, 4, 2]
    for c, lev in zip(change, levels):
        intervention[c:] = lev
    ztemp = (temperature - 22) / 8
    beta = 0.32 - 0.035 * (intervention - 1) - 0.02 * ztemp + 0.01 * (humidity - 60) / 15
    beta = np.clip(beta, 0.05, 0.6)
    gamma = np.clip(0.12 + 0.01 * (wind - 10) / 3, 0.05, 0.4)
    s, _, _ = rollout(Compartments.from_infected(population, i0), beta, gamma, clamp=True)
    infections = np.maximum(s[:-1] - s[1:], 1e-9)
    confirmed = np.concatenate([np.full(lag, 2.0), infections[:days - lag]])
    cumulative = np.cumsum(rng.poisson(confirmed))
    first = dt.date.fromisoformat(start)
    dates = [(first + dt.timedelta(days=int(k))).isoformat() for k in t]
    cases = [[d, int(c)] for d, c in zip(dates, cumulative)]
    covs = [[d, round(float(a), 2), round(float(b), 2), round(float(c), 2), round(float(e), 2),
             round(float(f), 2), int(g)]
            for d, a, b, c, e, f, g in zip(dates, temperature, humidity, wind, pressure,
                                           precipitation, intervention)]
    return cases, covs


BUNDLED_CITIES = {"riverton": (101, 500_000), "lakeside": (202, 350_000)}


def bundled_data_dir() -> Path:
    return Path(str(resources.files("epical") / "data"))


def city_paths(data_dir, city):
    data_dir = Path(data_dir)
    return data_dir / f"{city}_cases.csv", data_dir / f"{city}_covariates.csv"


def read_populations(data_dir) -> dict:
    path = Path(data_dir) / "populations.csv"
    header, body = _read_table(path)
    if header[:2] != ["city", "population"]:
        raise ParseError(f"{path}: header must be 'city,population'")
    out = {}
    for k, r in enumerate(body, start=2):
        pop = _parse_float(r[1], f"{path}:{k}")
        if pop <= 0:
            raise NegativePopulation(f"{path}:{k}: population must be positive")
        out[r[0].strip()] = int(pop)
    return out


def write_city_files(data_dir, cities=BUNDLED_CITIES):
    """(Re)generate the city CSVs and ``populations.csv`` under ``data_dir``."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for city, (seed, pop) in cities.items():
        cases, covs = make_city(seed, population=pop)
        cpath, vpath = city_paths(data_dir, city)
        write_rows(cpath, ["date", "count"], cases)
        write_rows(vpath, ["date", *COVARIATE_COLUMNS], covs)
    write_rows(data_dir / "populations.csv", ["city", "population"],
               ([c, p] for c, (_, p) in cities.items()))


# ---------------------------------------------------------------- run configuration


@dataclass
class RunConfig:
    """Every tunable of a run; each field has a command-line flag of the same name.

    Precedence, lowest first: these defaults, a config file, the
    ``EPICAL_SEED`` environment variable (seed only), explicit flags.
    """

    out: str | None = None
    cases: str | None = None
    covariates: str | None = None
    series: str | None = None
    cities: str | None = None
    data_dir: str | None = None
    population: int | None = None
    city: str = ""
    cumulative: bool | None = None
    shift_days: int = DEFAULT_SHIFT_DAYS
    train_start: str | None = None
    split_date: str | None = None
    test_days: int = 14
    mean_model: str = "sir"
    seed: int = 0
    burn_in: int = 2000
    samples: int = 2000
    thin: int = 2
    independent_gp: bool = False
    jobs: int = 1
    horizon: int = 14
    pairs: str | None = None
    factor_distribution: str = "empirical"
    integration_points: int = 2000
    max_draws: int = 200
    a_tau: float = 0.01
    b_tau: float = 0.01
    b_rho: float = 0.1
    b_phi: float = 0.1
    alpha1: float = 0.0
    alpha2: float = 0.0
    sigma2_1: float = 1.0
    sigma2_2: float = 1.0

    def __post_init__(self):
        if self.shift_days < 0:
            raise ConfigError(f"shift_days must be nonnegative, got {self.shift_days}")
        if self.mean_model not in ("sir", "test"):
            raise ConfigError(f"mean_model must be 'sir' or 'test', got {self.mean_model!r}")
        if self.factor_distribution not in ("empirical", "uniform"):
            raise ConfigError("factor_distribution must be 'empirical' or 'uniform'")
        for key in ("burn_in", "samples", "thin", "jobs", "horizon", "max_draws", "integration_points"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1, got {getattr(self, key)}")
        for key in ("a_tau", "b_tau", "b_rho", "b_phi", "sigma2_1", "sigma2_2"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")

    @classmethod
    def field_types(cls):
        hints = {"int": int, "float": float, "bool": bool, "str": str}
        out = {}
        for f in dataclasses.fields(cls):
            base = str(f.type).split("|")[0].strip()
            out[f.name] = hints.get(base, str)
        return out

    @classmethod
    def coerce(cls, key, text):
        kind = cls.field_types().get(key)
        if kind is None:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(text, str):
            raw = text.strip()
            if raw.lower() in ("", "none"):
                return None
            try:
                if kind is bool:
                    if raw.lower() in ("1", "true", "yes", "on"):
                        return True
                    if raw.lower() in ("0", "false", "no", "off"):
                        return False
                    raise ValueError(raw)
                if kind is int:
                    return int(raw)
                if kind is float:
                    return float(raw)
            except ValueError as exc:
                raise ConfigError(f"configuration key {key!r}: bad value {text!r}") from exc
            return raw
        return text

    @classmethod
    def read_file(cls, path) -> dict:
        """Parse ``key = value`` lines (an optional ``[section]`` header is ignored)."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            if not text.lstrip().startswith("["):
                text = "[run]\n" + text
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                key = key.replace("-", "_")
                values[key] = cls.coerce(key, raw)
        return values

    @classmethod
    def resolve(cls, config_path=None, overrides=None, environ=None):
        """Build a config from the layered sources."""
        environ = os.environ if environ is None else environ
        values = {}
        if config_path:
            values.update(cls.read_file(config_path))
        if environ.get(SEED_ENV, "").strip():
            values["seed"] = cls.coerce("seed", environ[SEED_ENV])
        for key, val in (overrides or {}).items():
            if val is not None:
                values[key] = val
        values = {k: v for k, v in values.items() if v is not None}
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def prior(self):
        from .mcmc import PriorConfig

        return PriorConfig(a=self.a_tau, b=self.b_tau, b_rho=self.b_rho, b_phi=self.b_phi,
                           alpha1=self.alpha1, alpha2=self.alpha2,
                           sigma2_1=self.sigma2_1, sigma2_2=self.sigma2_2)

    def chain(self):
        from .mcmc import ChainConfig

        return ChainConfig(burn_in=self.burn_in, samples=self.samples, thin=self.thin,
                           seed=self.seed, independent_gp=self.independent_gp)

    def to_dict(self):
        return dataclasses.asdict(self)
