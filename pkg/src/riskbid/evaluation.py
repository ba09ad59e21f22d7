"""Parameter sweeps, CP-Profit model selection and experiment orchestration."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .bidders import make_bidder
from .ctr_model import BayesianLogisticRegression
from .exceptions import InvalidInputError, RiskBidError
from .market import market_from_params
from .simulator import AuctionLog, ReplayMetrics, click_value_from_training, read_log, replay_bids
from .strategies import KINDS

__all__ = [
    "SweepPoint",
    "BudgetSpec",
    "ExperimentConfig",
    "cp_profit",
    "sweep",
    "select_model",
    "dominance",
    "run_experiment",
    "write_report",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_ALPHAS = (-2.0, -1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, 2.0)
DEFAULT_PHIS = tuple(2.0 ** k for k in range(-6, 7))
DEFAULT_LAMBDAS = (0.0, 0.2, 0.4)
DEFAULT_BUDGETS = (None, Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16), Fraction(1, 32))


def cp_profit(profit, cost, lam):
    """Cost-penalised profit ``profit - lam * cost``."""
    if np.any(np.asarray(cost) < 0):
        raise InvalidInputError("cost must be >= 0")
    return profit - lam * cost


@dataclass
class SweepPoint:
    kind: str
    alpha: float
    phi: float
    metrics: ReplayMetrics
    split: str = "validation"
    budget_fraction: str | None = None

    @property
    def profit(self):
        return self.metrics.profit

    @property
    def cost(self):
        return self.metrics.cost

    def to_dict(self):
        d = asdict(self)
        d["metrics"] = self.metrics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["metrics"] = ReplayMetrics(**d["metrics"])
        return cls(**d)


@dataclass(frozen=True)
class BudgetSpec:
    fractions: tuple = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16), Fraction(1, 32))
    base: float = 0.0

    def __post_init__(self):
        for f in self.fractions:
            if not 0 < f <= 1:
                raise InvalidInputError(f"budget fraction {f} outside (0, 1]")

    def budgets(self):
        return [float(f) * self.base for f in self.fractions]


def _fraction_label(f):
    return None if f is None else str(Fraction(f))


def sweep(
    bidder,
    log: AuctionLog,
    alphas=DEFAULT_ALPHAS,
    phis=(1.0,),
    budget=None,
    split: str = "validation",
    budget_fraction=None,
    n_jobs: int | None = None,
) -> list[SweepPoint]:
    """Replay ``log`` once per ``(alpha, phi)`` pair.

    ``bidder`` must already be fitted; RMP bidders are refitted per alpha
    (their table depends on it). LR ignores alpha and is swept over phi only.
    Points come back in grid order (alpha-major).
    """
    alphas = [float(a) for a in alphas]
    phis = [float(p) for p in phis]
    if not alphas or not phis:
        raise InvalidInputError("alpha and phi grids must be non-empty")
    if bidder.kind == "LR":
        alphas = [0.0]
    m, s2 = bidder.ctr_model.posterior_params(log.X)
    v = float(bidder.v)

    def run_alpha(alpha):
        b = copy.copy(bidder)
        try:
            if b.kind != "LR":
                b.set_params(alpha=alpha)
            if b.kind == "RMP":
                b.fit()
            base = b.set_params(phi=1.0).bid_posterior(m, s2)
            out = []
            for phi in phis:
                metrics = replay_bids(phi * base, log.clicks, log.prices, v, budget)
                out.append(SweepPoint(b.kind, alpha, phi, metrics, split, _fraction_label(budget_fraction)))
            return out
        except RiskBidError as exc:
            raise type(exc)(f"sweep failed at alpha={alpha}: {exc}") from exc

    if n_jobs in (None, 1) or len(alphas) == 1:
        chunks = [run_alpha(a) for a in alphas]
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs == -1 else n_jobs) as pool:
            chunks = list(pool.map(run_alpha, alphas))
    return [p for chunk in chunks for p in chunk]


def select_model(points, lam: float) -> SweepPoint:
    """Point with the highest CP-Profit; ties go to the lower cost."""
    if not points:
        raise InvalidInputError("no sweep points to select from")
    best = None
    for p in points:
        score = cp_profit(p.profit, p.cost, lam)
        if best is None or score > best[0] or (score == best[0] and p.cost < best[1].cost):
            best = (score, p)
    return best[1]


def dominance(points) -> list[bool]:
    """Flag points beaten by another with >= profit and <= cost, one strictly."""
    profit = np.array([p.profit for p in points], dtype=np.float64)
    cost = np.array([p.cost for p in points], dtype=np.float64)
    ge = profit[None, :] >= profit[:, None]
    le = cost[None, :] <= cost[:, None]
    strict = (profit[None, :] > profit[:, None]) | (cost[None, :] < cost[:, None])
    dom = ge & le & strict
    return [bool(row.any()) for row in dom]


# -- experiments ---------------------------------------------------------------

def _floats(text):
    return tuple(float(Fraction(t.strip())) for t in str(text).split(",") if t.strip())


def _budgets(text):
    out = []
    for t in str(text).split(","):
        t = t.strip()
        if not t:
            continue
        out.append(None if t.lower() == "none" else Fraction(t))
    return tuple(out)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment end to end."""

    train: str = ""
    test: str = ""
    artifacts: str = "artifacts"
    seed: int | None = None
    eta: float = 0.01
    epochs: int = 1
    q0: float = 1.0
    mu0: float = 0.0
    map_steps: int = 1
    shuffle: bool = False
    market: str = "lognormal"
    m_bins: int = 1000
    s2_bins: int = 1000
    table_method: str = "quadrature"
    samples_per_cell: int = 1000
    bid_steps: int = 1000
    strategies: tuple = KINDS
    alphas: tuple = DEFAULT_ALPHAS
    phis: tuple = DEFAULT_PHIS
    lambdas: tuple = DEFAULT_LAMBDAS
    budgets: tuple = DEFAULT_BUDGETS
    value_proportion: float = 1.0
    n_jobs: int | None = None

    SECTIONS = {
        "paths": ("train", "test", "artifacts"),
        "model": ("eta", "epochs", "q0", "mu0", "map_steps", "shuffle"),
        "market": ("market",),
        "tables": ("m_bins", "s2_bins", "table_method", "samples_per_cell", "bid_steps"),
        "strategies": ("strategies", "alphas", "phis"),
        "evaluation": ("lambdas", "budgets", "value_proportion"),
        "run": ("seed", "n_jobs"),
    }

    def __post_init__(self):
        self.strategies = tuple(
            {k.lower(): k for k in KINDS}.get(str(s).strip().lower(), str(s).strip())
            for s in self.strategies
        )

    def validate(self):
        if self.seed is None:
            raise InvalidInputError("a master seed is required")
        if not self.strategies:
            raise InvalidInputError("strategy list is empty")
        for s in self.strategies:
            if s not in KINDS:
                raise InvalidInputError(f"unknown strategy {s!r}")
        if not self.alphas or not self.phis or not self.lambdas or not self.budgets:
            raise InvalidInputError("alpha, phi, lambda and budget lists must be non-empty")
        for name in ("m_bins", "s2_bins", "bid_steps", "epochs"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        for f in self.budgets:
            if f is not None and not 0 < f <= 1:
                raise InvalidInputError(f"budget fraction {f} outside (0, 1]")
        return self

    @classmethod
    def coerce(cls, key, value):
        """Parse a config/CLI string for field ``key``."""
        kind = {f.name: f for f in fields(cls)}[key]
        if value is None or not isinstance(value, str):
            return value
        if key in ("alphas", "phis", "lambdas"):
            return _floats(value)
        if key == "budgets":
            return _budgets(value)
        if key == "strategies":
            return tuple(s.strip() for s in value.split(",") if s.strip())
        if key == "shuffle":
            return value.strip().lower() in ("1", "true", "yes", "on")
        if key in ("seed", "n_jobs"):
            return None if value.strip().lower() in ("", "none") else int(value)
        default = kind.default
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value

    @classmethod
    def from_ini(cls, path, overrides: dict | None = None):
        import configparser

        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise InvalidInputError(f"cannot read config file {path}")
        known = {f.name for f in fields(cls)}
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in known:
                    raise InvalidInputError(f"unknown config key [{section}] {key}")
                values[key] = cls.coerce(key, raw)
        for key, val in (overrides or {}).items():
            if val is not None:
                values[key] = cls.coerce(key, val)
        return cls(**values)

    def to_dict(self):
        d = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "budgets":
                val = [_fraction_label(b) for b in val]
            elif isinstance(val, tuple):
                val = list(val)
            d[f.name] = val
        return d

    def digest(self) -> str:
        echo = self.to_dict()
        echo.pop("artifacts")
        echo.pop("n_jobs")
        return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentContext:
    """Loaded data and fitted artifacts shared by the experiment stages."""

    config: ExperimentConfig
    model: BayesianLogisticRegression
    market: object
    v: float
    validation: AuctionLog
    test: AuctionLog
    m_range: tuple
    s2_range: tuple
    cache: dict = field(default_factory=dict)

    def bidder(self, kind):
        if kind not in self.cache:
            cfg = self.config
            b = make_bidder(
                kind, self.model, self.v, market=self.market,
                m_bins=cfg.m_bins, s2_bins=cfg.s2_bins, m_range=self.m_range, s2_range=self.s2_range,
                table_method=cfg.table_method, samples_per_cell=cfg.samples_per_cell,
                random_state=cfg.seed, n_jobs=cfg.n_jobs, bid_steps=cfg.bid_steps,
            )
            self.cache[kind] = b.fit()
        return self.cache[kind]


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except RiskBidError as exc:
                raise type(exc)(f"[{name}] {exc}") from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("train")
def train_model(config: ExperimentConfig, train: AuctionLog) -> BayesianLogisticRegression:
    return BayesianLogisticRegression(
        dimension=train.dimension, eta=config.eta, epochs=config.epochs, mu0=config.mu0,
        q0=config.q0, map_steps=config.map_steps, shuffle=config.shuffle,
        random_state=config.seed,
    ).fit(train.X, train.clicks)


@_stage("fit-market")
def fit_market(config: ExperimentConfig, train: AuctionLog):
    return market_from_params(config.market, prices=train.prices)


def table_ranges(model, X):
    """Table ranges covering the 0.1-99.9 percentiles of training posteriors."""
    m, s2 = model.posterior_params(X)
    m_lo, m_hi = np.percentile(m, [0.1, 99.9])
    s_lo, s_hi = np.percentile(s2, [0.1, 99.9])
    if m_hi <= m_lo:
        m_lo, m_hi = m_lo - 1e-3, m_hi + 1e-3
    if s_hi <= s_lo:
        s_lo, s_hi = s_lo / 2, s_hi + 1e-3
    return (float(m_lo), float(m_hi)), (float(max(s_lo, 1e-9)), float(s_hi))


def load_logs(config: ExperimentConfig):
    for p in (config.train, config.test):
        if not Path(p).is_file():
            raise InvalidInputError(f"log file not found: {p}")
    train = read_log(config.train)
    test = read_log(config.test, dimension=train.dimension)
    if test.dimension != train.dimension:
        raise InvalidInputError("train and test logs disagree on dimension")
    return train, test


def prepare(config: ExperimentConfig, train: AuctionLog, test: AuctionLog, model=None, market=None):
    config.validate()
    model = model if model is not None else train_model(config, train)
    market = market if market is not None else fit_market(config, train)
    v = click_value_from_training(train, config.value_proportion)
    validation, test_half = test.split_halves()
    m_range, s2_range = table_ranges(model, train.X)
    return ExperimentContext(config, model, market, v, validation, test_half, m_range, s2_range)


def _phi_grid(config, kind, fraction):
    # without a budget the baseline is truth-telling; phi is tuned under budgets
    return (1.0,) if fraction is None else config.phis


@_stage("sweep")
def run_sweeps(ctx: ExperimentContext) -> list[SweepPoint]:
    cfg = ctx.config
    points = []
    base = ctx.validation.total_cost()
    for fraction in cfg.budgets:
        budget = None if fraction is None else float(fraction) * base
        for kind in cfg.strategies:
            points.extend(
                sweep(
                    ctx.bidder(kind), ctx.validation, cfg.alphas, _phi_grid(cfg, kind, fraction),
                    budget=budget, split="validation", budget_fraction=fraction, n_jobs=cfg.n_jobs,
                )
            )
    return points


@_stage("select")
def run_selection(config: ExperimentConfig, points) -> list[dict]:
    groups: dict = {}
    for p in points:
        if p.split == "validation":
            groups.setdefault((p.budget_fraction, p.kind), []).append(p)
    out = []
    for fraction in config.budgets:
        for kind in config.strategies:
            pts = groups.get((_fraction_label(fraction), kind), [])
            if not pts:
                continue
            for lam in config.lambdas:
                best = select_model(pts, lam)
                out.append({
                    "budget_fraction": _fraction_label(fraction),
                    "kind": kind,
                    "lambda": float(lam),
                    "alpha": best.alpha,
                    "phi": best.phi,
                    "validation": best.metrics.to_dict(),
                    "cp_profit": float(cp_profit(best.profit, best.cost, lam)),
                })
    return out


@_stage("test")
def run_tests(ctx: ExperimentContext, selections) -> list[dict]:
    base = ctx.test.total_cost()
    m, s2 = ctx.model.posterior_params(ctx.test.X)
    out = []
    for sel in selections:
        fraction = None if sel["budget_fraction"] is None else Fraction(sel["budget_fraction"])
        budget = None if fraction is None else float(fraction) * base
        b = copy.copy(ctx.bidder(sel["kind"]))
        if b.kind != "LR":
            b.set_params(alpha=sel["alpha"])
        if b.kind == "RMP":
            b.fit()
        bids = sel["phi"] * b.set_params(phi=1.0).bid_posterior(m, s2)
        metrics = replay_bids(bids, ctx.test.clicks, ctx.test.prices, ctx.v, budget)
        out.append({**sel, "test": metrics.to_dict()})
    return out


def build_report(ctx: ExperimentContext, points, results) -> dict:
    cfg = ctx.config
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment_id": cfg.digest(),
        "config": cfg.to_dict() | {"artifacts": None, "n_jobs": None},
        "click_value": ctx.v,
        "market_digest": ctx.market.digest(),
        "table_ranges": {"m": list(ctx.m_range), "s2": list(ctx.s2_range)},
        "points": [p.to_dict() for p in points],
        "selections": results,
    }


def run_experiment(config: ExperimentConfig, train=None, test=None) -> dict:
    """Train, fit the market, sweep on validation, select per lambda, test."""
    config.validate()
    if train is None or test is None:
        train, test = load_logs(config)
    ctx = prepare(config, train, test)
    points = run_sweeps(ctx)
    selections = run_selection(config, points)
    results = run_tests(ctx, selections)
    return build_report(ctx, points, results)


_CSV_FIELDS = ["schema_version", "kind", "split", "budget_fraction", "lambda", "alpha", "phi"] + [
    f.name for f in fields(ReplayMetrics)
]


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for p in report["points"]:
        w.writerow({"schema_version": report["schema_version"], "kind": p["kind"], "split": p["split"],
                    "budget_fraction": p["budget_fraction"], "lambda": "", "alpha": p["alpha"],
                    "phi": p["phi"], **p["metrics"]})
    for s in report["selections"]:
        w.writerow({"schema_version": report["schema_version"], "kind": s["kind"], "split": "test",
                    "budget_fraction": s["budget_fraction"], "lambda": s["lambda"], "alpha": s["alpha"],
                    "phi": s["phi"], **s["test"]})
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_report(report: dict, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jpath, cpath = directory / "report.json", directory / "report.csv"
    jpath.write_text(dumps_json(report), encoding="utf-8")
    cpath.write_text(report_csv(report), encoding="utf-8")
    return jpath, cpath
