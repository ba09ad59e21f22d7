"""Second-price auction log replay and synthetic log generation.

A log is a time-ordered sequence of ``(features, click, market_price)``
records. Replaying it against a bid vector wins record ``i`` iff
``bid_i > market_price_i`` and pays the market price. With a budget, the
first win that would push cost above the budget is voided and ends the
replay.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .exceptions import InsufficientDataError, InvalidInputError, LogParseError
from .validation import as_feature_matrix, check_positive, rows_to_csr

__all__ = [
    "LogRecord",
    "AuctionLog",
    "ReplayMetrics",
    "SyntheticSpec",
    "SyntheticData",
    "read_log",
    "write_log",
    "convert_ipinyou",
    "replay",
    "replay_bids",
    "generate_synthetic",
    "click_value_from_training",
]


@dataclass(frozen=True)
class LogRecord:
    features: tuple[int, ...]
    click: int
    market_price: float

    def __post_init__(self):
        if self.click not in (0, 1):
            raise InvalidInputError(f"click must be 0 or 1, got {self.click}")
        if not self.market_price >= 0:
            raise InvalidInputError(f"market price must be >= 0, got {self.market_price}")


@dataclass
class AuctionLog:
    """Column-oriented auction log: CSR features, click and price arrays."""

    X: sp.csr_matrix
    clicks: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        self.X = as_feature_matrix(self.X)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        self.prices = np.asarray(self.prices, dtype=np.float64)
        n = self.X.shape[0]
        if self.clicks.shape != (n,) or self.prices.shape != (n,):
            raise InvalidInputError("features, clicks and prices must have equal length")
        if not np.all((self.clicks == 0) | (self.clicks == 1)):
            raise InvalidInputError("clicks must be 0 or 1")
        if np.any(~np.isfinite(self.prices)) or np.any(self.prices < 0):
            raise InvalidInputError("market prices must be finite and >= 0")

    @classmethod
    def from_records(cls, records: Sequence[LogRecord], dimension: int | None = None):
        X = rows_to_csr([r.features for r in records], dimension)
        return cls(
            X,
            np.array([r.click for r in records], dtype=np.int8),
            np.array([r.market_price for r in records], dtype=np.float64),
        )

    def __len__(self):
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def records(self) -> Iterator[LogRecord]:
        for i in range(len(self)):
            lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
            yield LogRecord(
                tuple(int(j) for j in self.X.indices[lo:hi]),
                int(self.clicks[i]),
                float(self.prices[i]),
            )

    def __getitem__(self, sl: slice) -> "AuctionLog":
        if not isinstance(sl, slice):
            raise TypeError("AuctionLog supports slicing only")
        return AuctionLog(self.X[sl], self.clicks[sl], self.prices[sl])

    def split_halves(self) -> tuple["AuctionLog", "AuctionLog"]:
        """Early half (validation) and late half (test)."""
        mid = len(self) // 2
        return self[:mid], self[mid:]

    def total_cost(self) -> float:
        return float(np.sum(self.prices))


# -- file I/O ----------------------------------------------------------------

def read_log(path, dimension: int | None = None) -> AuctionLog:
    """Parse ``click<TAB>price<TAB>f1 f2 ...`` lines; ``#dim=N`` sets the width."""
    indptr = [0]
    indices: list[int] = []
    clicks: list[int] = []
    prices: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#dim=") and dimension is None:
                    try:
                        dimension = int(line[5:])
                    except ValueError:
                        raise LogParseError("bad #dim header", lineno, path) from None
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise LogParseError("expected click<TAB>price<TAB>features", lineno, path)
            if parts[0] not in ("0", "1"):
                raise LogParseError(f"click must be 0 or 1, got {parts[0]!r}", lineno, path)
            try:
                price = float(parts[1])
            except ValueError:
                raise LogParseError(f"bad market price {parts[1]!r}", lineno, path) from None
            if not (price >= 0 and math.isfinite(price)):
                raise LogParseError(f"market price must be >= 0, got {parts[1]}", lineno, path)
            feats = parts[2].split() if len(parts) == 3 else []
            try:
                ids = sorted(int(f) for f in feats)
            except ValueError:
                raise LogParseError("feature ids must be integers", lineno, path) from None
            if ids and ids[0] < 0:
                raise LogParseError("feature ids must be non-negative", lineno, path)
            if len(set(ids)) != len(ids):
                raise LogParseError("duplicate feature id", lineno, path)
            if dimension is not None and ids and ids[-1] >= dimension:
                raise LogParseError(f"feature id {ids[-1]} >= dim {dimension}", lineno, path)
            indices.extend(ids)
            indptr.append(len(indices))
            clicks.append(int(parts[0]))
            prices.append(price)
    idx = np.asarray(indices, dtype=np.int64)
    if dimension is None:
        dimension = int(idx.max()) + 1 if idx.size else 0
    X = sp.csr_matrix(
        (np.ones(idx.size), idx, np.asarray(indptr, dtype=np.int64)),
        shape=(len(clicks), dimension),
    )
    return AuctionLog(X, clicks, prices)


def write_log(path, log: AuctionLog):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#dim={log.dimension}\n")
        for r in log.records():
            fh.write(f"{r.click}\t{r.market_price:.17g}\t{' '.join(map(str, r.features))}\n")


def convert_ipinyou(
    sources: Sequence,
    destinations: Sequence,
    feature_columns: Sequence[str],
    click_column: str = "click",
    price_column: str = "payprice",
    delimiter: str = "\t",
    feature_map: dict | None = None,
) -> dict:
    """Normalise iPinYou-style tabular logs into the replay log format.

    Every source must have a header row naming its columns. Feature ids are
    assigned to ``column=value`` strings in order of first appearance across
    the sources, so converting train and test together yields one shared
    feature space. Returns the (possibly extended) feature map.
    """
    if len(sources) != len(destinations):
        raise InvalidInputError("need one destination per source")
    if not feature_columns:
        raise InvalidInputError("at least one feature column is required")
    fmap = dict(feature_map or {})
    converted = []
    for src in sources:
        rows = []
        with open(src, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise LogParseError("empty input", 1, src) from None
            try:
                ci = header.index(click_column)
                pi = header.index(price_column)
                fi = [header.index(c) for c in feature_columns]
            except ValueError as exc:
                raise LogParseError(f"missing column: {exc}", 1, src) from None
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    click, price = row[ci], float(row[pi])
                    vals = [row[j] for j in fi]
                except (IndexError, ValueError):
                    raise LogParseError("malformed row", lineno, src) from None
                if click not in ("0", "1"):
                    raise LogParseError(f"click must be 0 or 1, got {click!r}", lineno, src)
                if price < 0:
                    raise LogParseError("negative market price", lineno, src)
                ids = []
                for col, val in zip(feature_columns, vals):
                    key = f"{col}={val}"
                    if key not in fmap:
                        fmap[key] = len(fmap)
                    ids.append(fmap[key])
                rows.append(LogRecord(tuple(sorted(set(ids))), int(click), price))
        converted.append(rows)
    dim = len(fmap)
    for rows, dst in zip(converted, destinations):
        write_log(dst, AuctionLog.from_records(rows, dim) if rows else _empty_log(dim))
    return fmap


def _empty_log(dim):
    return AuctionLog(sp.csr_matrix((0, dim)), np.zeros(0), np.zeros(0))


# -- replay ------------------------------------------------------------------

@dataclass
class ReplayMetrics:
    bids: int
    wins: int
    impressions: int
    clicks: int
    cost: float
    revenue: float
    profit: float
    roi: float | None
    cpm: float | None
    ctr: float | None
    ecpc: float | None
    win_rate: float | None
    records_consumed: int
    budget: float | None = None
    v: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_counts(cls, bids, wins, clicks, cost, v, records_consumed, budget=None):
        revenue = clicks * v
        profit = revenue - cost
        return cls(
            bids=int(bids),
            wins=int(wins),
            impressions=int(wins),
            clicks=int(clicks),
            cost=float(cost),
            revenue=float(revenue),
            profit=float(profit),
            roi=profit / cost if cost > 0 else None,
            cpm=1000.0 * cost / wins if wins else None,
            ctr=clicks / wins if wins else None,
            ecpc=cost / clicks if clicks else None,
            win_rate=wins / bids if bids else None,
            records_consumed=int(records_consumed),
            budget=None if budget is None else float(budget),
            v=float(v),
        )


def replay_bids(bids, clicks, prices, v, budget=None) -> ReplayMetrics:
    """Replay precomputed per-record bids against logged outcomes.

    A record counts as a bid when its bid is positive. Losses cost nothing.
    """
    v = check_positive(v, "v")
    if budget is not None:
        budget = check_positive(budget, "budget")
    bids = np.asarray(bids, dtype=np.float64)
    clicks = np.asarray(clicks)
    prices = np.asarray(prices, dtype=np.float64)
    if not (bids.shape == clicks.shape == prices.shape) or bids.ndim != 1:
        raise InvalidInputError("bids, clicks and prices must be equal-length vectors")

    win = bids > prices
    # sequential accumulation, identical to a running `cost += price` loop
    running = np.cumsum(np.where(win, prices, 0.0))
    end = bids.size
    if budget is not None:
        over = np.flatnonzero(win & (running > budget))
        if over.size:
            end = int(over[0])
    cost = float(running[end - 1]) if end else 0.0
    w = win[:end]
    return ReplayMetrics.from_counts(
        bids=np.count_nonzero(bids[:end] > 0),
        wins=np.count_nonzero(w),
        clicks=int(np.sum(clicks[:end][w])),
        cost=cost,
        v=v,
        records_consumed=end,
        budget=budget,
    )


def replay(log: AuctionLog, bidder, v, budget=None) -> ReplayMetrics:
    """Replay ``log`` with a fitted bidder (anything with ``predict(X)``)."""
    bids = bidder.predict(log.X) if hasattr(bidder, "predict") else bidder
    return replay_bids(bids, log.clicks, log.prices, v, budget)


def click_value_from_training(log: AuctionLog, proportion: float = 1.0) -> float:
    """``proportion`` times the log's eCPC (total market price per click)."""
    proportion = check_positive(proportion, "proportion")
    n_clicks = int(np.sum(log.clicks))
    if n_clicks == 0:
        raise InsufficientDataError("training log has no clicks")
    return proportion * log.total_cost() / n_clicks


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic log generator.

    Each record has a bias feature (id 0) plus one value from each of
    ``n_fields`` categorical fields. Values within a field are drawn with
    Zipf-like popularity ``p_k ~ (k + 1) ** -zipf_exponent``, so tail values
    are rarely seen and keep wide posteriors. True field weights are
    ``N(0, weight_std^2)``; clicks are ``Bernoulli(sigmoid(w^T x))``; log
    prices are ``price_mu + price_coupling * (w^T x - bias) +
    price_sigma * noise``.
    """

    n_records: int = 10_000
    n_fields: int = 8
    field_cardinality: int = 1000
    zipf_exponent: float = 1.1
    bias: float = -4.0
    weight_std: float = 0.5
    price_mu: float = 4.0
    price_sigma: float = 0.5
    price_coupling: float = 0.0

    def __post_init__(self):
        for name in ("n_records", "n_fields", "field_cardinality"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise InvalidInputError(f"{name} must be a positive integer")
        check_positive(self.zipf_exponent, "zipf_exponent", allow_zero=True)
        check_positive(self.weight_std, "weight_std", allow_zero=True)
        check_positive(self.price_sigma, "price_sigma")

    @property
    def dimension(self) -> int:
        return 1 + self.n_fields * self.field_cardinality


@dataclass
class SyntheticData:
    log: AuctionLog
    true_weights: np.ndarray
    true_ctr: np.ndarray
    spec: SyntheticSpec
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def generate_synthetic(spec: SyntheticSpec, seed=None) -> SyntheticData:
    rng = np.random.default_rng(seed)
    K, F, n = spec.field_cardinality, spec.n_fields, spec.n_records
    w = np.empty(spec.dimension)
    w[0] = spec.bias
    w[1:] = spec.weight_std * rng.standard_normal(F * K)

    pop = (np.arange(K) + 1.0) ** -spec.zipf_exponent
    pop /= pop.sum()
    values = rng.choice(K, size=(n, F), p=pop)
    cols = 1 + values + K * np.arange(F)[None, :]
    indices = np.column_stack([np.zeros(n, dtype=np.int64), cols]).ravel()
    indptr = np.arange(0, (F + 1) * n + 1, F + 1, dtype=np.int64)
    X = sp.csr_matrix((np.ones(indices.size), indices, indptr), shape=(n, spec.dimension))

    logit_true = np.asarray(X @ w).ravel()
    ctr = expit(logit_true)
    clicks = (rng.random(n) < ctr).astype(np.int8)
    log_price = (
        spec.price_mu
        + spec.price_coupling * (logit_true - spec.bias)
        + spec.price_sigma * rng.standard_normal(n)
    )
    prices = np.exp(log_price)
    return SyntheticData(AuctionLog(X, clicks, prices), w, ctr, spec, seed)
