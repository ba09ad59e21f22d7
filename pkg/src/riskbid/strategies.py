"""Bidding functions and the profit algebra behind them.

Three strategies are supported:

* ``LR``  -- linear bid ``phi * v * ctr``.
* ``VaR`` -- bid the Cantelli lower bound of the utility,
  ``phi * v * (E[y] - alpha * std[y])``, clamped at zero.
* ``RMP`` -- bid the ``b`` maximising ``E[R(b)] - alpha * std[R(b)]`` where
  ``R(b)`` is the profit of a second-price auction won iff ``b > z``.

Profit moments use the truncated market-price moments ``z_k(b)``::

    E[R(b)]   = v E[y] z_0 - z_1
    E[R(b)^2] = v^2 E[y^2] z_0 - 2 v E[y] z_1 + z_2
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .ctr_distribution import CtrPosterior, MomentTable, _grid_from, _run_chunks, build_moment_table, moments_quadrature
from .exceptions import InvalidInputError, LogParseError
from .validation import check_finite, check_grid, check_positive

__all__ = [
    "StrategyConfig",
    "BidGrid",
    "ProfitMoments",
    "RmpBidTable",
    "bid_lr",
    "bid_var",
    "profit_moments",
    "rmp_objective",
    "bid_rmp",
    "build_rmp_table",
    "negative_profit_prob",
    "efficient_frontier",
    "tangent_bid",
]

KINDS = ("LR", "VaR", "RMP")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "LR"
    alpha: float = 0.0
    phi: float = 1.0
    v: float = 1.0

    def __post_init__(self):
        kind = {k.lower(): k for k in KINDS}.get(str(self.kind).lower())
        if kind is None:
            raise InvalidInputError(f"unknown strategy kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        check_finite(self.alpha, "alpha")
        check_positive(self.phi, "phi")
        check_positive(self.v, "v")


@dataclass(frozen=True)
class BidGrid:
    """Evenly spaced candidate bids ``lo, lo + step, ..., hi``."""

    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        check_grid(self.lo, self.hi, self.steps, "bid")
        if self.lo < 0:
            raise InvalidInputError("bid grid must be non-negative")

    @classmethod
    def default(cls, v: float, steps: int = 1000):
        """``[0, 3v]`` in ``steps`` increments."""
        return cls(0.0, 3.0 * check_positive(v, "v"), steps)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.steps

    def values(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.steps + 1)


@dataclass(frozen=True)
class ProfitMoments:
    expectation: float
    variance: float
    b: float
    v: float
    ctr_mean: float
    ctr_second_moment: float
    z0: float
    z1: float
    z2: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


# -- simple bids -------------------------------------------------------------

def bid_lr(ctr, cfg: StrategyConfig):
    """``phi * v * ctr``."""
    out = cfg.phi * cfg.v * np.asarray(ctr, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def bid_var(mean, std, cfg: StrategyConfig):
    """``max(0, phi * v * (mean - alpha * std))``; zero means no bid."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise InvalidInputError("std must be >= 0")
    out = np.maximum(0.0, cfg.phi * cfg.v * (mean - cfg.alpha * std))
    return float(out) if out.ndim == 0 else out


# -- profit moments ----------------------------------------------------------

def _check_ctr_moments(ctr_mean, ctr_second_moment):
    ctr_mean = np.asarray(ctr_mean, dtype=np.float64)
    ctr_second_moment = np.asarray(ctr_second_moment, dtype=np.float64)
    if np.any(ctr_second_moment < ctr_mean ** 2 * (1 - 1e-12) - 1e-15):
        raise InvalidInputError("E[y^2] must be >= E[y]^2")
    return ctr_mean, ctr_second_moment


def _profit_arrays(v, ctr_mean, ctr_second_moment, z0, z1, z2):
    """Broadcasting core; returns ``(expectation, variance)``."""
    expectation = v * ctr_mean * z0 - z1
    second = v * v * ctr_second_moment * z0 - 2.0 * v * ctr_mean * z1 + z2
    variance = second - expectation ** 2
    return expectation, np.maximum(variance, 0.0)


def profit_moments(b, v, ctr_mean, ctr_second_moment, mp) -> ProfitMoments:
    """Closed-form mean and variance of the profit of bidding ``b``."""
    b = check_positive(b, "b", allow_zero=True)
    v = check_positive(v, "v")
    ctr_mean, ctr_second_moment = _check_ctr_moments(ctr_mean, ctr_second_moment)
    z0, z1, z2 = mp.partial_moments(b)
    e, var = _profit_arrays(v, float(ctr_mean), float(ctr_second_moment), z0, z1, z2)
    return ProfitMoments(
        expectation=float(e), variance=float(var), b=b, v=v,
        ctr_mean=float(ctr_mean), ctr_second_moment=float(ctr_second_moment),
        z0=float(z0), z1=float(z1), z2=float(z2),
    )


def rmp_objective(b, alpha, v, ctr_mean, ctr_second_moment, mp):
    """``E[R(b)] - alpha * std[R(b)]`` (``b`` may be an array)."""
    alpha = check_finite(alpha, "alpha")
    v = check_positive(v, "v")
    ctr_mean, ctr_second_moment = _check_ctr_moments(ctr_mean, ctr_second_moment)
    bb = np.asarray(b, dtype=np.float64)
    if np.any(bb < 0):
        raise InvalidInputError("b must be >= 0")
    z0, z1, z2 = mp.partial_moments(bb)
    e, var = _profit_arrays(v, ctr_mean, ctr_second_moment, np.asarray(z0), np.asarray(z1), np.asarray(z2))
    out = e - alpha * np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def _select(bids, objective):
    """Argmax over the last axis; ties go to the lower bid; ``<= 0`` -> 0.

    ``bids`` must be increasing.
    """
    idx = np.argmax(objective, axis=-1)
    best = np.take_along_axis(objective, idx[..., None], axis=-1)[..., 0]
    chosen = bids[idx]
    return np.where(best > 0, chosen, 0.0)


def _profit_moments_mc(bids, v, yhat, z):
    """Sample moments of ``R(b) = (v y - z) 1[z < b]`` for every bid, sharing
    the same draws across bids."""
    order = np.argsort(z, kind="stable")
    zs = z[order]
    r = v * yhat[order] - zs
    c1 = np.concatenate([[0.0], np.cumsum(r)])
    c2 = np.concatenate([[0.0], np.cumsum(r * r)])
    k = np.searchsorted(zs, bids, side="left")
    n = z.size
    e = c1[k] / n
    var = np.maximum(c2[k] / n - e * e, 0.0)
    return e, var


def bid_rmp(
    ctr_mean,
    ctr_std,
    cfg: StrategyConfig,
    mp,
    bid_grid: BidGrid | None = None,
    method: str = "closed",
    posterior: CtrPosterior | None = None,
    samples: int = 1000,
    seed=None,
):
    """Bid maximising the value-at-risk of profit over an enumerated grid.

    The optimum is multiplied by ``cfg.phi``. With ``method="mc"`` the
    profit moments are estimated from ``samples`` joint draws of CTR (from
    ``posterior``) and market price shared by all candidate bids.
    """
    grid = bid_grid or BidGrid.default(cfg.v)
    bids = grid.values()
    if method == "closed":
        mean = float(ctr_mean)
        second = float(ctr_std) ** 2 + mean * mean
        obj = rmp_objective(bids, cfg.alpha, cfg.v, mean, second, mp)
    elif method == "mc":
        if posterior is None:
            raise InvalidInputError("method='mc' needs the CTR posterior")
        rng = np.random.default_rng(seed)
        yhat = expit(posterior.m + math.sqrt(posterior.s2) * rng.standard_normal(int(samples)))
        z = mp.sample(int(samples), rng)
        e, var = _profit_moments_mc(bids, cfg.v, yhat, z)
        obj = e - cfg.alpha * np.sqrt(var)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    return cfg.phi * float(_select(bids, np.asarray(obj)))


# -- frontier ----------------------------------------------------------------

def efficient_frontier(ctr_mean, ctr_std, mp, v, bid_grid: BidGrid) -> np.ndarray:
    """Rows ``(std[R(b)], E[R(b)], b)`` for every grid bid, ordered by ``b``."""
    bids = bid_grid.values()
    mean = float(ctr_mean)
    second = float(ctr_std) ** 2 + mean * mean
    _check_ctr_moments(mean, second)
    z0, z1, z2 = mp.partial_moments(bids)
    e, var = _profit_arrays(check_positive(v, "v"), mean, second, z0, z1, z2)
    return np.column_stack([np.sqrt(var), e, bids])


def tangent_bid(frontier: np.ndarray, alpha: float) -> float:
    """Bid at the frontier point touched by a line of slope ``alpha``.

    Uses the same tie and non-positive rules as :func:`bid_rmp`, so both
    return the same (unscaled) bid on the same grid.
    """
    std, e, bids = frontier[:, 0], frontier[:, 1], frontier[:, 2]
    return float(_select(bids, e - float(alpha) * std))


# -- negative profit ---------------------------------------------------------

def negative_profit_prob(
    posterior: CtrPosterior, mp, v, b, n: int = 10_000, seed=None, given_win: bool = False
) -> float:
    """Monte-Carlo estimate of ``P(v y < z < b)``: winning at a loss.

    With ``given_win=True`` the estimate is conditioned on winning
    (``z < b``) instead.
    """
    b = check_positive(b, "b")
    v = check_positive(v, "v")
    if int(n) != n or n < 1:
        raise InvalidInputError("n must be a positive integer")
    rng = np.random.default_rng(seed)
    yhat = expit(posterior.m + math.sqrt(posterior.s2) * rng.standard_normal(int(n)))
    z = mp.sample(int(n), rng)
    win = z < b
    loss = win & (v * yhat < z)
    if given_win:
        return float(loss.sum() / win.sum()) if win.any() else 0.0
    return float(loss.mean())


# -- lookup table ------------------------------------------------------------

@dataclass
class RmpBidTable(MomentTable):
    """Optimal (unscaled) RMP bid per (m, s2) cell.

    Reuses :class:`MomentTable`'s grid and rounding; ``bids`` replaces the
    moment arrays as payload.
    """

    bids: np.ndarray = None
    bid_grid: BidGrid = None
    alpha: float = 0.0
    v: float = 1.0
    market_digest: str = ""

    MAGIC = b"RBBT1"

    def lookup_bid(self, m, s2):
        i, j = self.cell_index(m, s2)
        return self.bids[i, j]

    def header(self) -> dict:
        head = super().header()
        head.update(
            bid_grid=[self.bid_grid.lo, self.bid_grid.hi, self.bid_grid.steps],
            alpha=self.alpha,
            v=self.v,
            market_digest=self.market_digest,
        )
        return head

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.MAGIC + b"\n")
            fh.write(json.dumps(self.header(), sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.bids, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.readline().rstrip(b"\n") != cls.MAGIC:
                raise LogParseError("not an RMP bid table (bad magic)", 1, path)
            try:
                head = json.loads(fh.readline())
            except ValueError:
                raise LogParseError("bad RMP table header", 2, path) from None
            raw = fh.read()
        m_grid, s2_grid = _grid_from(head["m_grid"]), _grid_from(head["s2_grid"])
        bids = np.frombuffer(raw, dtype="<f8")
        if bids.size != m_grid[2] * s2_grid[2]:
            raise LogParseError("RMP table payload size mismatch", None, path)
        lo, hi, steps = head["bid_grid"]
        return cls(
            m_grid=m_grid,
            s2_grid=s2_grid,
            mean=None,
            std=None,
            samples_per_cell=head.get("samples_per_cell", 0),
            seed=head.get("seed"),
            method=head.get("method", "closed"),
            bids=bids.reshape(m_grid[2], s2_grid[2]).astype(np.float64),
            bid_grid=BidGrid(float(lo), float(hi), int(steps)),
            alpha=float(head["alpha"]),
            v=float(head["v"]),
            market_digest=head.get("market_digest", ""),
        )


def build_rmp_table(
    m_grid=(-10.0, 2.0, 1000),
    s2_grid=(1e-3, 5.0, 1000),
    bid_grid: BidGrid | None = None,
    alpha: float = 0.0,
    v: float = 1.0,
    mp=None,
    samples: int = 1000,
    seed=None,
    method: str = "closed",
    moment_table: MomentTable | None = None,
    n_jobs: int | None = None,
) -> RmpBidTable:
    """Tabulate the RMP-optimal bid for every (m, s2) cell centre.

    ``method="closed"`` combines quadrature CTR moments (or those of a
    matching ``moment_table``) with the closed-form profit moments.
    ``method="mc"`` draws ``samples`` CTR/market-price pairs per cell and
    evaluates every candidate bid on those shared draws; streams are spawned
    per m-row from ``seed``.
    """
    if mp is None:
        raise InvalidInputError("a market model is required")
    alpha = check_finite(alpha, "alpha")
    v = check_positive(v, "v")
    grid = bid_grid or BidGrid.default(v)
    bids = grid.values()
    m_grid = check_grid(*m_grid, "m")
    s2_grid = check_grid(*s2_grid, "s2")
    if s2_grid[0] <= 0:
        raise InvalidInputError("s2 grid lower bound must be > 0")

    table = RmpBidTable(
        m_grid=m_grid, s2_grid=s2_grid, mean=None, std=None,
        samples_per_cell=int(samples) if method == "mc" else 0,
        seed=seed, method=method,
        bids=np.empty((m_grid[2], s2_grid[2])),
        bid_grid=grid, alpha=alpha, v=v, market_digest=mp.digest(),
    )

    if method == "closed":
        if moment_table is None or (moment_table.m_grid, moment_table.s2_grid) != (m_grid, s2_grid):
            moment_table = build_moment_table(m_grid, s2_grid, n_jobs=n_jobs)
        z0, z1, z2 = mp.partial_moments(bids)
        mean_all = moment_table.mean
        second_all = moment_table.std ** 2 + mean_all ** 2

        def fill(rows):
            mean = mean_all[rows].reshape(-1, 1)
            second = second_all[rows].reshape(-1, 1)
            e, var = _profit_arrays(v, mean, second, z0, z1, z2)
            best = _select(bids, e - alpha * np.sqrt(var))
            table.bids[rows] = best.reshape(len(rows), -1)
    elif method == "mc":
        streams = np.random.SeedSequence(seed).spawn(m_grid[2])
        mc = table.m_centers()
        sc = np.sqrt(table.s2_centers())
        n = int(samples)

        def fill(rows):
            for i in rows:
                rng = np.random.default_rng(streams[i])
                for j, s in enumerate(sc):
                    yhat = expit(mc[i] + s * rng.standard_normal(n))
                    z = mp.sample(n, rng)
                    e, var = _profit_moments_mc(bids, v, yhat, z)
                    table.bids[i, j] = _select(bids, e - alpha * np.sqrt(var))
    else:
        raise InvalidInputError(f"unknown method {method!r}")

    step = max(1, 16384 // (s2_grid[2] * max(1, bids.size // 64)))
    chunks = [list(range(lo, min(lo + step, m_grid[2]))) for lo in range(0, m_grid[2], step)]
    _run_chunks(fill, chunks, n_jobs)
    return table


def ctr_moments(posterior: CtrPosterior, panels: int = 10_000):
    """``(E[y], E[y^2])`` of a posterior by quadrature."""
    mean, std = moments_quadrature(posterior, panels)
    return mean, std * std + mean * mean
