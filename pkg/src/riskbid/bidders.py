"""Scikit-learn style bidders.

Each bidder wraps a fitted :class:`~riskbid.ctr_model.BayesianLogisticRegression`
and maps feature rows to bid prices with ``predict``. ``fit`` precomputes
whatever lookup tables the strategy needs; when ``X`` is given the table
ranges follow the 0.1-99.9 percentiles of its logit posteriors.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ctr_distribution import build_moment_table
from .exceptions import InvalidInputError
from .strategies import BidGrid, StrategyConfig, bid_lr, bid_var, build_rmp_table
from .validation import check_positive

__all__ = ["LinearBidder", "VaRBidder", "RMPBidder", "make_bidder"]

DEFAULT_M_RANGE = (-10.0, 2.0)
DEFAULT_S2_RANGE = (1e-3, 5.0)


class _Bidder(BaseEstimator):
    kind = ""

    def _check_model(self):
        if self.ctr_model is None:
            raise InvalidInputError("ctr_model is required")
        check_is_fitted(self.ctr_model, "mu_")
        check_positive(self.v, "v")
        check_positive(self.phi, "phi")

    def config(self) -> StrategyConfig:
        return StrategyConfig(self.kind, getattr(self, "alpha", 0.0), self.phi, self.v)

    def predict(self, X):
        """Bid price per feature row."""
        m, s2 = self.ctr_model.posterior_params(X)
        return self.bid_posterior(m, s2)

    def fit_predict(self, X, y=None):
        return self.fit(X, y).predict(X)


class LinearBidder(_Bidder):
    """``phi * v * ctr`` with the model's point CTR."""

    kind = "LR"

    def __init__(self, ctr_model=None, v=1.0, phi=1.0):
        self.ctr_model = ctr_model
        self.v = v
        self.phi = phi

    def fit(self, X=None, y=None):
        self._check_model()
        self.fitted_ = True
        return self

    def bid_posterior(self, m, s2=None):
        check_is_fitted(self, "fitted_")
        ctr = expit(np.asarray(m, dtype=np.float64))
        if self.ctr_model.recalibrate is not None:
            ctr = np.asarray(self.ctr_model.recalibrate(ctr), dtype=np.float64)
        return bid_lr(ctr, self.config())


class _TableBidder(_Bidder):

    def _resolve_ranges(self, X):
        m_range, s2_range = self.m_range, self.s2_range
        if X is not None and (m_range is None or s2_range is None):
            m, s2 = self.ctr_model.posterior_params(X)
            if m_range is None:
                lo, hi = np.percentile(m, [0.1, 99.9])
                m_range = _widen(lo, hi)
            if s2_range is None:
                lo, hi = np.percentile(s2, [0.1, 99.9])
                s2_range = _widen(max(lo, 1e-9), hi, positive=True)
        return (
            tuple(m_range or DEFAULT_M_RANGE),
            tuple(s2_range or DEFAULT_S2_RANGE),
        )

    def _moment_table(self, X):
        m_range, s2_range = self._resolve_ranges(X)
        m_grid = (float(m_range[0]), float(m_range[1]), int(self.m_bins))
        s2_grid = (float(s2_range[0]), float(s2_range[1]), int(self.s2_bins))
        cached = getattr(self, "moment_table_", None)
        if (
            cached is not None
            and (cached.m_grid, cached.s2_grid) == (m_grid, s2_grid)
            and cached.method == self.table_method
            and cached.seed == self.random_state
        ):
            return cached
        return build_moment_table(
            m_grid, s2_grid,
            samples_per_cell=self.samples_per_cell,
            seed=self.random_state,
            method=self.table_method,
            n_jobs=self.n_jobs,
        )


def _widen(lo, hi, positive=False):
    lo, hi = float(lo), float(hi)
    if hi > lo:
        return lo, hi
    pad = max(abs(lo) * 1e-3, 1e-6)
    return (lo / 2 if positive else lo - pad), hi + pad


class VaRBidder(_TableBidder):
    """Bid the value at risk of the utility, ``phi v (E[y] - alpha std[y])``.

    Parameters
    ----------
    ctr_model : BayesianLogisticRegression
        Fitted CTR model providing ``(m, s2)`` per request.
    v : float
        Value of a click.
    alpha : float, default=0.0
        Risk coefficient; positive is risk-averse.
    phi : float, default=1.0
        Bid scaling.
    m_bins, s2_bins : int, default=1000
        Moment table resolution.
    m_range, s2_range : tuple or None
        Table ranges; from the data percentiles when fitting on ``X``,
        otherwise ``(-10, 2)`` and ``(1e-3, 5)``.
    table_method : {"quadrature", "mc"}
        How cell moments are computed.
    samples_per_cell : int, default=1000
        Draws per cell for ``table_method="mc"``.
    random_state : int or None
        Seed for the Monte-Carlo table.
    n_jobs : int or None
        Threads used while building the table.

    ``alpha`` and ``phi`` only enter at prediction time, so they can be
    changed with ``set_params`` without refitting.
    """

    kind = "VaR"

    def __init__(
        self, ctr_model=None, v=1.0, alpha=0.0, phi=1.0, m_bins=1000, s2_bins=1000,
        m_range=None, s2_range=None, table_method="quadrature", samples_per_cell=1000,
        random_state=None, n_jobs=None,
    ):
        self.ctr_model = ctr_model
        self.v = v
        self.alpha = alpha
        self.phi = phi
        self.m_bins = m_bins
        self.s2_bins = s2_bins
        self.m_range = m_range
        self.s2_range = s2_range
        self.table_method = table_method
        self.samples_per_cell = samples_per_cell
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self._check_model()
        self.moment_table_ = self._moment_table(X)
        return self

    def ctr_moments(self, m, s2):
        check_is_fitted(self, "moment_table_")
        return self.moment_table_.lookup(m, s2)

    def bid_posterior(self, m, s2):
        mean, std = self.ctr_moments(m, s2)
        return bid_var(mean, std, self.config())


class RMPBidder(_TableBidder):
    """Bid maximising ``E[R(b)] - alpha std[R(b)]`` via a per-cell lookup table.

    Takes the same table parameters as :class:`VaRBidder` plus the market
    model and the candidate bid grid (``bid_steps`` increments over
    ``[0, bid_max]``, ``bid_max`` defaulting to ``3 v``). ``phi`` scales the
    looked-up bid; ``alpha`` and ``v`` are baked into the table at ``fit``.
    """

    kind = "RMP"

    def __init__(
        self, ctr_model=None, market=None, v=1.0, alpha=0.0, phi=1.0, bid_steps=1000,
        bid_max=None, m_bins=1000, s2_bins=1000, m_range=None, s2_range=None,
        table_method="quadrature", rmp_method="closed", samples_per_cell=1000,
        random_state=None, n_jobs=None,
    ):
        self.ctr_model = ctr_model
        self.market = market
        self.v = v
        self.alpha = alpha
        self.phi = phi
        self.bid_steps = bid_steps
        self.bid_max = bid_max
        self.m_bins = m_bins
        self.s2_bins = s2_bins
        self.m_range = m_range
        self.s2_range = s2_range
        self.table_method = table_method
        self.rmp_method = rmp_method
        self.samples_per_cell = samples_per_cell
        self.random_state = random_state
        self.n_jobs = n_jobs

    def bid_grid(self) -> BidGrid:
        hi = 3.0 * float(self.v) if self.bid_max is None else float(self.bid_max)
        return BidGrid(0.0, hi, int(self.bid_steps))

    def fit(self, X=None, y=None):
        self._check_model()
        if self.market is None:
            raise InvalidInputError("RMPBidder needs a fitted market model")
        self.moment_table_ = self._moment_table(X)
        t = self.moment_table_
        self.rmp_table_ = build_rmp_table(
            t.m_grid, t.s2_grid,
            bid_grid=self.bid_grid(),
            alpha=float(self.alpha),
            v=float(self.v),
            mp=self.market,
            samples=self.samples_per_cell,
            seed=self.random_state,
            method=self.rmp_method,
            moment_table=t,
            n_jobs=self.n_jobs,
        )
        return self

    def bid_posterior(self, m, s2):
        check_is_fitted(self, "rmp_table_")
        if float(self.alpha) != self.rmp_table_.alpha or float(self.v) != self.rmp_table_.v:
            raise InvalidInputError("alpha or v changed since fit; refit the RMP table")
        return float(self.phi) * self.rmp_table_.lookup_bid(m, s2)


def make_bidder(kind: str, ctr_model, v, market=None, **params):
    """Construct the bidder for a strategy kind name (LR, VaR or RMP)."""
    kind = StrategyConfig(kind, v=v).kind
    if kind == "LR":
        params.pop("alpha", None)
        keep = {k: params[k] for k in ("phi",) if k in params}
        return LinearBidder(ctr_model=ctr_model, v=v, **keep)
    if kind == "VaR":
        params.pop("bid_steps", None)
        params.pop("bid_max", None)
        params.pop("rmp_method", None)
        return VaRBidder(ctr_model=ctr_model, v=v, **params)
    return RMPBidder(ctr_model=ctr_model, market=market, v=v, **params)
