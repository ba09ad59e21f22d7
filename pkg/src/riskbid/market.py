"""Market-price distributions: log-normal fit and empirical histogram.

Both models expose the truncated moments ``z_k(b) = E[z^k ; z < b]`` for
``k`` in {0, 1, 2}; ``z_0`` is the probability of winning with bid ``b``.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientDataError, InvalidInputError, LogParseError
from .validation import check_positive, check_prices

__all__ = [
    "LogNormalMarket",
    "EmpiricalMarket",
    "fit_lognormal",
    "fit_empirical",
    "partial_moment",
    "load_market",
]


def _check_k(k):
    if k not in (0, 1, 2):
        raise InvalidInputError(f"partial moment order must be 0, 1 or 2, got {k}")


def _check_bids(b):
    b = np.asarray(b, dtype=np.float64)
    if np.any(np.isnan(b)) or np.any(b < 0):
        raise InvalidInputError("bid must be >= 0")
    return b


def _as_output(x, like):
    return float(x) if np.ndim(like) == 0 else x


class _MarketBase(BaseEstimator):
    kind = ""

    def win_probability(self, b):
        return self.partial_moment(b, 0)

    def partial_moments(self, b):
        """``(z_0, z_1, z_2)`` at bid(s) ``b``."""
        return tuple(self.partial_moment(b, k) for k in (0, 1, 2))

    def digest(self) -> str:
        """Stable content hash of the fitted parameters."""
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.dumps())


class LogNormalMarket(_MarketBase):
    """Log-normal market price, ``ln z ~ N(mu, sigma^2)``.

    Parameters may be given directly (``mu``/``sigma``) or estimated by
    :meth:`fit` as the mean and population std of ``ln z``.
    """

    kind = "lognormal"

    def __init__(self, mu=None, sigma=None):
        self.mu = mu
        self.sigma = sigma
        if mu is not None and sigma is not None:
            self._set(mu, sigma, 0)

    def _set(self, mu, sigma, n):
        if not math.isfinite(float(mu)):
            raise InvalidInputError("mu must be finite")
        if not float(sigma) > 0:
            raise InsufficientDataError("log-price standard deviation must be > 0")
        self.mu_ = float(mu)
        self.sigma_ = float(sigma)
        self.n_samples_ = int(n)

    def fit(self, prices, y=None):
        z = check_prices(prices)
        z = z[z > 0]
        if z.size < 2:
            raise InsufficientDataError("need at least 2 positive prices")
        logz = np.log(z)
        self._set(logz.mean(), logz.std(), z.size)
        return self

    def partial_moment(self, b, k):
        _check_k(k)
        check_is_fitted(self, "mu_")
        bb = _check_bids(b)
        full = math.exp(k * self.mu_ + 0.5 * k * k * self.sigma_ ** 2)
        with np.errstate(divide="ignore"):
            arg = (np.log(bb) - self.mu_ - k * self.sigma_ ** 2) / self.sigma_
        out = full * ndtr(arg)
        return _as_output(out, b)

    def pdf(self, z):
        check_is_fitted(self, "mu_")
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros_like(z)
        pos = z > 0
        lz = np.log(z[pos])
        out[pos] = np.exp(-0.5 * ((lz - self.mu_) / self.sigma_) ** 2) / (
            z[pos] * self.sigma_ * math.sqrt(2 * math.pi)
        )
        return _as_output(out, z)

    def mean(self):
        check_is_fitted(self, "mu_")
        return math.exp(self.mu_ + 0.5 * self.sigma_ ** 2)

    def sample(self, n, seed=None):
        check_is_fitted(self, "mu_")
        if int(n) != n or n < 1:
            raise InvalidInputError("n must be a positive integer")
        rng = np.random.default_rng(seed)
        return np.exp(self.mu_ + self.sigma_ * rng.standard_normal(int(n)))

    def dumps(self) -> str:
        check_is_fitted(self, "mu_")
        return f"lognormal\t{self.mu_:.17g}\t{self.sigma_:.17g}\t{self.n_samples_}\n"


class EmpiricalMarket(_MarketBase):
    """Histogram of observed prices with unit-width integer bins on [0, z_max].

    Bin ``j`` collects prices in ``[j, j + 1)`` and keeps the mean of ``z`` and
    ``z^2`` inside it, so truncated moments at integer bids are exact for the
    sample (and integer-valued logs behave as point masses).
    """

    kind = "empirical"

    def fit(self, prices, y=None):
        z = check_prices(prices)
        if z.size == 0:
            raise InsufficientDataError("need at least one price")
        bins = np.floor(z).astype(np.int64)
        size = int(bins.max()) + 1
        counts = np.bincount(bins, minlength=size).astype(np.float64)
        sum_z = np.bincount(bins, weights=z, minlength=size)
        sum_z2 = np.bincount(bins, weights=z * z, minlength=size)
        occupied = counts > 0
        self.masses_ = counts / z.size
        self.mean_z_ = np.where(occupied, sum_z / np.where(occupied, counts, 1), np.arange(size))
        self.mean_z2_ = np.where(occupied, sum_z2 / np.where(occupied, counts, 1), np.arange(size) ** 2.0)
        self.z_max_ = float(z.max())
        self.n_samples_ = int(z.size)
        self._prefix()
        return self

    def _prefix(self):
        self._cum = [
            np.concatenate([[0.0], np.cumsum(self.masses_ * mom)])
            for mom in (np.ones_like(self.masses_), self.mean_z_, self.mean_z2_)
        ]
        self._cdf_bins = np.cumsum(self.masses_)

    def partial_moment(self, b, k):
        _check_k(k)
        check_is_fitted(self, "masses_")
        bb = _check_bids(b)
        # bins whose representative price is strictly below b
        n_below = np.searchsorted(self.mean_z_, bb, side="left")
        # mean_z_ is increasing bin by bin, so a prefix sum suffices
        out = self._cum[k][np.minimum(n_below, self.masses_.size)]
        return _as_output(out, b)

    def pdf(self, z):
        check_is_fitted(self, "masses_")
        z = np.asarray(z, dtype=np.float64)
        j = np.floor(z).astype(np.int64)
        ok = (j >= 0) & (j < self.masses_.size)
        out = np.where(ok, self.masses_[np.clip(j, 0, self.masses_.size - 1)], 0.0)
        return _as_output(out, z)

    def mean(self):
        check_is_fitted(self, "masses_")
        return float(self._cum[1][-1])

    def sample(self, n, seed=None):
        check_is_fitted(self, "masses_")
        if int(n) != n or n < 1:
            raise InvalidInputError("n must be a positive integer")
        rng = np.random.default_rng(seed)
        u = rng.random(int(n))
        j = np.searchsorted(self._cdf_bins, u, side="right")
        j = np.minimum(j, self.masses_.size - 1)
        return self.mean_z_[j]

    def dumps(self) -> str:
        check_is_fitted(self, "masses_")
        lines = [f"empirical\t{self.z_max_:.17g}\t{self.n_samples_}"]
        for j in np.flatnonzero(self.masses_):
            lines.append(
                f"{j}\t{self.masses_[j]:.17g}\t{self.mean_z_[j]:.17g}\t{self.mean_z2_[j]:.17g}"
            )
        return "\n".join(lines) + "\n"


def fit_lognormal(prices) -> LogNormalMarket:
    return LogNormalMarket().fit(prices)


def fit_empirical(prices) -> EmpiricalMarket:
    return EmpiricalMarket().fit(prices)


def partial_moment(mp, b, k):
    """``E[z^k ; z < b]`` under market model ``mp``."""
    return mp.partial_moment(b, k)


def load_market(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogParseError("empty market model file", 1, path)
    head = lines[0].split("\t")
    try:
        if head[0] == "lognormal":
            mp = LogNormalMarket()
            mp._set(float(head[1]), float(head[2]), int(head[3]))
            return mp
        if head[0] == "empirical":
            z_max, n = float(head[1]), int(head[2])
            size = int(math.floor(z_max)) + 1
            mp = EmpiricalMarket()
            mp.masses_ = np.zeros(size)
            mp.mean_z_ = np.arange(size, dtype=np.float64)
            mp.mean_z2_ = mp.mean_z_ ** 2
            for lineno, line in enumerate(lines[1:], start=2):
                try:
                    j_s, mass, mz, mz2 = line.split("\t")
                    j = int(j_s)
                    mp.masses_[j] = float(mass)
                    mp.mean_z_[j] = float(mz)
                    mp.mean_z2_[j] = float(mz2)
                except (ValueError, IndexError):
                    raise LogParseError("expected bin<TAB>mass<TAB>mean<TAB>mean_sq", lineno, path) from None
            mp.z_max_ = z_max
            mp.n_samples_ = n
            mp._prefix()
            return mp
    except (ValueError, IndexError):
        raise LogParseError("bad market model header", 1, path) from None
    raise LogParseError(f"unknown market model kind {head[0]!r}", 1, path)


def market_from_params(kind: str, prices=None, mu=None, sigma=None):
    """Fit (or construct) a market model of the requested kind."""
    if kind == "lognormal":
        if prices is None:
            return LogNormalMarket(mu=mu, sigma=check_positive(sigma, "sigma"))
        return fit_lognormal(prices)
    if kind == "empirical":
        if prices is None:
            raise InsufficientDataError("empirical market model needs prices")
        return fit_empirical(prices)
    raise InvalidInputError(f"unknown market model kind {kind!r}")
