"""Online Bayesian logistic regression with a diagonal Gaussian weight posterior.

Each weight ``w_i`` carries a Gaussian posterior ``N(mu_i, 1/q_i)``. Training
streams over the records and, per record, takes SGD steps towards the
per-instance MAP (prior centred on the pre-record means) and then adds the
logistic curvature ``p(1-p) x_i^2`` to the precision of every active feature.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .ctr_distribution import CtrPosterior
from .exceptions import InvalidInputError, LogParseError
from .validation import as_feature_matrix, check_binary_labels, check_finite, check_positive

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


__all__ = ["BayesianLogisticRegression", "TrainConfig", "CtrPosterior"]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the streaming trainer."""

    eta: float = 0.01
    epochs: int = 1
    shuffle_seed: int | None = None

    def __post_init__(self):
        check_positive(self.eta, "eta")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidInputError(f"epochs must be a positive integer, got {self.epochs}")


@njit
def _sigmoid(a):
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


@njit
def _stream_updates(indptr, indices, data, y, order, mu, q, eta, map_steps):
    old = np.empty(indices.shape[0], dtype=np.float64)
    for r in order:
        lo = indptr[r]
        hi = indptr[r + 1]
        for j in range(lo, hi):
            old[j] = mu[indices[j]]
        p = 0.5
        for _ in range(map_steps):
            a = 0.0
            for j in range(lo, hi):
                a += mu[indices[j]] * data[j]
            p = _sigmoid(a)
            resid = y[r] - p
            for j in range(lo, hi):
                i = indices[j]
                mu[i] += eta * (resid * data[j] - q[i] * (mu[i] - old[j]))
        # curvature at the iterate the last gradient step was taken from
        curv = p * (1.0 - p)
        for j in range(lo, hi):
            i = indices[j]
            q[i] += curv * data[j] * data[j]


class BayesianLogisticRegression(ClassifierMixin, BaseEstimator):
    """Logistic regression whose weights carry independent Gaussian posteriors.

    Parameters
    ----------
    dimension : int or None, default=None
        Size of the feature space. Inferred from ``X`` at the first fit when
        None.
    eta : float, default=0.01
        Constant SGD learning rate.
    epochs : int, default=1
        Passes over the training records.
    mu0 : float, default=0.0
        Prior mean for features that were never updated.
    q0 : float, default=1.0
        Prior precision for features that were never updated.
    map_steps : int, default=1
        Gradient steps towards the per-record MAP. One step is plain online
        SGD; larger values approach the full per-instance MAP solve.
    shuffle : bool, default=False
        Permute record order every epoch using ``random_state``.
    random_state : int or None, default=None
        Seed for shuffling.
    recalibrate : callable or None, default=None
        Post-hoc map applied to point CTR predictions (e.g. to undo negative
        down-sampling). Identity when None. Does not affect
        :meth:`posterior_params`.

    Attributes
    ----------
    mu_ : ndarray of shape (dimension,)
        Posterior means.
    q_ : ndarray of shape (dimension,)
        Posterior precisions; never below their starting values.
    """

    def __init__(
        self,
        dimension=None,
        eta=0.01,
        epochs=1,
        mu0=0.0,
        q0=1.0,
        map_steps=1,
        shuffle=False,
        random_state=None,
        recalibrate=None,
    ):
        self.dimension = dimension
        self.eta = eta
        self.epochs = epochs
        self.mu0 = mu0
        self.q0 = q0
        self.map_steps = map_steps
        self.shuffle = shuffle
        self.random_state = random_state
        self.recalibrate = recalibrate

    # -- construction -----------------------------------------------------

    @classmethod
    def from_point_estimate(cls, point_weights, q0=1.0, **params):
        """Warm-start the posterior means from a point-estimate LR model.

        All precisions are set to ``q0``.
        """
        check_positive(q0, "q0")
        w = np.asarray(point_weights, dtype=np.float64).ravel()
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("point weights must be finite")
        params.setdefault("mu0", 0.0)
        est = cls(dimension=w.size, q0=q0, **params)
        est._init_state(w.size)
        est.mu_[:] = w
        return est

    def _check_hyperparams(self):
        check_positive(self.eta, "eta")
        check_positive(self.q0, "q0")
        check_finite(self.mu0, "mu0")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidInputError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.map_steps) != self.map_steps or self.map_steps < 1:
            raise InvalidInputError(f"map_steps must be a positive integer, got {self.map_steps}")

    def _init_state(self, dimension):
        self.mu_ = np.full(dimension, float(self.mu0))
        self.q_ = np.full(dimension, float(self.q0))
        self.n_features_in_ = dimension
        self.classes_ = np.array([0, 1])

    # -- training -----------------------------------------------------------

    def fit(self, X, y):
        """Reset the posterior to the prior and stream over ``(X, y)``."""
        self._check_hyperparams()
        X = as_feature_matrix(X, self.dimension)
        if X.shape[0] == 0:
            raise InvalidInputError("cannot train on an empty dataset")
        self._init_state(X.shape[1])
        return self._train(X, y, self.epochs)

    def partial_fit(self, X, y):
        """One pass over ``(X, y)`` starting from the current posterior."""
        self._check_hyperparams()
        if not hasattr(self, "mu_"):
            X = as_feature_matrix(X, self.dimension)
            self._init_state(X.shape[1])
        else:
            X = as_feature_matrix(X, self.n_features_in_)
        return self._train(X, y, 1)

    def update(self, x, y):
        """Apply a single record; ``x`` is a collection of active feature ids."""
        check_is_fitted(self, "mu_")
        return self.partial_fit([list(x)], [y])

    def _train(self, X, y, epochs):
        y = check_binary_labels(y, X.shape[0])
        rng = np.random.default_rng(self.random_state) if self.shuffle else None
        indptr = X.indptr.astype(np.int64)
        indices = X.indices.astype(np.int64)
        data = X.data.astype(np.float64)
        for _ in range(epochs):
            if rng is not None:
                order = rng.permutation(X.shape[0]).astype(np.int64)
            else:
                order = np.arange(X.shape[0], dtype=np.int64)
            _stream_updates(
                indptr, indices, data, y, order, self.mu_, self.q_,
                float(self.eta), int(self.map_steps),
            )
        return self

    # -- prediction ---------------------------------------------------------

    def _features(self, X):
        check_is_fitted(self, "mu_")
        return as_feature_matrix(X, self.n_features_in_)

    def decision_function(self, X):
        """Posterior-mean logit ``sum_i mu_i x_i`` per row."""
        return np.asarray(self._features(X) @ self.mu_).ravel()

    def predict_point(self, X):
        """Point CTR ``sigmoid(mu^T x)`` per row, after recalibration."""
        p = expit(self.decision_function(X))
        if self.recalibrate is not None:
            p = np.asarray(self.recalibrate(p), dtype=np.float64)
        return p

    def predict_proba(self, X):
        p = self.predict_point(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_point(X) > 0.5).astype(int)

    def posterior_params(self, X):
        """Mean and variance of the logit ``w^T x`` per row.

        Returns
        -------
        m, s2 : ndarray of shape (n_rows,)
            ``m = sum mu_i x_i`` and ``s2 = sum x_i^2 / q_i``.
        """
        X = self._features(X)
        m = np.asarray(X @ self.mu_).ravel()
        s2 = np.asarray(X.multiply(X) @ (1.0 / self.q_)).ravel()
        return m, s2

    def posterior(self, x) -> CtrPosterior:
        """:class:`CtrPosterior` for one request given as feature ids."""
        m, s2 = self.posterior_params([list(x)])
        return CtrPosterior(float(m[0]), float(s2[0]))

    # -- persistence --------------------------------------------------------

    def save_checkpoint(self, path):
        """Write ``dimension mu0 q0`` then ``id mu q`` for touched features."""
        check_is_fitted(self, "mu_")
        touched = np.flatnonzero((self.mu_ != self.mu0) | (self.q_ != self.q0))
        lines = [f"{self.n_features_in_}\t{_fmt(self.mu0)}\t{_fmt(self.q0)}"]
        lines.extend(
            f"{i}\t{_fmt(self.mu_[i])}\t{_fmt(self.q_[i])}" for i in touched
        )
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load_checkpoint(cls, path, **params):
        with open(path, encoding="ascii") as fh:
            header = fh.readline()
            try:
                dim_s, mu0_s, q0_s = header.rstrip("\n").split("\t")
                dimension, mu0, q0 = int(dim_s), float(mu0_s), float(q0_s)
            except ValueError:
                raise LogParseError("bad checkpoint header", 1, path) from None
            est = cls(dimension=dimension, mu0=mu0, q0=q0, **params)
            est._init_state(dimension)
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    i_s, mu_s, q_s = line.rstrip("\n").split("\t")
                    i, mu, q = int(i_s), float(mu_s), float(q_s)
                except ValueError:
                    raise LogParseError("expected id<TAB>mu<TAB>q", lineno, path) from None
                if not 0 <= i < dimension:
                    raise LogParseError(f"feature id {i} out of range", lineno, path)
                if not q > 0:
                    raise LogParseError(f"non-positive precision {q}", lineno, path)
                est.mu_[i] = mu
                est.q_[i] = q
        return est


def _fmt(x) -> str:
    return f"{float(x):.17g}"
