"""Predicted-CTR density and its moments.

With a Gaussian logit ``a ~ N(m, s2)`` the CTR ``y = sigmoid(a)`` has a
logit-normal density. Mean and standard deviation have no closed form; they
are computed by quadrature on the logit scale, by Monte Carlo, or read from a
precomputed :class:`MomentTable`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, logit

from .exceptions import InvalidInputError, LogParseError
from .validation import check_finite, check_grid, check_positive

__all__ = [
    "CtrPosterior",
    "MomentTable",
    "pdf",
    "moments_quadrature",
    "moments_mc",
    "build_moment_table",
    "lookup_moments",
]

_TAIL = 12.0  # standard deviations integrated on each side
_GH_NODES = 128


@dataclass(frozen=True)
class CtrPosterior:
    """Gaussian over the logit ``a = w^T x``; the CTR is ``sigmoid(a)``."""

    m: float
    s2: float

    def __post_init__(self):
        check_finite(self.m, "m")
        check_positive(self.s2, "s2")


def pdf(p: CtrPosterior, yhat):
    """Density of the CTR at ``yhat`` (scalar or array, each in (0, 1))."""
    y = np.asarray(yhat, dtype=np.float64)
    if np.any((y <= 0) | (y >= 1)) or not np.all(np.isfinite(y)):
        raise InvalidInputError("yhat must lie strictly inside (0, 1)")
    u = logit(y)
    dens = np.exp(-((u - p.m) ** 2) / (2.0 * p.s2)) / ((y - y * y) * math.sqrt(2.0 * math.pi * p.s2))
    return dens if dens.ndim else float(dens)


def _simpson_nodes(panels: int):
    t = np.linspace(-_TAIL, _TAIL, 2 * panels + 1)
    w = np.ones_like(t)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (t[1] - t[0]) / 3.0
    w *= np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return t, w


def _moments_on_nodes(m, s, t, w):
    # m, s: (k,) ; t, w: (n,) -> (k,), (k,)
    y = expit(m[:, None] + s[:, None] * t[None, :])
    mean = y @ w
    var = ((y - mean[:, None]) ** 2) @ w
    return mean, np.sqrt(np.maximum(var, 0.0))


def moments_quadrature(p: CtrPosterior, panels: int = 10_000) -> tuple[float, float]:
    """Mean and standard deviation of the CTR by composite Simpson quadrature.

    Integrates ``sigmoid(m + s t)`` against the standard normal density over
    ``t`` in [-12, 12] with ``panels`` Simpson panels.
    """
    if int(panels) != panels or panels < 100:
        raise InvalidInputError(f"panels must be an integer >= 100, got {panels}")
    t, w = _simpson_nodes(int(panels))
    mean, std = _moments_on_nodes(
        np.array([p.m]), np.array([math.sqrt(p.s2)]), t, w
    )
    return float(mean[0]), float(std[0])


def _moments_gauss_hermite(m, s2, nodes: int = _GH_NODES, chunk: int = 8192):
    """Vectorised Gauss-Hermite moments over arrays of (m, s2)."""
    t, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    m = np.asarray(m, dtype=np.float64).ravel()
    s = np.sqrt(np.asarray(s2, dtype=np.float64).ravel())
    mean = np.empty_like(m)
    std = np.empty_like(m)
    for lo in range(0, m.size, chunk):
        sl = slice(lo, lo + chunk)
        mean[sl], std[sl] = _moments_on_nodes(m[sl], s[sl], t, w)
    return mean, std


def moments_mc(p: CtrPosterior, n: int = 1000, seed=None) -> tuple[float, float]:
    """Sample mean and (population) std of ``sigmoid(N(m, s2))`` from ``n`` draws."""
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    y = expit(p.m + math.sqrt(p.s2) * rng.standard_normal(int(n)))
    return float(y.mean()), float(y.std())


@dataclass
class MomentTable:
    """Precomputed ``(E[y], std[y])`` over a grid of logit posteriors.

    The m axis is uniform; the s2 axis is uniform in ``sqrt(s2)`` so that the
    std, which grows like ``sqrt(s2)`` near zero, is resolved evenly. Keys are
    rounded to the nearest cell centre; keys outside the grid clamp to the
    edge cells.
    """

    m_grid: tuple[float, float, int]
    s2_grid: tuple[float, float, int]
    mean: np.ndarray
    std: np.ndarray
    samples_per_cell: int = 0
    seed: int | None = None
    method: str = "quadrature"
    meta: dict = field(default_factory=dict)

    MAGIC = b"RBMT1"

    @property
    def shape(self):
        return (self.m_grid[2], self.s2_grid[2])

    def m_centers(self):
        lo, hi, bins = self.m_grid
        return lo + (np.arange(bins) + 0.5) * (hi - lo) / bins

    def s2_centers(self):
        lo, hi, bins = self.s2_grid
        slo, shi = math.sqrt(lo), math.sqrt(hi)
        return (slo + (np.arange(bins) + 0.5) * (shi - slo) / bins) ** 2

    def cell_index(self, m, s2):
        m = np.asarray(m, dtype=np.float64)
        s = np.sqrt(np.maximum(np.asarray(s2, dtype=np.float64), 0.0))
        lo, hi, bins = self.m_grid
        i = np.floor((m - lo) * (bins / (hi - lo)))
        slo, shi = math.sqrt(self.s2_grid[0]), math.sqrt(self.s2_grid[1])
        sbins = self.s2_grid[2]
        j = np.floor((s - slo) * (sbins / (shi - slo)))
        i = np.clip(np.nan_to_num(i, nan=0.0), 0, bins - 1).astype(np.int64)
        j = np.clip(np.nan_to_num(j, nan=0.0), 0, sbins - 1).astype(np.int64)
        return i, j

    def lookup(self, m, s2):
        """Vectorised lookup; returns ``(mean, std)`` arrays shaped like ``m``."""
        i, j = self.cell_index(m, s2)
        return self.mean[i, j], self.std[i, j]

    def header(self) -> dict:
        return {
            "m_grid": list(self.m_grid),
            "s2_grid": list(self.s2_grid),
            "s2_spacing": "sqrt",
            "samples_per_cell": self.samples_per_cell,
            "seed": self.seed,
            "method": self.method,
            **self.meta,
        }

    def save(self, path):
        cells = np.empty(self.shape + (2,), dtype="<f8")
        cells[..., 0] = self.mean
        cells[..., 1] = self.std
        with open(path, "wb") as fh:
            fh.write(self.MAGIC + b"\n")
            fh.write(json.dumps(self.header(), sort_keys=True).encode() + b"\n")
            fh.write(cells.tobytes(order="C"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.readline().rstrip(b"\n") != cls.MAGIC:
                raise LogParseError("not a moment table (bad magic)", 1, path)
            try:
                head = json.loads(fh.readline())
            except ValueError:
                raise LogParseError("bad moment table header", 2, path) from None
            raw = fh.read()
        m_grid = _grid_from(head["m_grid"])
        s2_grid = _grid_from(head["s2_grid"])
        shape = (m_grid[2], s2_grid[2], 2)
        cells = np.frombuffer(raw, dtype="<f8")
        if cells.size != np.prod(shape):
            raise LogParseError("moment table payload size mismatch", None, path)
        cells = cells.reshape(shape).astype(np.float64)
        known = {"m_grid", "s2_grid", "s2_spacing", "samples_per_cell", "seed", "method"}
        return cls(
            m_grid=m_grid,
            s2_grid=s2_grid,
            mean=cells[..., 0].copy(),
            std=cells[..., 1].copy(),
            samples_per_cell=head.get("samples_per_cell", 0),
            seed=head.get("seed"),
            method=head.get("method", "quadrature"),
            meta={k: v for k, v in head.items() if k not in known},
        )


def _grid_from(g):
    return (float(g[0]), float(g[1]), int(g[2]))


def build_moment_table(
    m_grid=(-10.0, 2.0, 1000),
    s2_grid=(1e-3, 5.0, 1000),
    samples_per_cell: int = 1000,
    seed=None,
    method: str = "quadrature",
    n_jobs: int | None = None,
) -> MomentTable:
    """Tabulate CTR moments at every cell centre of the (m, s2) grid.

    ``method="quadrature"`` uses Gauss-Hermite quadrature (``samples_per_cell``
    is ignored). ``method="mc"`` draws ``samples_per_cell`` logits per cell;
    each m-row gets its own stream spawned from ``seed``, so the result does
    not depend on ``n_jobs``.
    """
    m_grid = check_grid(*m_grid, "m")
    s2_grid = check_grid(*s2_grid, "s2")
    if s2_grid[0] <= 0:
        raise InvalidInputError("s2 grid lower bound must be > 0")
    if method not in ("quadrature", "mc"):
        raise InvalidInputError(f"unknown moment method {method!r}")
    if method == "mc" and (int(samples_per_cell) != samples_per_cell or samples_per_cell < 1):
        raise InvalidInputError("samples_per_cell must be a positive integer")

    table = MomentTable(
        m_grid=m_grid,
        s2_grid=s2_grid,
        mean=np.empty((m_grid[2], s2_grid[2])),
        std=np.empty((m_grid[2], s2_grid[2])),
        samples_per_cell=int(samples_per_cell) if method == "mc" else 0,
        seed=seed,
        method=method,
    )
    mc = table.m_centers()
    sc = np.sqrt(table.s2_centers())

    if method == "quadrature":
        def fill(rows):
            mm = np.repeat(mc[rows], sc.size)
            ss = np.tile(sc, len(rows)) ** 2
            mean, std = _moments_gauss_hermite(mm, ss)
            table.mean[rows] = mean.reshape(len(rows), sc.size)
            table.std[rows] = std.reshape(len(rows), sc.size)
    else:
        streams = np.random.SeedSequence(seed).spawn(m_grid[2])
        n = int(samples_per_cell)

        def fill(rows):
            for i in rows:
                rng = np.random.default_rng(streams[i])
                y = expit(mc[i] + sc[:, None] * rng.standard_normal((sc.size, n)))
                table.mean[i] = y.mean(axis=1)
                table.std[i] = y.std(axis=1)

    step = max(1, 65536 // max(sc.size, 1))
    chunks = [list(range(lo, min(lo + step, m_grid[2]))) for lo in range(0, m_grid[2], step)]
    _run_chunks(fill, chunks, n_jobs)
    return table


def lookup_moments(t: MomentTable, m: float, s2: float) -> tuple[float, float]:
    """Nearest-cell ``(E[y], std[y])`` for a single key; clamps out of range."""
    mean, std = t.lookup(m, s2)
    return float(mean), float(std)


def _run_chunks(fn, chunks, n_jobs):
    if n_jobs is None or n_jobs == 1 or len(chunks) == 1:
        for c in chunks:
            fn(c)
        return
    workers = None if n_jobs == -1 else int(n_jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, chunks))
