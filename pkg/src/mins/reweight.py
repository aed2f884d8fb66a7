"""Score binning, the high-score reweighting distribution and its bias/variance diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

DEFAULT_BINS = 20
DEFAULT_LAMBDA = 0.003
TAU_FLOOR = 1e-6


@dataclass
class ReweightConfig:
    enabled: bool = True
    bins: int = DEFAULT_BINS
    lam: float = DEFAULT_LAMBDA
    tau: Optional[float] = None  # None: adaptive

    def __post_init__(self):
        if self.bins < 1 or self.lam <= 0 or (self.tau is not None and self.tau <= 0):
            raise ValueError("invalid reweighting config")


def training_weights(data, config: Optional["ReweightConfig"] = None) -> np.ndarray:
    """Per-record sampling weights; all ones when reweighting is disabled."""
    config = config or ReweightConfig()
    y = _scores(data)
    if not config.enabled:
        return np.ones(len(y))
    scheme = build_scheme(y, config.bins, config.lam, config.tau)
    return importance_weights(scheme, y)


def _scores(data) -> np.ndarray:
    y = data.y if hasattr(data, "y") else data
    return np.asarray(y, dtype=np.float64).reshape(-1)


def bin_scores(data, bins: int = DEFAULT_BINS):
    """Equal-width bins over ``[min y, max y]``; the top edge is closed.

    Returns ``(edges, counts)`` with ``len(edges) == bins + 1``. When all
    scores coincide every record lands in the top bin.
    """
    if bins < 1:
        raise ValueError(f"need at least one bin, got {bins}")
    y = _scores(data)
    if y.size == 0:
        raise ValueError("cannot bin an empty dataset")
    lo, hi = float(y.min()), float(y.max())
    if hi > lo:
        edges = np.linspace(lo, hi, bins + 1)
    else:
        edges = hi + 0.5 - np.arange(bins, -1, -1, dtype=np.float64)
    counts = np.bincount(assign_bins(y, edges), minlength=bins)
    return edges, counts


def assign_bins(y, edges: np.ndarray) -> np.ndarray:
    """Bin index per score; raises if a score lies outside ``[edges[0], edges[-1]]``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    span = edges[-1] - edges[0]
    tol = 1e-12 * max(1.0, abs(span), abs(edges[-1]))
    if ((y < edges[0] - tol) | (y > edges[-1] + tol)).any():
        bad = y[(y < edges[0] - tol) | (y > edges[-1] + tol)][0]
        raise ValueError(f"score {bad} lies outside all bins [{edges[0]}, {edges[-1]}]")
    idx = np.searchsorted(edges, y, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def compute_bin_weights(counts, centers, y_star: float, lam: float = DEFAULT_LAMBDA, tau: float = 1.0) -> np.ndarray:
    """Per-bin training probabilities.

    ``p(b) ~ d_b / (d_b + lam) * exp(-|center_b - y_star| / tau)`` with
    ``d_b = N_b / sum(N)``. Empty bins get zero mass. Evaluated in log space so
    tiny ``tau`` cannot underflow every bin at once.
    """
    counts = np.asarray(counts, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if lam <= 0 or tau <= 0:
        raise ValueError("lambda and tau must be positive")
    total = counts.sum()
    if total <= 0:
        raise ValueError("all bin counts are zero")
    dens = counts / total
    nonempty = dens > 0
    logf = np.full(len(counts), -np.inf)
    logf[nonempty] = (np.log(dens[nonempty]) - np.log(dens[nonempty] + lam)
                      - np.abs(centers[nonempty] - y_star) / tau)
    logf -= logf[nonempty].max()
    p = np.where(nonempty, np.exp(logf), 0.0)
    return p / p.sum()


def adaptive_tau(data) -> float:
    """Gap between the best and the 90th-percentile score, floored at ``TAU_FLOOR``."""
    y = _scores(data)
    if y.size == 0:
        raise ValueError("cannot choose a temperature for an empty dataset")
    return max(float(y.max() - np.percentile(y, 90)), TAU_FLOOR)


@dataclass
class ReweightingScheme:
    edges: np.ndarray
    counts: np.ndarray
    lam: float
    tau: float
    y_star: float
    probs: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def data_probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def optimal_probs(self) -> np.ndarray:
        """All mass on the top bin (noise-free optimum)."""
        p = np.zeros(len(self.counts))
        p[-1] = 1.0
        return p

    def bin_index(self, y) -> np.ndarray:
        return assign_bins(y, self.edges)

    def to_json(self) -> dict:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist(), "lambda": self.lam,
                "tau": self.tau, "y_star": self.y_star, "probs": self.probs.tolist()}


def build_scheme(data, bins: int = DEFAULT_BINS, lam: float = DEFAULT_LAMBDA,
                 tau: Optional[float] = None) -> ReweightingScheme:
    """Bin ``data`` and compute the reweighted bin distribution (adaptive ``tau`` if None)."""
    y = _scores(data)
    edges, counts = bin_scores(y, bins)
    tau = adaptive_tau(y) if tau is None else float(tau)
    centers = 0.5 * (edges[:-1] + edges[1:])
    y_star = float(y.max())
    probs = compute_bin_weights(counts, centers, y_star, lam, tau)
    return ReweightingScheme(edges, counts, lam, tau, y_star, probs)


def importance_weights(scheme: ReweightingScheme, data) -> np.ndarray:
    """``w_i = p(bin_i) / p_data(bin_i)``; constant within a bin, mean 1 on the binned data."""
    y = _scores(data)
    idx = scheme.bin_index(y)
    pdata = scheme.data_probs
    if (pdata[idx] == 0).any():
        raise ValueError("record falls in a bin the scheme saw as empty")
    return scheme.probs[idx] / pdata[idx]


def renyi_d2(p, q) -> float:
    """Exponentiated Renyi divergence of order 2, ``sum q (p/q)^2``, over bins."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share their support")
    if ((p > 0) & (q <= 0)).any():
        raise ValueError("p puts mass where q has none")
    m = q > 0
    return float(np.sum(p[m] ** 2 / q[m]))


@dataclass
class BoundReport:
    variance_term: float
    divergence_term: float
    bias_term: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def bound_terms(p, p_star, p_data, counts, dataset_size: int) -> BoundReport:
    """The three unweighted terms of the gradient error bound for training under ``p``.

    variance: ``E_{b~p}[1/N_b]``; divergence: ``d2(p || p_data) / |D|``;
    bias: squared total-variation distance between ``p_star`` and ``p``.
    """
    p, p_star, p_data, counts = (np.asarray(a, dtype=np.float64) for a in (p, p_star, p_data, counts))
    if not (p.shape == p_star.shape == p_data.shape == counts.shape):
        raise ValueError("all distributions must be over the same bins")
    if ((p > 0) & (counts <= 0)).any():
        raise ValueError("p is positive on an empty bin")
    m = p > 0
    variance = float(np.sum(p[m] / counts[m]))
    divergence = renyi_d2(p, p_data) / dataset_size
    bias = float(0.5 * np.abs(p_star - p).sum()) ** 2
    return BoundReport(variance, divergence, bias)
