"""Conditional CDFs, quantiles and prediction intervals from forest weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidParameter
from .forest import Forest, forest_weights, forest_weights_matrix


@dataclass(frozen=True)
class ConditionalCDF:
    support: np.ndarray  # strictly increasing target values
    cum_weights: np.ndarray  # F(support[k]), right-continuous

    def __call__(self, y: float) -> float:
        k = np.searchsorted(self.support, y, side="right")
        return 0.0 if k == 0 else float(self.cum_weights[k - 1])


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    nominal_level: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise InvalidParameter("interval lower bound exceeds upper bound")

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _exact_prefix_sums(values: np.ndarray) -> np.ndarray:
    """Correctly rounded running sums (each entry equals math.fsum of its prefix)."""
    out = np.empty(len(values))
    partials: list[float] = []
    for k, x in enumerate(values.tolist()):
        # Shewchuk's non-overlapping partials, as in math.fsum
        i = 0
        for p in partials:
            if abs(x) < abs(p):
                x, p = p, x
            hi = x + p
            lo = p - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
        out[k] = math.fsum(partials)
    return out


def cdf_from_weights(weights, targets) -> ConditionalCDF:
    """Step CDF sum_n w_n 1{Y_n <= y}; tied targets share one support point."""
    weights = np.asarray(weights, dtype=float)
    targets = np.asarray(targets, dtype=float)
    support, inverse = np.unique(targets, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    w_sorted = weights[order]
    nz = np.flatnonzero(w_sorted)
    cum = np.zeros(len(support))
    if nz.size:
        prefix = _exact_prefix_sums(w_sorted[nz])
        # last nonzero contribution at or before each support point
        last_pos = np.searchsorted(inverse[order][nz], np.arange(len(support)), side="right") - 1
        has = last_pos >= 0
        cum[has] = prefix[last_pos[has]]
    return ConditionalCDF(support, cum)


def conditional_cdf(forest: Forest, x) -> ConditionalCDF:
    return cdf_from_weights(forest_weights(forest, x), forest.train_targets)


def conditional_cdfs(forest: Forest, X) -> list[ConditionalCDF]:
    W = forest_weights_matrix(forest, X)
    return [cdf_from_weights(w, forest.train_targets) for w in W]


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise InvalidParameter(f"tau={tau} must lie strictly between 0 and 1")


def quantile(cdf: ConditionalCDF, tau: float) -> float:
    """Smallest support value whose cumulative weight reaches ``tau``."""
    _check_tau(tau)
    k = int(np.searchsorted(cdf.cum_weights, tau, side="left"))
    return float(cdf.support[min(k, len(cdf.support) - 1)])


def quantiles(cdf: ConditionalCDF, taus: Sequence[float]) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or np.any(taus <= 0) or np.any(taus >= 1):
        raise InvalidParameter("every tau must lie strictly between 0 and 1")
    if np.any(np.diff(taus) <= 0):
        raise InvalidParameter("taus must be strictly increasing")
    k = np.searchsorted(cdf.cum_weights, taus, side="left")
    return cdf.support[np.minimum(k, len(cdf.support) - 1)]


def predict_median(forest: Forest, x) -> float:
    """Median forecast. With an exact 50/50 split the lower point is returned."""
    return quantile(conditional_cdf(forest, x), 0.5)


def interval_from_cdf(cdf: ConditionalCDF, level: float) -> PredictionInterval:
    if not 0.0 < level < 1.0:
        raise InvalidParameter(f"level={level} must lie strictly between 0 and 1")
    alpha = 1.0 - level
    return PredictionInterval(quantile(cdf, alpha / 2), quantile(cdf, 1.0 - alpha / 2), level)


def prediction_interval(forest: Forest, x, level: float = 0.9) -> PredictionInterval:
    return interval_from_cdf(conditional_cdf(forest, x), level)


def default_taus(size: int = 99) -> np.ndarray:
    """Uniform levels 1/(size+1), ..., size/(size+1); 0.01..0.99 for size=99."""
    return np.arange(1, size + 1) / (size + 1)


def quantile_curve(forest: Forest, x, taus: Sequence[float] | None = None) -> list[tuple[float, float]]:
    taus = default_taus() if taus is None else np.asarray(taus, dtype=float)
    q = quantiles(conditional_cdf(forest, x), taus)
    return list(zip(taus.tolist(), q.tolist()))
