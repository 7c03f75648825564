"""Point-forecast and prediction-interval scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InvalidParameter, LengthMismatch, ZeroDenominator, ZeroVariance


def _pair(observed, predicted, min_len: int = 1):
    y = np.asarray(observed, dtype=float).ravel()
    yhat = np.asarray(predicted, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise LengthMismatch(f"{y.size} observed vs {yhat.size} predicted values")
    if y.size < min_len:
        raise EmptyInput(f"need at least {min_len} values")
    return y, yhat


def _bounds(intervals) -> tuple[np.ndarray, np.ndarray]:
    """Accept PredictionInterval objects or (lower, upper) pairs."""
    pairs = [(iv.lower, iv.upper) if hasattr(iv, "lower") else tuple(iv) for iv in intervals]
    if not pairs:
        raise EmptyInput("no intervals")
    arr = np.asarray(pairs, dtype=float)
    return arr[:, 0], arr[:, 1]


def rmse(observed, predicted) -> float:
    y, yhat = _pair(observed, predicted)
    return float(np.sqrt(np.mean((yhat - y) ** 2)))


def mape(observed, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    y, yhat = _pair(observed, predicted)
    if np.any(y == 0):
        raise ZeroDenominator("observed values contain 0")
    return float(np.mean(np.abs((y - yhat) / y)) * 100.0)


def r_squared(observed, predicted) -> float:
    y, yhat = _pair(observed, predicted, min_len=2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("observed values are constant")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def bias(observed, predicted) -> float:
    """Mean of observed minus predicted."""
    y, yhat = _pair(observed, predicted)
    return float(np.mean(y - yhat))


def pinball_loss(observed, predicted, tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise InvalidParameter(f"tau={tau} must lie strictly between 0 and 1")
    y, yhat = _pair(observed, predicted)
    diff = y - yhat
    return float(np.mean(tau * np.maximum(diff, 0.0) + (1.0 - tau) * np.maximum(-diff, 0.0)))


def picp(observed, intervals) -> float:
    """Percent of observations inside their interval, endpoints included."""
    y = np.asarray(observed, dtype=float).ravel()
    lower, upper = _bounds(intervals)
    if y.size != lower.size:
        raise LengthMismatch(f"{y.size} observations vs {lower.size} intervals")
    return float(np.mean((lower <= y) & (y <= upper)) * 100.0)


def pinaw(intervals, target_range: float) -> float:
    """Mean interval width divided by the target range, in percent."""
    if not target_range > 0:
        raise InvalidParameter("target_range must be positive")
    lower, upper = _bounds(intervals)
    return float(np.sum(upper - lower) / (lower.size * target_range) * 100.0)


@dataclass(frozen=True)
class EvaluationReport:
    rmse: float
    mape: float
    r_squared: float
    bias: float
    picp: float | None = None
    pinaw: float | None = None
    confidence_level: float | None = None  # percent, e.g. 90.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"

    def to_table(self) -> str:
        rows = [
            ("Confidence level (%)", self.confidence_level),
            ("RMSE (t/ha)", self.rmse),
            ("MAPE (%)", self.mape),
            ("R-squared", self.r_squared),
            ("Bias (t/ha)", self.bias),
            ("PICP (%)", self.picp),
            ("PINAW (%)", self.pinaw),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {'-' if v is None else f'{v:.4f}'}" for k, v in rows]
        return "\n".join(lines) + "\n"


def evaluate(observed, predicted, intervals: Sequence | None = None,
             target_range: float | None = None, level: float | None = None) -> EvaluationReport:
    kw = {}
    if intervals is not None:
        kw["picp"] = picp(observed, intervals)
        if target_range is not None:
            kw["pinaw"] = pinaw(intervals, target_range)
        kw["confidence_level"] = None if level is None else round(level * 100.0, 10)
    return EvaluationReport(
        rmse=rmse(observed, predicted),
        mape=mape(observed, predicted),
        r_squared=r_squared(observed, predicted),
        bias=bias(observed, predicted),
        **kw,
    )
