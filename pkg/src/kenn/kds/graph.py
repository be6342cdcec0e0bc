"""PACF lag graph forecaster with the previous-day seasonal mean-matching rule."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..stats import pacf
from ..timeseries import Series
from .base import KDSBase


def delta(lag: int, period: int = 48) -> float:
    """Distance penalty: 1 within one period, else ``1 / (2 log2 lag)``."""
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    if lag <= period:
        return 1.0
    return 1.0 / (2.0 * np.log2(lag))


@dataclass(frozen=True)
class KnowledgeGraph:
    connected_lags: Tuple[int, ...]
    pacf_values: Tuple[float, ...]
    raw_weights: Tuple[float, ...]
    norm_weights: Tuple[float, ...]
    threshold: float = 0.2
    period: int = 48
    fallback: bool = False

    @property
    def max_lag(self) -> int:
        return max(self.connected_lags)

    def weights(self) -> dict:
        return dict(zip(self.connected_lags, self.norm_weights))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lag", "pacf", "delta", "raw_weight", "norm_weight"])
        for lag, p, raw, nw in zip(
            self.connected_lags, self.pacf_values, self.raw_weights, self.norm_weights
        ):
            writer.writerow([lag, repr(p), repr(delta(lag, self.period)), repr(raw), repr(nw)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, threshold: float = 0.2, period: int = 48, fallback: bool = False):
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            tuple(int(r["lag"]) for r in rows),
            tuple(float(r["pacf"]) for r in rows),
            tuple(float(r["raw_weight"]) for r in rows),
            tuple(float(r["norm_weight"]) for r in rows),
            threshold,
            period,
            fallback,
        )


def graph_from_pacf(
    values, threshold: float = 0.2, period: int = 48, abs_threshold: bool = False
) -> KnowledgeGraph:
    """Connect every lag whose PACF exceeds ``threshold`` (``values[k-1]`` is lag k)."""
    values = np.asarray(values, dtype=np.float64)
    lags = np.arange(1, values.size + 1)
    score = np.abs(values) if abs_threshold else values
    keep = score > threshold
    if not keep.any():
        # the forecaster must always forecast: previous step and previous cycle
        fb = sorted({1, period})
        w = 1.0 / len(fb)
        p = tuple(float(values[k - 1]) if k <= values.size else float("nan") for k in fb)
        return KnowledgeGraph(tuple(fb), p, (w,) * len(fb), (w,) * len(fb), threshold, period, True)
    sel = lags[keep]
    p = values[keep]
    raw = p * np.array([delta(int(k), period) for k in sel])
    if abs_threshold:
        raw = np.abs(raw)
    norm = raw / raw.sum()
    return KnowledgeGraph(
        tuple(int(k) for k in sel),
        tuple(float(v) for v in p),
        tuple(float(v) for v in raw),
        tuple(float(v) for v in norm),
        threshold,
        period,
    )


def build_graph(
    train: Series,
    threshold: float = 0.2,
    max_lag: Optional[int] = None,
    abs_threshold: bool = False,
) -> KnowledgeGraph:
    if max_lag is None:
        max_lag = 2 * train.period
    max_lag = min(max_lag, len(train) - 1)
    profile = pacf(train, max_lag)
    return graph_from_pacf(profile.values, threshold, train.period, abs_threshold)


def kds_forecast(g: KnowledgeGraph, history, h: int = 1) -> np.ndarray:
    """Weighted sum over connected lags; multi-step forecasts feed back recursively."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.size < g.max_lag:
        raise ValueError(f"history of length {hist.size} shorter than max lag {g.max_lag}")
    lags = np.asarray(g.connected_lags)
    weights = np.asarray(g.norm_weights)
    buf = np.concatenate([hist[-g.max_lag :], np.empty(h)])
    end = g.max_lag
    for i in range(h):
        buf[end + i] = weights @ buf[end + i - lags]
    return buf[end:].copy()


@dataclass(frozen=True)
class SeasonalRuleConfig:
    k_sigma: float = 0.7
    block_hours: int = 2
    enabled: bool = True
    sigma_mode: str = "block"
    blend: float = 1.0

    def __post_init__(self):
        if self.k_sigma <= 0:
            raise ValueError("k_sigma must be > 0")
        if self.block_hours < 1:
            raise ValueError("block_hours must be >= 1")
        if self.sigma_mode not in ("block", "global"):
            raise ValueError("sigma_mode must be 'block' or 'global'")
        if not 0.0 <= self.blend <= 1.0:
            raise ValueError("blend must lie in [0, 1]")

    def block_len(self, period: int) -> int:
        return max(1, int(round(self.block_hours * period / 24)))


@dataclass(frozen=True)
class BlockStats:
    """Spread of each clock-time block's daily mean over the training days."""

    block_len: int
    period: int
    sigma: np.ndarray

    @classmethod
    def from_train(cls, train: Series, cfg: SeasonalRuleConfig) -> "BlockStats":
        P = train.period
        L = cfg.block_len(P)
        n_blocks = -(-P // L)
        if cfg.sigma_mode == "global":
            return cls(L, P, np.full(n_blocks, float(np.std(train.values))))
        t = train.start + np.arange(len(train))
        day = t // P
        block = (t % P) // L
        sigma = np.zeros(n_blocks)
        for b in range(n_blocks):
            m = block == b
            days = np.unique(day[m])
            # only days where the block is fully observed
            means = [
                train.values[m & (day == d)].mean()
                for d in days
                if np.count_nonzero(m & (day == d)) == min(L, P - b * L)
            ]
            sigma[b] = float(np.std(means)) if len(means) > 1 else 0.0
        return cls(L, P, sigma)


def apply_seasonal_rule(
    pred,
    history,
    cfg: SeasonalRuleConfig,
    stats: BlockStats,
    target_time_index: int,
) -> Tuple[np.ndarray, bool]:
    """Pull each forecast to the previous day's same-block mean when close enough.

    ``history`` ends at absolute index ``target_time_index - 1``. Returns the
    adjusted forecasts and whether every step could be checked.
    """
    out = np.array(pred, dtype=np.float64)
    hist = np.asarray(history, dtype=np.float64)
    if not cfg.enabled:
        return out, True
    P, L = stats.period, stats.block_len
    first_abs = target_time_index - hist.size
    complete = True
    for i in range(out.size):
        t = target_time_index + i
        day0 = t - t % P
        b = (t % P) // L
        lo = day0 - P + b * L
        hi = min(lo + L, day0)
        if lo < first_abs or hi > target_time_index:
            complete = False
            continue
        m = hist[lo - first_abs : hi - first_abs].mean()
        if abs(out[i] - m) <= cfg.k_sigma * stats.sigma[b]:
            out[i] = cfg.blend * m + (1.0 - cfg.blend) * out[i]
    return out, complete


class GraphKDS(KDSBase):
    """Knowledge-driven forecaster: PACF lag graph plus the seasonal rule.

    Parameters
    ----------
    threshold : float
        PACF cut-off for connecting a lag.
    max_lag : int or None
        Largest lag considered; ``None`` means two seasonal periods.
    abs_threshold : bool
        Compare ``|pacf|`` instead of the signed value.
    rule : SeasonalRuleConfig or None
        Mean-matching rule settings; ``None`` uses the defaults.
    """

    kind = "graph"

    def __init__(self, threshold=0.2, max_lag=None, abs_threshold=False, rule=None):
        self.threshold = threshold
        self.max_lag = max_lag
        self.abs_threshold = abs_threshold
        self.rule = rule

    def fit(self, train: Series, y=None):
        self.rule_ = self.rule if self.rule is not None else SeasonalRuleConfig()
        self.graph_ = build_graph(train, self.threshold, self.max_lag, self.abs_threshold)
        self.stats_ = BlockStats.from_train(train, self.rule_)
        self.period_ = train.period
        return self

    @property
    def min_history_(self) -> int:
        need = self.graph_.max_lag
        if self.rule_.enabled:
            need = max(need, self.period_)
        return need

    def forecast_checked(self, history, h=1, origin=None):
        self._check_fitted()
        pred = kds_forecast(self.graph_, history, h)
        if not self.rule_.enabled:
            return pred, True
        if origin is None:
            return pred, False
        return apply_seasonal_rule(pred, history, self.rule_, self.stats_, origin)
