"""Degraded, redundant and statistical stand-ins for the knowledge system."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..timeseries import Series, SeriesError
from .base import KDSBase


def naive_last(history, h: int = 1) -> np.ndarray:
    hist = np.asarray(history, dtype=np.float64)
    if hist.size == 0:
        raise ValueError("naive_last needs a non-empty history")
    return np.full(h, hist[-1])


def zero_kds(h: int = 1) -> np.ndarray:
    if h < 1:
        raise ValueError("h must be >= 1")
    return np.zeros(h)


def noisy_wrap(inner_preds, noise_sd: float, seed) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise; ``noise_sd == 0`` returns the input unchanged."""
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    preds = np.array(inner_preds, dtype=np.float64)
    if noise_sd == 0:
        return preds
    rng = np.random.default_rng(seed)
    return preds + rng.normal(0.0, noise_sd, size=preds.shape)


class NaiveLastKDS(KDSBase):
    kind = "naive_last"

    def forecast_checked(self, history, h=1, origin=None):
        self._check_fitted()
        return naive_last(history, h), True


class ZeroKDS(KDSBase):
    """Always forecasts zero. Fused as zero in scaled space, so KENN with this
    KDS is exactly the data-only network."""

    kind = "zero"
    scaled_space = True

    def forecast_checked(self, history, h=1, origin=None):
        self._check_fitted()
        return zero_kds(h), True


class NoisyKDS(KDSBase):
    """Wrap another KDS and corrupt its forecasts with seeded Gaussian noise.

    The noise stream for a forecast is keyed on ``(seed, origin)`` so walk-forward
    runs are reproducible regardless of call order.
    """

    kind = "noisy"

    def __init__(self, inner=None, noise_sd=1.0, seed=0):
        self.inner = inner
        self.noise_sd = noise_sd
        self.seed = seed

    def fit(self, train: Series, y=None):
        if self.inner is None or isinstance(self.inner, NoisyKDS):
            raise ValueError("NoisyKDS needs a non-noisy inner KDS")
        from sklearn.base import clone

        self.inner_ = clone(self.inner).fit(train)
        self.period_ = train.period
        return self

    @property
    def min_history_(self) -> int:
        return self.inner_.min_history_

    def forecast_checked(self, history, h=1, origin=None):
        self._check_fitted()
        pred, ok = self.inner_.forecast_checked(history, h, origin)
        key = len(history) if origin is None else origin
        return noisy_wrap(pred, self.noise_sd, [int(self.seed), int(key)]), ok


@dataclass(frozen=True)
class SeasonalARModel:
    """AR(p) with intercept on the (optionally) seasonally differenced series."""

    coef: np.ndarray
    intercept: float
    p: int
    period: int
    seasonal_diff: bool
    regularized: bool = False

    @property
    def min_history(self) -> int:
        return self.p + (self.period if self.seasonal_diff else 0)

    def forecast(self, history, h: int = 1) -> np.ndarray:
        x = np.asarray(history, dtype=np.float64)
        need = self.min_history
        if x.size < need:
            raise ValueError(f"history of length {x.size} shorter than {need}")
        P = self.period
        back = 1 + np.arange(self.p)
        buf = np.concatenate([x[-need:], np.empty(h)])
        for t in range(need, need + h):
            z = buf[t - back]
            if self.seasonal_diff:
                z = z - buf[t - back - P]
            buf[t] = self.intercept + self.coef @ z
            if self.seasonal_diff:
                buf[t] += buf[t - P]
        return buf[need:].copy()


def seasonal_ar_fit(train: Series, p: int = 2, seasonal_diff: bool = True) -> SeasonalARModel:
    """Conditional least squares fit via the normal equations."""
    if p < 1:
        raise ValueError("p must be >= 1")
    P = train.period
    if len(train) <= P + p + 10:
        raise SeriesError(f"training series too short for p={p}, period={P}")
    x = train.values
    z = x[P:] - x[:-P] if seasonal_diff else x
    n = z.size - p
    X = np.column_stack([np.ones(n)] + [z[p - j : p - j + n] for j in range(1, p + 1)])
    y = z[p:]
    A = X.T @ X
    b = X.T @ y
    regularized = False
    if np.linalg.matrix_rank(A) < A.shape[0]:
        warnings.warn("singular normal equations; using ridge 1e-8", RuntimeWarning)
        A = A + 1e-8 * np.eye(A.shape[0])
        regularized = True
    beta = np.linalg.solve(A, b)
    return SeasonalARModel(beta[1:].copy(), float(beta[0]), p, P, seasonal_diff, regularized)


class SeasonalARKDS(KDSBase):
    """Statistical KDS: seasonal difference followed by an AR(p) fit."""

    kind = "seasonal_ar"

    def __init__(self, p=2, seasonal_diff=True):
        self.p = p
        self.seasonal_diff = seasonal_diff

    def fit(self, train: Series, y=None):
        self.model_ = seasonal_ar_fit(train, self.p, self.seasonal_diff)
        self.period_ = train.period
        return self

    @property
    def min_history_(self) -> int:
        return self.model_.min_history

    def forecast_checked(self, history, h=1, origin=None):
        self._check_fitted()
        return self.model_.forecast(history, h), True


def make_kds(spec: Optional[dict]) -> KDSBase:
    """Build an unfitted KDS from a ``{"variant": ..., ...}`` description."""
    from .graph import GraphKDS, SeasonalRuleConfig

    spec = dict(spec or {"variant": "graph"})
    variant = spec.pop("variant", "graph")
    if variant == "graph":
        rule = spec.pop("rule", None)
        if isinstance(rule, dict):
            rule = SeasonalRuleConfig(**rule)
        return GraphKDS(rule=rule, **spec)
    if variant in ("naive_last", "naive"):
        return NaiveLastKDS(**spec)
    if variant == "zero":
        return ZeroKDS(**spec)
    if variant == "noisy":
        inner = spec.pop("inner", {"variant": "graph"})
        if isinstance(inner, dict) and inner.get("variant") == "noisy":
            raise ValueError("noisy KDS cannot wrap another noisy KDS")
        return NoisyKDS(inner=make_kds(inner), **spec)
    if variant in ("seasonal_ar", "sar"):
        return SeasonalARKDS(**spec)
    raise ValueError(f"unknown KDS variant {variant!r}")
