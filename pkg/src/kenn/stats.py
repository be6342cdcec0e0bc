"""Autocovariance and partial autocorrelation (Durbin-Levinson)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import Series


@dataclass(frozen=True)
class PacfProfile:
    """Partial autocorrelations for lags ``1..max_lag`` (``values[k-1]`` is lag k)."""

    max_lag: int
    values: np.ndarray

    def __getitem__(self, lag: int) -> float:
        if not 1 <= lag <= self.max_lag:
            raise IndexError(f"lag {lag} outside 1..{self.max_lag}")
        return float(self.values[lag - 1])

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.max_lag + 1)


def _as_array(s) -> np.ndarray:
    return s.values if isinstance(s, Series) else np.asarray(s, dtype=np.float64)


def autocovariance(s, max_lag: int) -> np.ndarray:
    """Biased sample autocovariance for lags ``0..max_lag`` (divisor n)."""
    x = _as_array(s)
    n = x.size
    if max_lag < 0 or max_lag >= n:
        raise ValueError(f"max_lag must be in [0, {n - 1}], got {max_lag}")
    d = x - x.mean()
    return np.array([d[: n - k] @ d[k:] for k in range(max_lag + 1)]) / n


def durbin_levinson(gamma: np.ndarray) -> np.ndarray:
    """PACF from autocovariances ``gamma[0..K]``; returns lags 1..K."""
    K = gamma.size - 1
    pac = np.empty(K)
    phi = np.zeros(K + 1)
    v = gamma[0]
    for k in range(1, K + 1):
        a = (gamma[k] - phi[1:k] @ gamma[k - 1 : 0 : -1]) / v
        prev = phi[1:k].copy()
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = a
        v *= 1.0 - a * a
        pac[k - 1] = a
    return pac


def pacf(s, max_lag: int) -> PacfProfile:
    x = _as_array(s)
    if max_lag < 1 or max_lag >= x.size:
        raise ValueError(f"max_lag must be in [1, {x.size - 1}], got {max_lag}")
    gamma = autocovariance(x, max_lag)
    if gamma[0] <= 0.0 or not np.isfinite(gamma[0]):
        raise ValueError("pacf undefined for a constant series (zero variance)")
    return PacfProfile(max_lag, durbin_levinson(gamma))
