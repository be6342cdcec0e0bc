"""Common forecaster contract shared by every knowledge-driven system."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..timeseries import Series, SeriesError


class KDSBase(BaseEstimator):
    """``fit(train)`` then ``forecast(history, h, origin)`` -> length-``h`` vector.

    ``origin`` is the absolute index of the first forecast step; rules that
    depend on clock time need it, the rest ignore it.
    """

    kind = "base"
    # True when forecasts are meant in the network's per-window scaled space
    # rather than in data units (only the zero forecaster)
    scaled_space = False

    def fit(self, train: Series, y=None):
        self.period_ = train.period
        return self

    def _check_fitted(self):
        check_is_fitted(self, "period_")

    @property
    def min_history_(self) -> int:
        return 1

    def forecast_checked(self, history, h: int = 1, origin: Optional[int] = None) -> Tuple[np.ndarray, bool]:
        raise NotImplementedError

    def forecast(self, history, h: int = 1, origin: Optional[int] = None) -> np.ndarray:
        return self.forecast_checked(history, h, origin)[0]

    def first_valid_sample(self, w: int) -> int:
        """Index of the first rolling-window sample with enough history."""
        return max(0, self.min_history_ - (w + 1))

    def predict_series_checked(self, s: Series, w: int, h: int = 1, first: int = 0):
        self._check_fitted()
        n_samples = len(s) - w - h
        if n_samples < 1:
            raise SeriesError(f"series of length {len(s)} too short for w={w}, h={h}")
        if first + w + 1 < self.min_history_:
            raise SeriesError(
                f"sample {first} has {first + w + 1} observations of history; "
                f"this KDS needs {self.min_history_}"
            )
        out = np.empty((n_samples - first, h))
        skipped = 0
        for row, i in enumerate(range(first, n_samples)):
            end = i + w + 1
            # history stops before the first target: no leakage by construction
            pred, ok = self.forecast_checked(s.values[:end], h, s.start + end)
            out[row] = pred
            skipped += not ok
        return out, skipped

    def predict_series(self, s: Series, w: int, h: int = 1, first: int = 0) -> np.ndarray:
        """Walk-forward predictions aligned with ``make_samples(s, w, h)[first:]``."""
        return self.predict_series_checked(s, w, h, first)[0]
