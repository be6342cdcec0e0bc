"""Series container, ingestion, synthetic data, rolling windows, scaling and metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_PERIOD = 48


class SeriesError(ValueError):
    """Raised for malformed series input or impossible windowing requests."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Series:
    """Univariate series with its seasonal period.

    ``start`` is the absolute index of ``values[0]`` in the original record.
    Slicing helpers keep it up to date so that clock-time rules (which block
    of the day an observation falls in) survive splitting and reduction.
    """

    values: np.ndarray
    period: int = DEFAULT_PERIOD
    start: int = 0

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise SeriesError("series must be one-dimensional")
        if values.size < 1:
            raise SeriesError("series must contain at least one observation")
        if not np.all(np.isfinite(values)):
            raise SeriesError("series contains NaN or infinite values")
        if int(self.period) < 1:
            raise SeriesError(f"period must be >= 1, got {self.period}")
        if int(self.start) < 0:
            raise SeriesError("start index must be non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "period", int(self.period))
        object.__setattr__(self, "start", int(self.start))

    def __len__(self) -> int:
        return self.values.size

    def slice(self, lo: int, hi: Optional[int] = None) -> "Series":
        lo = int(lo)
        hi = len(self) if hi is None else int(hi)
        return Series(self.values[lo:hi], self.period, self.start + lo)


def load_csv(path: Union[str, Path], period: int = DEFAULT_PERIOD) -> Series:
    """Read a CSV with a ``value`` column (and optionally ``timestamp``).

    Rows are taken in file order; timestamps are checked for ISO-8601 form
    but otherwise ignored.
    """
    from datetime import datetime

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SeriesError(f"{path}: empty file")
        fields = [f.strip() for f in reader.fieldnames]
        reader.fieldnames = fields
        if "value" not in fields:
            raise SeriesError(f"{path}: header must contain a 'value' column")
        values = []
        # row 1 is the header
        for rownum, row in enumerate(reader, start=2):
            cell = (row.get("value") or "").strip()
            try:
                v = float(cell)
            except ValueError:
                raise SeriesError(f"{path}: row {rownum}: non-numeric value {cell!r}") from None
            if not np.isfinite(v):
                raise SeriesError(f"{path}: row {rownum}: non-finite value {cell!r}")
            if "timestamp" in fields and row.get("timestamp"):
                try:
                    datetime.fromisoformat(row["timestamp"].strip())
                except ValueError:
                    raise SeriesError(
                        f"{path}: row {rownum}: bad ISO-8601 timestamp {row['timestamp']!r}"
                    ) from None
            values.append(v)
    if not values:
        raise SeriesError(f"{path}: empty file (no data rows)")
    return Series(np.asarray(values), period)


def write_csv(series: Series, path: Union[str, Path]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value"])
        for v in series.values:
            writer.writerow([repr(float(v))])


def generate_synthetic(
    n: int,
    period: int = DEFAULT_PERIOD,
    seed: int = 0,
    noise_sd: float = 2.0,
    trend: float = 0.0,
    *,
    level: float = 20.0,
    amplitude: float = 15.0,
    weekly_amp: float = 0.0,
    ar_coef: float = 0.6,
    slot_sd: float = 2.0,
    seasonal_coef: float = 0.0,
) -> Series:
    """Traffic-like series: two-peak daily profile, optional weekly modulation,
    AR(1) noise and a linear trend, clipped at zero.

    ``slot_sd`` adds a fixed, seeded offset per time-of-day slot (repeated every
    day), which is what gives the previous-cycle lag its predictive value.

    ``weekly_amp`` scales the day-of-week amplitude factor; it defaults to 0 so
    that the noiseless, trendless series is exactly ``period``-periodic.
    ``noise_sd`` is the innovation standard deviation of the AR(1) noise;
    ``seasonal_coef`` adds a carry-over of the noise one period earlier (the
    deviation from the usual profile persists into the next day).
    """
    if n < 2 * period:
        raise SeriesError(f"n={n} is too small; need at least 2*period={2 * period}")
    if noise_sd < 0:
        raise SeriesError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    phase = 2.0 * np.pi * (t % period) / period
    # morning and evening peaks over a low night-time base
    profile = 0.5 - 0.5 * np.cos(phase) + 0.35 * np.sin(2.0 * phase - 0.5)
    profile_offsets = rng.normal(0.0, slot_sd, size=period) if slot_sd > 0 else np.zeros(period)
    day = t // period
    weekly = 1.0 + weekly_amp * np.sin(2.0 * np.pi * (day % 7) / 7.0)
    signal = level + amplitude * profile * weekly + profile_offsets[t % period]

    noise = np.zeros(n)
    if noise_sd > 0:
        eps = rng.normal(0.0, noise_sd, size=n)
        for i in range(1, n):
            noise[i] = ar_coef * noise[i - 1] + eps[i]
            if i >= period:
                noise[i] += seasonal_coef * noise[i - period]
        noise[0] = eps[0]
    values = np.clip(signal + noise + trend * t, 0.0, None)
    return Series(values, period)


def split_chronological(s: Series, train_fraction: float = 0.8) -> Tuple[Series, Series]:
    if not 0.0 < train_fraction < 1.0:
        raise SeriesError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    cut = int(np.floor(len(s) * train_fraction))
    if cut == 0 or cut == len(s):
        raise SeriesError("split leaves one side empty")
    return s.slice(0, cut), s.slice(cut)


def reduce_training(s: Series, keep_fraction: float, mode: str = "last") -> Series:
    """Keep a fraction of the training series; by default the most recent part."""
    if not 0.0 < keep_fraction <= 1.0:
        raise SeriesError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    keep = int(np.floor(len(s) * keep_fraction))
    if keep < 2 * s.period:
        raise SeriesError(
            f"keeping {keep} observations is too short to window (need >= {2 * s.period})"
        )
    if mode == "last":
        return s.slice(len(s) - keep)
    if mode == "first":
        return s.slice(0, keep)
    raise SeriesError(f"unknown reduction mode {mode!r}")


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    target: np.ndarray
    kds_pred: Optional[np.ndarray] = None
    scale: Tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class SampleSet:
    """Rolling-window samples stored as stacked arrays.

    Row ``i`` holds the window ending at absolute index ``ends[i]`` and the
    ``h`` observations that follow it. ``scale_min``/``scale_max`` are the
    affine used for each row (identity ``(0, 1)`` when unscaled).
    """

    inputs: np.ndarray
    targets: np.ndarray
    ends: np.ndarray
    w: int
    h: int
    kds_pred: Optional[np.ndarray] = None
    scale_min: Optional[np.ndarray] = None
    scale_max: Optional[np.ndarray] = None
    scaled: bool = False

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.inputs.shape != (n, self.w + 1) or self.targets.shape != (n, self.h):
            raise SeriesError("sample arrays do not match (w, h)")
        if self.kds_pred is not None and self.kds_pred.shape != (n, self.h):
            raise SeriesError("kds_pred must have shape (n_samples, h)")
        if self.scale_min is None:
            object.__setattr__(self, "scale_min", np.zeros(n))
            object.__setattr__(self, "scale_max", np.ones(n))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return replace(
                self,
                inputs=self.inputs[idx],
                targets=self.targets[idx],
                ends=self.ends[idx],
                kds_pred=None if self.kds_pred is None else self.kds_pred[idx],
                scale_min=self.scale_min[idx],
                scale_max=self.scale_max[idx],
            )
        return Sample(
            self.inputs[idx],
            self.targets[idx],
            None if self.kds_pred is None else self.kds_pred[idx],
            (float(self.scale_min[idx]), float(self.scale_max[idx])),
        )

    def with_kds(self, kds_pred: np.ndarray) -> "SampleSet":
        if self.scaled:
            raise SeriesError("attach KDS predictions before scaling")
        return replace(self, kds_pred=np.asarray(kds_pred, dtype=np.float64).reshape(len(self), self.h))


def make_samples(s: Series, w: int, h: int = 1) -> SampleSet:
    """Stride-1 rolling windows: ``w + 1`` inputs followed by ``h`` targets."""
    if w < 0 or h < 1:
        raise SeriesError("need w >= 0 and h >= 1")
    n = len(s)
    if n < w + 1 + h:
        raise SeriesError(f"series of length {n} too short for w={w}, h={h}")
    frames = sliding_window_view(s.values, w + 1 + h)[: n - w - h]
    inputs = np.ascontiguousarray(frames[:, : w + 1])
    targets = np.ascontiguousarray(frames[:, w + 1 :])
    ends = s.start + w + np.arange(n - w - h)
    return SampleSet(inputs, targets, ends, w, h)


def _affine(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def scale_sample(sample: Sample) -> Sample:
    """Min-max scale using the input window only; target and KDS share the affine."""
    lo, hi = _affine(np.min(sample.input), np.max(sample.input))
    rng = hi - lo
    kds = None if sample.kds_pred is None else (np.asarray(sample.kds_pred) - lo) / rng
    return Sample(
        (np.asarray(sample.input) - lo) / rng,
        (np.asarray(sample.target) - lo) / rng,
        kds,
        (float(lo), float(hi)),
    )


def scale_samples(samples: SampleSet) -> SampleSet:
    """Vectorised :func:`scale_sample` over a whole set."""
    if samples.scaled:
        raise SeriesError("samples are already scaled")
    lo, hi = _affine(samples.inputs.min(axis=1), samples.inputs.max(axis=1))
    rng = (hi - lo)[:, None]
    kds = None if samples.kds_pred is None else (samples.kds_pred - lo[:, None]) / rng
    return replace(
        samples,
        inputs=(samples.inputs - lo[:, None]) / rng,
        targets=(samples.targets - lo[:, None]) / rng,
        kds_pred=kds,
        scale_min=lo,
        scale_max=hi,
        scaled=True,
    )


def unscale_prediction(pred_scaled, scale) -> np.ndarray:
    lo, hi = scale
    return np.asarray(pred_scaled, dtype=np.float64) * (hi - lo) + lo


def unscale_samples(pred_scaled: np.ndarray, samples: SampleSet) -> np.ndarray:
    rng = (samples.scale_max - samples.scale_min)[:, None]
    return np.asarray(pred_scaled) * rng + samples.scale_min[:, None]


def _paired(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ValueError("cannot score empty vectors")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class MetricsReport:
    model_name: str
    mse: float
    mae: float
    n_test: int

    @classmethod
    def score(cls, model_name: str, pred, truth) -> "MetricsReport":
        return cls(model_name, mse(pred, truth), mae(pred, truth), int(np.size(truth)))
