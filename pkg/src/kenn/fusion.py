"""Residual knowledge fusion.

The KDS forecast is appended to the network input and added to the network
output, so the network only has to learn the KDS error. Everything happens in
the per-sample scaled space; since the KDS forecast shares the window's affine,
unscaling the fused output gives ``kds + (max - min) * residual``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .kds.base import KDSBase
from .kds.serialize import kds_from_dict, kds_to_dict
from .neural import (
    NeuralRegressor,
    Predictor,
    PredictorArch,
    TrainConfig,
    TrainResult,
    fit_arrays,
    forward,
    init_predictor,
    predictor_from_dict,
    predictor_to_dict,
)
from .timeseries import SampleSet, Series, make_samples, scale_samples, unscale_samples


def attach_kds(samples: SampleSet, kds_preds, kds: Optional[KDSBase] = None) -> SampleSet:
    """Scale ``samples`` and attach KDS forecasts in the network's space.

    Forecasts in data units go through each window's affine; a KDS flagged
    ``scaled_space`` (the zero forecaster) is attached as is.
    """
    if kds is not None and kds.scaled_space:
        return replace(scale_samples(samples), kds_pred=np.asarray(kds_preds, dtype=np.float64))
    return scale_samples(samples.with_kds(kds_preds))


def fuse_input(window_scaled, kds_pred_scaled) -> np.ndarray:
    """``[window || kds_pred]``, row-wise for 2-D input."""
    a = np.asarray(window_scaled, dtype=np.float64)
    b = np.asarray(kds_pred_scaled, dtype=np.float64)
    if a.ndim != b.ndim or (a.ndim == 2 and a.shape[0] != b.shape[0]):
        raise ValueError("window and kds_pred batch shapes differ")
    return np.concatenate([a, b], axis=-1)


@dataclass
class KennModel:
    predictor: Predictor
    w: int
    h: int
    kds: Optional[KDSBase] = None

    def __post_init__(self):
        if self.predictor.arch.input_dim != self.w + 1 + self.h:
            raise ValueError(
                f"predictor input width {self.predictor.arch.input_dim} != w+1+h = {self.w + 1 + self.h}"
            )
        if self.predictor.arch.output_dim != self.h:
            raise ValueError("predictor output width must equal h")

    @classmethod
    def create(cls, arch: PredictorArch, w: int, h: int, seed: int = 0, kds=None) -> "KennModel":
        return cls(init_predictor(arch.with_io(w + 1 + h, h), seed), w, h, kds)


def kenn_forward(m: KennModel, window_scaled, kds_pred_scaled) -> np.ndarray:
    kds = np.asarray(kds_pred_scaled, dtype=np.float64)
    if kds.shape[-1] != m.h:
        raise ValueError(f"kds_pred width {kds.shape[-1]} != h={m.h}")
    return forward(m.predictor, fuse_input(window_scaled, kds)) + kds


def _require_kds(data: SampleSet) -> None:
    if data.kds_pred is None:
        raise ValueError("samples carry no kds_pred; attach KDS predictions before training")
    if not data.scaled:
        raise ValueError("samples must be scaled")


def residual_targets(data: SampleSet) -> np.ndarray:
    return data.targets - data.kds_pred


def kenn_loss(m: KennModel, data: SampleSet) -> float:
    """Scaled-space MSE of the fused prediction against the targets."""
    _require_kds(data)
    return float(np.mean((kenn_forward(m, data.inputs, data.kds_pred) - data.targets) ** 2))


def residual_loss(m: KennModel, data: SampleSet) -> float:
    """Same objective written on the residual: MSE of network output vs (target - kds)."""
    _require_kds(data)
    out = forward(m.predictor, fuse_input(data.inputs, data.kds_pred))
    return float(np.mean((out - residual_targets(data)) ** 2))


def train_kenn(
    m: KennModel, data: SampleSet, cfg: TrainConfig, record_trajectory: bool = False
) -> TrainResult:
    """Fit the inner predictor on fused inputs against the KDS residual.

    Returned ``predictor`` is wrapped back into a :class:`KennModel` as ``result.model``.
    """
    _require_kds(data)
    result = fit_arrays(
        m.predictor,
        fuse_input(data.inputs, data.kds_pred),
        residual_targets(data),
        cfg,
        record_trajectory,
    )
    result.model = replace(m, predictor=result.predictor)
    return result


def kenn_predict(m: KennModel, samples: SampleSet) -> np.ndarray:
    """Unscaled fused predictions, one row per sample."""
    _require_kds(samples)
    return unscale_samples(kenn_forward(m, samples.inputs, samples.kds_pred), samples)


def save_kenn(m: KennModel, path) -> None:
    doc = {
        "format": "kenn-model/1",
        "w": m.w,
        "h": m.h,
        "predictor": predictor_to_dict(m.predictor),
        "kds": None if m.kds is None else kds_to_dict(m.kds),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_kenn(path) -> KennModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "kenn-model/1":
        raise ValueError(f"{path}: not a KENN checkpoint")
    kds = None if doc["kds"] is None else kds_from_dict(doc["kds"])
    return KennModel(predictor_from_dict(doc["predictor"]), int(doc["w"]), int(doc["h"]), kds)


class KENNRegressor(NeuralRegressor):
    """Residual regressor on fused feature matrices.

    ``X`` must already be ``[window || kds_pred]``; the last ``horizon`` columns
    are taken as the KDS forecast. ``predict`` returns network output plus those
    columns. Other parameters are as in :class:`NeuralRegressor`.
    """

    def __init__(
        self,
        horizon=1,
        kind="mlp",
        hidden=(32, 16),
        channels=(8, 8, 8, 8, 8, 8),
        kernel_size=2,
        learning_rate=0.05,
        batch_size=32,
        max_epochs=300,
        plateau_patience=20,
        plateau_min_delta=1e-5,
        seed=0,
    ):
        super().__init__(
            kind, hidden, channels, kernel_size, learning_rate, batch_size,
            max_epochs, plateau_patience, plateau_min_delta, seed,
        )
        self.horizon = horizon

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(y, dtype=np.float64, ensure_2d=False)
        if X.shape[1] <= self.horizon:
            raise ValueError("X must hold the window followed by `horizon` KDS columns")
        kds = X[:, -self.horizon :]
        return self._fit_targets(X, Y - (kds[:, 0] if Y.ndim == 1 else kds))

    def predict(self, X):
        X = check_array(X, dtype=np.float64)
        out = self._raw_predict(X) + X[:, -self.horizon :]
        return out[:, 0] if self.single_output_ else out


class KENNForecaster(BaseEstimator):
    """End-to-end forecaster on a :class:`Series`: KDS fit, walk-forward KDS
    predictions, per-sample scaling and residual training.

    With ``fusion=False`` the same samples train a plain network on the window
    alone, which is the data-only baseline. ``output_gain`` scales the
    readout initialisation (see :func:`init_predictor`).
    """

    def __init__(
        self, kds=None, arch=None, train_config=None, w=48, h=1, fusion=True, seed=0, output_gain=0.1
    ):
        self.kds = kds
        self.arch = arch
        self.train_config = train_config
        self.w = w
        self.h = h
        self.fusion = fusion
        self.seed = seed
        self.output_gain = output_gain

    def samples(self, s: Series) -> SampleSet:
        """Scaled samples of ``s`` (with KDS forecasts attached when fusing)."""
        first = self.kds_.first_valid_sample(self.w)
        samples = make_samples(s, self.w, self.h)[first:]
        if self.fusion:
            return attach_kds(samples, self.kds_.predict_series(s, self.w, self.h, first), self.kds_)
        return scale_samples(samples)

    def fit(self, train: Series, y=None):
        from .kds.graph import GraphKDS

        self.kds_ = clone(self.kds if self.kds is not None else GraphKDS()).fit(train)
        arch = self.arch if self.arch is not None else PredictorArch.mlp(1, 32, 16, 1)
        cfg = self.train_config if self.train_config is not None else TrainConfig(seed=self.seed)
        width = self.w + 1 + (self.h if self.fusion else 0)
        p = init_predictor(arch.with_io(width, self.h), self.seed, self.output_gain)
        data = self.samples(train)
        if self.fusion:
            res = train_kenn(KennModel(p, self.w, self.h, self.kds_), data, cfg)
            self.model_ = res.model
        else:
            res = fit_arrays(p, data.inputs, data.targets, cfg)
            self.model_ = res.predictor
        self.loss_history_ = res.loss_history
        return self

    def predict(self, s: Series) -> np.ndarray:
        """Unscaled forecasts for every sample of ``s`` that has enough history."""
        check_is_fitted(self, "model_")
        data = self.samples(s)
        if self.fusion:
            return kenn_predict(self.model_, data)
        return unscale_samples(forward(self.model_, data.inputs), data)
