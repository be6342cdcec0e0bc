"""Small numpy predictors (MLP, TCN) with explicit backprop and a plateau-stopping trainer.

Parameters live in one flat float64 vector; each layer reads views into it so
finite-difference checks and checkpoints work on the same object the optimizer
updates.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .timeseries import SampleSet, unscale_samples

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictorArch:
    """Network shape.

    ``mlp``: ``layers`` lists every width from input to output.
    ``tcn``: ``input_dim`` positions of one channel go through ``len(channels)``
    residual blocks (causal conv, dilation ``2**i``, ReLU, skip), then a linear
    readout of the last position to ``output_dim``.
    """

    kind: str = "mlp"
    layers: Tuple[int, ...] = ()
    input_dim: int = 0
    output_dim: int = 1
    channels: Tuple[int, ...] = ()
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(v) for v in self.layers))
        object.__setattr__(self, "channels", tuple(int(v) for v in self.channels))
        if self.kind == "mlp":
            if len(self.layers) < 2 or min(self.layers) < 1:
                raise ValueError(f"mlp needs >= 2 positive widths, got {self.layers}")
            object.__setattr__(self, "input_dim", self.layers[0])
            object.__setattr__(self, "output_dim", self.layers[-1])
        elif self.kind == "tcn":
            if self.input_dim < 1 or self.output_dim < 1:
                raise ValueError("tcn needs positive input_dim and output_dim")
            if not self.channels or min(self.channels) < 1 or self.kernel_size < 1:
                raise ValueError("tcn needs positive channels and kernel_size")
        else:
            raise ValueError(f"unknown architecture kind {self.kind!r}")

    @classmethod
    def mlp(cls, *widths: int) -> "PredictorArch":
        return cls("mlp", tuple(widths))

    @classmethod
    def tcn(cls, input_dim: int, output_dim: int, channels=(8, 8, 8, 8, 8, 8), kernel_size=2):
        return cls("tcn", (), input_dim, output_dim, tuple(channels), kernel_size)

    def with_io(self, input_dim: int, output_dim: int) -> "PredictorArch":
        """Same hidden structure with new input/output widths."""
        if self.kind == "mlp":
            return PredictorArch.mlp(input_dim, *self.layers[1:-1], output_dim)
        return replace(self, input_dim=input_dim, output_dim=output_dim)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * (2 ** len(self.channels) - 1)

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        out = []
        if self.kind == "mlp":
            for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
                out += [(f"W{i}", (a, b)), (f"b{i}", (b,))]
            return out
        c_in = 1
        for i, c in enumerate(self.channels):
            out += [(f"conv{i}.W", (c, c_in, self.kernel_size)), (f"conv{i}.b", (c,))]
            if c != c_in:
                out += [(f"skip{i}.W", (c, c_in)), (f"skip{i}.b", (c,))]
            c_in = c
        out += [("out.W", (c_in, self.output_dim)), ("out.b", (self.output_dim,))]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorArch":
        return cls(**d)


@dataclass
class Predictor:
    arch: PredictorArch
    params: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.n_params,):
            raise ValueError(
                f"expected {self.arch.n_params} parameters for {self.arch.kind}, got {self.params.size}"
            )

    def unpack(self, flat: Optional[np.ndarray] = None) -> dict:
        flat = self.params if flat is None else flat
        views, pos = {}, 0
        for name, shape in self.arch.shapes():
            size = int(np.prod(shape))
            views[name] = flat[pos : pos + size].reshape(shape)
            pos += size
        return views

    def copy(self) -> "Predictor":
        return Predictor(self.arch, self.params.copy(), self.seed)


def init_predictor(arch: PredictorArch, seed: int = 0, output_gain: float = 1.0) -> Predictor:
    """He-uniform weights for ReLU layers, LeCun-uniform for the linear layers; zero biases.

    ``output_gain`` multiplies the readout layer's bound; 0 starts the network
    at an exactly zero output, so a residual model starts at its base forecast.
    TCN conv weights are further shrunk by ``1/sqrt(n_blocks)`` so the residual
    stream does not grow geometrically with depth.
    """
    rng = np.random.default_rng(seed)
    p = Predictor(arch, np.zeros(arch.n_params), seed)
    views = p.unpack()
    for name, shape in arch.shapes():
        if name.startswith("b") or name.endswith(".b"):
            continue
        if name.startswith("W"):
            fan_in, relu = shape[0], name != f"W{len(arch.layers) - 2}"
        elif name.startswith("conv"):
            fan_in, relu = shape[1] * shape[2], True
        elif name.startswith("skip"):
            fan_in, relu = shape[1], False
        else:
            fan_in, relu = shape[0], False
        bound = np.sqrt((6.0 if relu else 3.0) / fan_in)
        if name.startswith("conv"):
            bound /= np.sqrt(len(arch.channels))
        if name in ("out.W", f"W{len(arch.layers) - 2}"):
            bound *= output_gain
        views[name][...] = rng.uniform(-bound, bound, size=shape)
    return p


def _as_batch(p: Predictor, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != p.arch.input_dim:
        raise ValueError(f"input width {X.shape[1]} != architecture input {p.arch.input_dim}")
    return X


# ---------------------------------------------------------------- MLP


def _mlp_forward(v: dict, n_layers: int, X: np.ndarray):
    acts = [X]
    a = X
    for i in range(n_layers):
        z = a @ v[f"W{i}"] + v[f"b{i}"]
        a = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(a)
    return a, acts


def _mlp_backward(v: dict, g: dict, n_layers: int, acts, dout: np.ndarray) -> None:
    d = dout
    for i in reversed(range(n_layers)):
        g[f"W{i}"][...] = acts[i].T @ d
        g[f"b{i}"][...] = d.sum(axis=0)
        if i:
            d = (d @ v[f"W{i}"].T) * (acts[i] > 0.0)


# ---------------------------------------------------------------- TCN


def _causal_conv(x: np.ndarray, W: np.ndarray, b: np.ndarray, dil: int):
    """x: (B, C_in, L); W: (C_out, C_in, K). Tap j looks back ``(K-1-j)*dil`` steps."""
    K = W.shape[2]
    L = x.shape[2]
    pad = (K - 1) * dil
    xp = np.pad(x, ((0, 0), (0, 0), (pad, 0))) if pad else x
    out = np.broadcast_to(b[None, :, None], (x.shape[0], W.shape[0], L)).copy()
    for j in range(K):
        out += W[:, :, j] @ xp[:, :, j * dil : j * dil + L]
    return out, xp


def _causal_conv_backward(dout, xp, W, dil, L):
    K = W.shape[2]
    pad = (K - 1) * dil
    dW = np.empty_like(W)
    dxp = np.zeros_like(xp)
    for j in range(K):
        sl = xp[:, :, j * dil : j * dil + L]
        dW[:, :, j] = np.tensordot(dout, sl, axes=([0, 2], [0, 2]))
        dxp[:, :, j * dil : j * dil + L] += W[:, :, j].T @ dout
    return dW, dout.sum(axis=(0, 2)), dxp[:, :, pad:]


def _tcn_forward(v: dict, arch: PredictorArch, X: np.ndarray):
    h = X[:, None, :]
    cache = []
    for i, _ in enumerate(arch.channels):
        dil = 2**i
        z, xp = _causal_conv(h, v[f"conv{i}.W"], v[f"conv{i}.b"], dil)
        a = np.maximum(z, 0.0)
        if f"skip{i}.W" in v:
            skip = v[f"skip{i}.W"] @ h + v[f"skip{i}.b"][None, :, None]
        else:
            skip = h
        cache.append((h, xp, z))
        h = a + skip
    last = h[:, :, -1]
    return last @ v["out.W"] + v["out.b"], (cache, h)


def _tcn_backward(v: dict, g: dict, arch: PredictorArch, state, dout: np.ndarray) -> None:
    cache, h_top = state
    g["out.W"][...] = h_top[:, :, -1].T @ dout
    g["out.b"][...] = dout.sum(axis=0)
    dh = np.zeros_like(h_top)
    dh[:, :, -1] = dout @ v["out.W"].T
    for i in reversed(range(len(arch.channels))):
        h_in, xp, z = cache[i]
        L = h_in.shape[2]
        dz = dh * (z > 0.0)
        dW, db, dx = _causal_conv_backward(dz, xp, v[f"conv{i}.W"], 2**i, L)
        g[f"conv{i}.W"][...] = dW
        g[f"conv{i}.b"][...] = db
        if f"skip{i}.W" in v:
            g[f"skip{i}.W"][...] = np.tensordot(dh, h_in, axes=([0, 2], [0, 2]))
            g[f"skip{i}.b"][...] = dh.sum(axis=(0, 2))
            dx = dx + v[f"skip{i}.W"].T @ dh
        else:
            dx = dx + dh
        dh = dx


# ---------------------------------------------------------------- public ops


def _forward(p: Predictor, X: np.ndarray):
    v = p.unpack()
    if p.arch.kind == "mlp":
        return _mlp_forward(v, len(p.arch.layers) - 1, X)
    return _tcn_forward(v, p.arch, X)


def forward(p: Predictor, X) -> np.ndarray:
    """Predictions for one input vector (returns ``(h,)``) or a batch (``(B, h)``)."""
    single = np.ndim(X) == 1
    out, _ = _forward(p, _as_batch(p, X))
    return out[0] if single else out


def tcn_activations(p: Predictor, x) -> List[np.ndarray]:
    """Per-block outputs ``(channels, positions)`` for one input; used to inspect causality."""
    if p.arch.kind != "tcn":
        raise ValueError("activations are only defined per position for tcn")
    _, (cache, top) = _forward(p, _as_batch(p, x))
    return [c[0][0] for c in cache[1:]] + [top[0]]


def loss_and_gradient(p: Predictor, X, Y, params: Optional[np.ndarray] = None):
    """Batch-mean squared error over all outputs and its gradient w.r.t. the flat parameters."""
    if params is not None:
        p = Predictor(p.arch, params, p.seed)
    X = _as_batch(p, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    if Y.shape[1] != p.arch.output_dim:
        raise ValueError(f"target width {Y.shape[1]} != architecture output {p.arch.output_dim}")
    out, state = _forward(p, X)
    err = out - Y
    loss = float(np.mean(err**2))
    dout = 2.0 * err / err.size
    grad = np.zeros_like(p.params)
    v = p.unpack()
    g = p.unpack(grad)
    if p.arch.kind == "mlp":
        _mlp_backward(v, g, len(p.arch.layers) - 1, state, dout)
    else:
        _tcn_backward(v, g, p.arch, state, dout)
    return loss, grad


def gradient(p: Predictor, batch: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    if not len(batch):
        raise ValueError("empty batch")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    Y = np.stack([np.atleast_1d(np.asarray(y, dtype=np.float64)) for _, y in batch])
    return loss_and_gradient(p, X, Y)[1]


def batch_loss(p: Predictor, X, Y) -> float:
    out = forward(p, _as_batch(p, X))
    return float(np.mean((out - np.asarray(Y).reshape(out.shape)) ** 2))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 300
    plateau_patience: int = 20
    plateau_min_delta: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.plateau_patience < 1 or self.plateau_min_delta < 0:
            raise ValueError("plateau_patience must be >= 1 and plateau_min_delta >= 0")


@dataclass
class TrainResult:
    predictor: Predictor
    loss_history: List[float]
    trajectory: List[np.ndarray] = field(default_factory=list)
    stopped_early: bool = False
    model: Optional[object] = None

    def __iter__(self):
        return iter((self.predictor, self.loss_history))


def fit_arrays(
    p: Predictor, X, Y, cfg: TrainConfig, record_trajectory: bool = False
) -> TrainResult:
    """Mini-batch gradient descent on ``(X, Y)`` with plateau stopping.

    Batches follow a fresh permutation each epoch drawn from ``cfg.seed``; the
    recorded loss is the full-data MSE after each epoch.
    """
    X = _as_batch(p, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("no training data")
    p = p.copy()
    rng = np.random.default_rng(cfg.seed)
    history: List[float] = []
    trajectory = [p.params.copy()] if record_trajectory else []
    best, wait = np.inf, 0
    stopped = False
    n = X.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        # overflow only happens on the way to divergence, which is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                _, grad = loss_and_gradient(p, X[idx], Y[idx])
                p.params -= cfg.learning_rate * grad
            loss = batch_loss(p, X, Y)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch}; try a smaller learning_rate "
                f"(currently {cfg.learning_rate})"
            )
        history.append(loss)
        if record_trajectory:
            trajectory.append(p.params.copy())
        if loss < best * (1.0 - cfg.plateau_min_delta):
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= cfg.plateau_patience:
                stopped = True
                break
    logger.debug("trained %s for %d epochs, final loss %.6g", p.arch.kind, len(history), history[-1])
    return TrainResult(p, history, trajectory, stopped)


def train(p: Predictor, data: SampleSet, cfg: TrainConfig, record_trajectory: bool = False) -> TrainResult:
    """Train on scaled samples; returns ``(predictor, loss_history)`` when unpacked."""
    if len(data) == 0:
        raise ValueError("no training samples")
    if not data.scaled:
        raise ValueError("training expects scaled samples (see scale_samples)")
    return fit_arrays(p, data.inputs, data.targets, cfg, record_trajectory)


def predict_series(p: Predictor, samples: SampleSet) -> np.ndarray:
    """Forward every sample in scaled space, then undo that sample's scaling."""
    return unscale_samples(forward(p, samples.inputs), samples)


# ---------------------------------------------------------------- checkpoints


def _hexlist(a: np.ndarray) -> List[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def predictor_to_dict(p: Predictor) -> dict:
    return {"arch": p.arch.to_dict(), "seed": int(p.seed), "params": _hexlist(p.params)}


def predictor_from_dict(d: dict) -> Predictor:
    params = np.array([float.fromhex(s) for s in d["params"]])
    return Predictor(PredictorArch.from_dict(d["arch"]), params, int(d["seed"]))


def save_predictor(p: Predictor, path) -> None:
    Path(path).write_text(json.dumps({"format": "kenn-predictor/1", **predictor_to_dict(p)}, indent=1))


def load_predictor(path) -> Predictor:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "kenn-predictor/1":
        raise ValueError(f"{path}: not a predictor checkpoint")
    return predictor_from_dict(d)


# ---------------------------------------------------------------- estimator


class NeuralRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`init_predictor` + :func:`fit_arrays`.

    Parameters
    ----------
    kind : {"mlp", "tcn"}
    hidden : tuple of int
        Hidden widths for the MLP.
    channels, kernel_size : TCN block settings.
    learning_rate, batch_size, max_epochs, plateau_patience, plateau_min_delta :
        see :class:`TrainConfig`.
    seed : int
        Seeds both initialisation and batch order.
    """

    def __init__(
        self,
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
        self.kind = kind
        self.hidden = hidden
        self.channels = channels
        self.kernel_size = kernel_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.plateau_patience = plateau_patience
        self.plateau_min_delta = plateau_min_delta
        self.seed = seed

    def _arch(self, d: int, h: int) -> PredictorArch:
        if self.kind == "mlp":
            return PredictorArch.mlp(d, *self.hidden, h)
        return PredictorArch.tcn(d, h, self.channels, self.kernel_size)

    def _config(self) -> TrainConfig:
        return TrainConfig(
            self.learning_rate, self.batch_size, self.max_epochs,
            self.plateau_patience, self.plateau_min_delta, self.seed,
        )

    def _fit_targets(self, X, Y):
        self.single_output_ = Y.ndim == 1
        Y2 = Y.reshape(len(Y), -1)
        p = init_predictor(self._arch(X.shape[1], Y2.shape[1]), self.seed)
        result = fit_arrays(p, X, Y2, self._config())
        self.predictor_ = result.predictor
        self.loss_history_ = result.loss_history
        self.n_features_in_ = X.shape[1]
        return self

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(y, dtype=np.float64, ensure_2d=False)
        return self._fit_targets(X, Y)

    def _raw_predict(self, X):
        check_is_fitted(self, "predictor_")
        X = check_array(X, dtype=np.float64)
        return forward(self.predictor_, X)

    def predict(self, X):
        out = self._raw_predict(X)
        return out[:, 0] if self.single_output_ else out
