"""Small generators shared by the test modules."""
import numpy as np

from kenn.timeseries import Series


def ar1(n, phi, seed, sd=1.0):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sd, n + 200)
    x = np.zeros_like(e)
    for i in range(1, e.size):
        x[i] = phi * x[i - 1] + e[i]
    return Series(x[200:], period=48)


def ar_process(n, coefs, seed, sd=1.0, burn=200):
    rng = np.random.default_rng(seed)
    coefs = np.asarray(coefs, dtype=np.float64)
    e = rng.normal(0.0, sd, n + burn)
    x = np.zeros_like(e)
    for i in range(coefs.size, e.size):
        x[i] = coefs @ x[i - coefs.size : i][::-1] + e[i]
    return x[burn:]


def pacf_ols_padded(x, k):
    """Lag-k coefficient of the least-squares AR(k) fit on the demeaned series,
    zero-padded at both ends (the "autocorrelation method"). Independent of
    any autocovariance code: a plain lstsq on a design matrix."""
    d = np.asarray(x, dtype=np.float64) - np.mean(x)
    n = d.size
    padded = np.concatenate([np.zeros(k), d, np.zeros(k)])
    rows = n + k
    X = np.column_stack([padded[k - j : k - j + rows] for j in range(1, k + 1)])
    y = padded[k : k + rows]
    return np.linalg.lstsq(X, y, rcond=None)[0][-1]


def pacf_ols_plain(x, k):
    """Lag-k coefficient of an ordinary AR(k) regression with intercept on
    the overlapping part of the series only."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    X = np.column_stack([np.ones(n - k)] + [x[k - j : n - j] for j in range(1, k + 1)])
    return np.linalg.lstsq(X, x[k:], rcond=None)[0][-1]


def random_series(seed, n=500):
    """Mixed bag of stationary-ish processes for oracle checks."""
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        phi = rng.uniform(-0.9, 0.9)
        return ar_process(n, [phi], seed)
    if kind == 1:
        a1, a2 = rng.uniform(-0.5, 0.5, 2)
        return ar_process(n, [a1, a2], seed) + rng.uniform(-5, 5)
    t = np.arange(n)
    return 3.0 * np.sin(2 * np.pi * t / rng.integers(5, 30)) + rng.normal(0, 1, n)


def fd_gradient(loss_fn, params, step=1e-5):
    """Central finite differences of ``loss_fn(params)``."""
    g = np.empty_like(params)
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (loss_fn(up) - loss_fn(dn)) / (2 * step)
    return g


def relative_error(a, b, floor=1e-7):
    """Per-coordinate |a-b| / max(|a|, |b|, floor); the floor keeps exact zeros
    (dead ReLU units, unused skip paths) from dividing by nothing."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_case(k):
    """k-th random (arch, seed, batch) case: even k is an MLP, odd k a TCN."""
    from kenn.neural import PredictorArch, init_predictor

    rng = np.random.default_rng(1000 + k)
    h = int(rng.integers(1, 3))
    if k % 2 == 0:
        d = int(rng.integers(2, 7))
        hidden = [int(v) for v in rng.integers(2, 6, size=rng.integers(1, 3))]
        arch = PredictorArch.mlp(d, *hidden, h)
    else:
        d = int(rng.integers(4, 9))
        chans = tuple(int(v) for v in rng.integers(1, 4, size=rng.integers(1, 4)))
        arch = PredictorArch.tcn(d, h, chans, int(rng.integers(1, 4)))
    p = init_predictor(arch, seed=k)
    # nudge biases off zero so every code path carries gradient
    p.params += rng.normal(0, 0.05, p.params.size)
    B = int(rng.integers(1, 6))
    # central differences are meaningless across a ReLU kink, so redraw
    # batches that put any pre-activation within 1e-3 of zero
    while True:
        X = rng.normal(size=(B, d))
        if relu_margin(p, X) > 1e-3:
            break
    Y = rng.normal(size=(B, h))
    return p, X, Y


def relu_margin(p, X):
    """Smallest |pre-activation| over every ReLU unit for batch ``X``."""
    from kenn.neural import _forward

    _, state = _forward(p, X)
    if p.arch.kind == "tcn":
        cache, _ = state
        return min(np.abs(z).min() for _, _, z in cache)
    v = p.unpack()
    n = len(p.arch.layers) - 1
    return min(np.abs(state[i] @ v[f"W{i}"] + v[f"b{i}"]).min() for i in range(n - 1)) if n > 1 else np.inf


class Tracker:
    """Ordered log of (stage, furthest absolute index that stage could read)."""

    def __init__(self):
        self.events = []

    def install(self, monkeypatch):
        from kenn import experiments as ex

        real_build, real_train_kenn, real_fit = ex.build_kds, ex.train_kenn, ex.fit_arrays
        events = self.events

        def build(cfg, seed):
            kds = real_build(cfg, seed)
            fit, checked = kds.fit, kds.predict_series_checked

            def tracked_fit(s, y=None):
                events.append(("kds_fit", s.start + len(s) - 1))
                return fit(s)

            def tracked_checked(s, w, h=1, first=0):
                inner = kds.forecast_checked
                origins = []

                def spy(history, h_=1, origin=None):
                    origins.append(origin)  # history ends at origin - 1
                    return inner(history, h_, origin)

                kds.forecast_checked = spy
                try:
                    return checked(s, w, h, first)
                finally:
                    del kds.forecast_checked
                    events.append(("kds_predict", max(origins) - 1))

            kds.fit = tracked_fit
            kds.predict_series_checked = tracked_checked
            return kds

        def train_kenn(m, data, cfg, record_trajectory=False):
            events.append(("train_kenn", int(data.ends.max()) + data.h))
            return real_train_kenn(m, data, cfg, record_trajectory)

        def fit_arrays(p, X, Y, cfg, record_trajectory=False):
            events.append(("fit_dnn", None))
            return real_fit(p, X, Y, cfg, record_trajectory)

        monkeypatch.setattr(ex, "build_kds", build)
        monkeypatch.setattr(ex, "train_kenn", train_kenn)
        monkeypatch.setattr(ex, "fit_arrays", fit_arrays)

    def before_training_done(self):
        last = max(i for i, (stage, _) in enumerate(self.events) if stage == "train_kenn")
        return self.events[: last + 1]
