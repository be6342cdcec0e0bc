import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kenn.fusion import (
    KENNForecaster,
    KENNRegressor,
    KennModel,
    attach_kds,
    fuse_input,
    kenn_forward,
    kenn_loss,
    kenn_predict,
    load_kenn,
    residual_loss,
    residual_targets,
    save_kenn,
    train_kenn,
)
from kenn.kds import GraphKDS, NaiveLastKDS, ZeroKDS
from kenn.neural import (
    Predictor,
    PredictorArch,
    TrainConfig,
    fit_arrays,
    forward,
    init_predictor,
    loss_and_gradient,
)
from kenn.timeseries import Series, make_samples, split_chronological, unscale_samples

W = 48


def _model(seed=0, h=1, hidden=(8,)):
    return KennModel.create(PredictorArch.mlp(1, *hidden, 1), W, h, seed)


def _fused_samples(series, kds, h=1):
    kds = kds.fit(series)
    first = kds.first_valid_sample(W)
    ss = make_samples(series, W, h)[first:]
    return attach_kds(ss, kds.predict_series(series, W, h, first), kds)


@pytest.fixture(scope="module")
def small(seasonal):
    return seasonal.slice(0, 960)


# ---------------------------------------------------------------- fuse_input


def test_fuse_input_examples():
    np.testing.assert_array_equal(fuse_input([0, 1], [0.5]), [0, 1, 0.5])
    np.testing.assert_array_equal(fuse_input([1, 2], [3, 4]), [1, 2, 3, 4])
    np.testing.assert_array_equal(fuse_input([0, 1], [0]), [0, 1, 0])
    np.testing.assert_array_equal(fuse_input(np.ones((2, 2)), np.zeros((2, 1))), [[1, 1, 0], [1, 1, 0]])


def test_fuse_input_shape_mismatch():
    with pytest.raises(ValueError):
        fuse_input(np.ones((2, 2)), np.ones((3, 1)))
    with pytest.raises(ValueError):
        fuse_input(np.ones(2), np.ones((1, 1)))


def test_kenn_model_checks_widths():
    with pytest.raises(ValueError):
        KennModel(init_predictor(PredictorArch.mlp(49, 1)), W, 1)
    with pytest.raises(ValueError):
        KennModel(init_predictor(PredictorArch.mlp(50, 2)), W, 1)
    assert _model(h=3).predictor.arch.input_dim == W + 1 + 3


# ---------------------------------------------------------------- kenn_forward


def test_zero_params_returns_kds():
    arch = PredictorArch.mlp(W + 2, 8, 1)
    m = KennModel(Predictor(arch, np.zeros(arch.n_params)), W, 1)
    p = np.array([0.37])
    np.testing.assert_array_equal(kenn_forward(m, np.linspace(0, 1, W + 1), p), p)


def test_zero_kds_is_plain_forward():
    m = _model(3)
    x = np.random.default_rng(0).uniform(size=W + 1)
    np.testing.assert_array_equal(
        kenn_forward(m, x, [0.0]), forward(m.predictor, np.append(x, 0.0))
    )


def test_kenn_forward_width_check():
    with pytest.raises(ValueError):
        kenn_forward(_model(), np.zeros(W + 1), [0.0, 0.0])


vec = st.floats(-10, 10, allow_nan=False)


@given(arrays(np.float64, W + 1, elements=vec), arrays(np.float64, 2, elements=vec), st.integers(0, 50))
def test_residual_identity(x, p, seed):
    m = _model(seed, h=2)
    f = forward(m.predictor, fuse_input(x, p))
    a = kenn_forward(m, x, p)
    # the definition, bit for bit
    assert a.tobytes() == (f + p).tobytes()
    # subtracting back recovers p up to the rounding of that one addition
    tol = 2 * np.spacing(np.maximum(np.abs(a), np.abs(f)))
    assert np.all(np.abs((a - f) - p) <= tol)


# ---------------------------------------------------------------- objective


def test_objective_equivalence(small):
    data = _fused_samples(small, GraphKDS())
    m = _model(1)
    assert abs(kenn_loss(m, data) - residual_loss(m, data)) <= 1e-15
    np.testing.assert_array_equal(residual_targets(data), data.targets - data.kds_pred)


def test_reported_loss_is_fused_mse(small):
    data = _fused_samples(small, GraphKDS())
    cfg = TrainConfig(learning_rate=0.02, max_epochs=3)
    res = train_kenn(_model(2), data, cfg)
    assert abs(res.loss_history[-1] - kenn_loss(res.model, data)) <= 1e-15


def test_train_kenn_requires_kds(small):
    from kenn.timeseries import scale_samples

    with pytest.raises(ValueError, match="kds_pred"):
        train_kenn(_model(), scale_samples(make_samples(small, W, 1)), TrainConfig())


# ---------------------------------------------------------------- zero / perfect KDS


def test_zero_kds_trajectory_matches_plain_training(small):
    data = _fused_samples(small, ZeroKDS())
    assert np.all(data.kds_pred == 0.0)
    cfg = TrainConfig(learning_rate=0.02, max_epochs=4, seed=7)
    m = _model(5)
    kenn = train_kenn(m, data, cfg, record_trajectory=True)
    padded = np.hstack([data.inputs, np.zeros((len(data), 1))])
    plain = fit_arrays(m.predictor, padded, data.targets, cfg, record_trajectory=True)
    assert len(kenn.trajectory) == len(plain.trajectory) == 5
    for a, b in zip(kenn.trajectory, plain.trajectory):
        assert a.tobytes() == b.tobytes()
    assert kenn.loss_history == plain.loss_history


def test_perfect_kds_fixpoint(small):
    from dataclasses import replace

    data = _fused_samples(small, GraphKDS())
    data = replace(data, kds_pred=data.targets.copy())
    arch = PredictorArch.mlp(W + 2, 8, 1)
    zero = KennModel(Predictor(arch, np.zeros(arch.n_params)), W, 1)
    assert kenn_loss(zero, data) == 0.0
    _, g = loss_and_gradient(zero.predictor, fuse_input(data.inputs, data.kds_pred), residual_targets(data))
    v = zero.predictor.unpack(g)
    assert np.all(v["W1"] == 0) and np.all(v["b1"] == 0)

    res = train_kenn(_model(0), data, TrainConfig(learning_rate=0.05, max_epochs=300))
    assert res.loss_history[-1] < 1e-6
    out = kenn_forward(res.model, data.inputs, data.kds_pred)
    assert np.mean((out - data.kds_pred) ** 2) < 1e-6


# ---------------------------------------------------------------- prediction


def test_kenn_predict_affine_commutes(small):
    data = _fused_samples(small, GraphKDS())
    m = _model(4)
    m.predictor.params += 0.01
    pred = kenn_predict(m, data)
    kds_units = unscale_samples(data.kds_pred, data)
    rng_ = (data.scale_max - data.scale_min)[:, None]
    alt = kds_units + rng_ * forward(m.predictor, fuse_input(data.inputs, data.kds_pred))
    np.testing.assert_allclose(pred, alt, rtol=1e-12)


def test_kenn_predict_zero_params_gives_kds(small):
    kds = GraphKDS().fit(small)
    first = kds.first_valid_sample(W)
    raw = kds.predict_series(small, W, 1, first)
    data = _fused_samples(small, GraphKDS())
    arch = PredictorArch.mlp(W + 2, 4, 1)
    m = KennModel(Predictor(arch, np.zeros(arch.n_params)), W, 1)
    pred = kenn_predict(m, data)
    np.testing.assert_array_equal(pred, unscale_samples(data.kds_pred, data))
    np.testing.assert_allclose(pred, raw, rtol=1e-12)


def test_attach_kds_zero_is_scaled_zero(small):
    ss = make_samples(small, W, 1)
    data = attach_kds(ss, np.zeros((len(ss), 1)), ZeroKDS())
    assert np.all(data.kds_pred == 0.0)
    # a data-space KDS goes through each window's affine
    data2 = attach_kds(ss, ss.targets, NaiveLastKDS())
    np.testing.assert_allclose(data2.kds_pred, data2.targets)


# ---------------------------------------------------------------- checkpoints


def test_save_load_kenn_bit_exact(tmp_path, small):
    kds = GraphKDS().fit(small)
    data = _fused_samples(small, GraphKDS())
    res = train_kenn(KennModel.create(PredictorArch.mlp(1, 8, 1), W, 1, 0, kds), data,
                     TrainConfig(learning_rate=0.02, max_epochs=2))
    save_kenn(res.model, tmp_path / "m.json")
    back = load_kenn(tmp_path / "m.json")
    assert back.predictor.params.tobytes() == res.model.predictor.params.tobytes()
    assert kenn_predict(back, data).tobytes() == kenn_predict(res.model, data).tobytes()
    hist = small.values[:900]
    np.testing.assert_array_equal(back.kds.forecast(hist, 1, 900), kds.forecast(hist, 1, 900))


def test_load_kenn_rejects_predictor_file(tmp_path):
    from kenn.neural import save_predictor

    save_predictor(init_predictor(PredictorArch.mlp(2, 1)), tmp_path / "p.json")
    with pytest.raises(ValueError):
        load_kenn(tmp_path / "p.json")


# ---------------------------------------------------------------- estimators


def test_kenn_regressor_residual():
    rng = np.random.default_rng(0)
    window = rng.uniform(size=(200, 4))
    kds = window[:, -1:] + 0.1
    y = window[:, -1] + 0.05 * window[:, 0]
    X = np.hstack([window, kds])
    est = KENNRegressor(hidden=(8,), learning_rate=0.05, max_epochs=100).fit(X, y)
    raw = forward(est.predictor_, X)[:, 0]
    np.testing.assert_array_equal(est.predict(X), raw + kds[:, 0])
    assert est.score(X, y) > 0.9


def test_kenn_regressor_needs_kds_columns():
    with pytest.raises(ValueError):
        KENNRegressor(horizon=2).fit(np.ones((5, 2)), np.ones(5))


@pytest.mark.parametrize("fusion", [True, False])
def test_kenn_forecaster(small, fusion):
    train, _ = split_chronological(small, 0.8)
    est = KENNForecaster(
        kds=GraphKDS(), arch=PredictorArch.mlp(1, 8, 1),
        train_config=TrainConfig(learning_rate=0.02, max_epochs=3), fusion=fusion,
    ).fit(train)
    pred = est.predict(small)
    assert pred.shape == (len(est.samples(small)), 1)
    assert np.all(np.isfinite(pred))
    width = W + 2 if fusion else W + 1
    predictor = est.model_.predictor if fusion else est.model_
    assert predictor.arch.input_dim == width


def test_kenn_forecaster_clone_and_unfitted(small):
    from sklearn.base import clone
    from sklearn.exceptions import NotFittedError

    est = KENNForecaster(w=24)
    assert clone(est).get_params()["w"] == 24
    with pytest.raises(NotFittedError):
        est.predict(small)
