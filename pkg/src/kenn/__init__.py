"""Knowledge-enhanced neural forecasting.

A knowledge-driven forecaster (PACF lag graph plus a seasonal rule) feeds its
predictions into a small neural network that learns the remaining error.
"""
from .experiments import ExperimentConfig, run_case, run_suite
from .fusion import KENNForecaster, KENNRegressor, KennModel, kenn_forward, kenn_predict, train_kenn
from .kds import GraphKDS, KnowledgeGraph, NaiveLastKDS, NoisyKDS, SeasonalARKDS, ZeroKDS, make_kds
from .neural import NeuralRegressor, Predictor, PredictorArch, TrainConfig, init_predictor
from .stats import pacf
from .timeseries import Series, generate_synthetic, load_csv, make_samples

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "run_case", "run_suite", "KENNForecaster", "KENNRegressor", "KennModel",
    "kenn_forward", "kenn_predict", "train_kenn", "GraphKDS", "KnowledgeGraph", "NaiveLastKDS",
    "NoisyKDS", "SeasonalARKDS", "ZeroKDS", "make_kds", "NeuralRegressor", "Predictor",
    "PredictorArch", "TrainConfig", "init_predictor", "pacf", "Series", "generate_synthetic",
    "load_csv", "make_samples",
]
