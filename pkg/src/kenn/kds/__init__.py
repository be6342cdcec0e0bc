from .base import KDSBase
from .baselines import (
    NaiveLastKDS,
    NoisyKDS,
    SeasonalARKDS,
    SeasonalARModel,
    ZeroKDS,
    make_kds,
    naive_last,
    noisy_wrap,
    seasonal_ar_fit,
    zero_kds,
)
from .graph import (
    BlockStats,
    GraphKDS,
    KnowledgeGraph,
    SeasonalRuleConfig,
    apply_seasonal_rule,
    build_graph,
    delta,
    graph_from_pacf,
    kds_forecast,
)
from .serialize import clone_unfitted, kds_from_dict, kds_to_dict


def kds_predict_series(kds, s, w, h=1, first=0):
    """Walk-forward KDS predictions aligned one-to-one with ``make_samples(s, w, h)[first:]``."""
    return kds.predict_series(s, w, h, first)


__all__ = [
    "KDSBase", "NaiveLastKDS", "NoisyKDS", "SeasonalARKDS", "SeasonalARModel", "ZeroKDS",
    "make_kds", "naive_last", "noisy_wrap", "seasonal_ar_fit", "zero_kds", "BlockStats",
    "GraphKDS", "KnowledgeGraph", "SeasonalRuleConfig", "apply_seasonal_rule", "build_graph",
    "delta", "graph_from_pacf", "kds_forecast", "kds_predict_series", "kds_to_dict",
    "kds_from_dict", "clone_unfitted",
]
