"""Round-trip fitted KDS objects through plain dicts (JSON-safe, bit-exact floats)."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .base import KDSBase
from .baselines import NaiveLastKDS, NoisyKDS, SeasonalARKDS, SeasonalARModel, ZeroKDS
from .graph import BlockStats, GraphKDS, KnowledgeGraph, SeasonalRuleConfig


def _hx(a) -> list:
    return [float(v).hex() for v in np.ravel(a)]


def _unhx(a) -> np.ndarray:
    return np.array([float.fromhex(v) for v in a], dtype=np.float64)


def kds_to_dict(kds: KDSBase) -> dict:
    kds._check_fitted()
    d = {"variant": kds.kind, "period": int(kds.period_)}
    if isinstance(kds, GraphKDS):
        g = kds.graph_
        d.update(
            threshold=kds.threshold,
            max_lag=kds.max_lag,
            abs_threshold=kds.abs_threshold,
            rule=asdict(kds.rule_),
            graph={
                "lags": list(g.connected_lags),
                "pacf": _hx(g.pacf_values),
                "raw": _hx(g.raw_weights),
                "norm": _hx(g.norm_weights),
                "threshold": g.threshold,
                "fallback": g.fallback,
            },
            block_len=kds.stats_.block_len,
            sigma=_hx(kds.stats_.sigma),
        )
    elif isinstance(kds, NoisyKDS):
        d.update(noise_sd=kds.noise_sd, seed=kds.seed, inner=kds_to_dict(kds.inner_))
    elif isinstance(kds, SeasonalARKDS):
        m = kds.model_
        d.update(
            p=m.p,
            seasonal_diff=m.seasonal_diff,
            coef=_hx(m.coef),
            intercept=float(m.intercept).hex(),
            regularized=m.regularized,
        )
    elif not isinstance(kds, (NaiveLastKDS, ZeroKDS)):
        raise TypeError(f"cannot serialise {type(kds).__name__}")
    return d


def kds_from_dict(d: dict) -> KDSBase:
    variant = d["variant"]
    period = int(d["period"])
    if variant == "graph":
        rule = SeasonalRuleConfig(**d["rule"])
        kds = GraphKDS(d["threshold"], d["max_lag"], d["abs_threshold"], rule)
        g = d["graph"]
        kds.graph_ = KnowledgeGraph(
            tuple(int(k) for k in g["lags"]),
            tuple(_unhx(g["pacf"])),
            tuple(_unhx(g["raw"])),
            tuple(_unhx(g["norm"])),
            g["threshold"],
            period,
            bool(g["fallback"]),
        )
        kds.rule_ = rule
        kds.stats_ = BlockStats(int(d["block_len"]), period, _unhx(d["sigma"]))
    elif variant == "noisy":
        inner = kds_from_dict(d["inner"])
        kds = NoisyKDS(clone_unfitted(inner), d["noise_sd"], d["seed"])
        kds.inner_ = inner
    elif variant == "seasonal_ar":
        kds = SeasonalARKDS(int(d["p"]), bool(d["seasonal_diff"]))
        kds.model_ = SeasonalARModel(
            _unhx(d["coef"]),
            float.fromhex(d["intercept"]),
            int(d["p"]),
            period,
            bool(d["seasonal_diff"]),
            bool(d["regularized"]),
        )
    elif variant == "naive_last":
        kds = NaiveLastKDS()
    elif variant == "zero":
        kds = ZeroKDS()
    else:
        raise ValueError(f"unknown KDS variant {variant!r}")
    kds.period_ = period
    return kds


def clone_unfitted(kds: KDSBase) -> KDSBase:
    from sklearn.base import clone

    return clone(kds)
