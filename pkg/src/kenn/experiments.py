"""Config-driven experiment harness: one case = DNN vs KDS vs KENN on a held-out slice."""
from __future__ import annotations

import copy
import csv
import io
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from .fusion import KennModel, attach_kds, fuse_input, kenn_predict, train_kenn
from .kds import make_kds
from .kds.base import KDSBase
from .neural import PredictorArch, TrainConfig, fit_arrays, forward, init_predictor
from .timeseries import (
    MetricsReport,
    Series,
    generate_synthetic,
    load_csv,
    make_samples,
    reduce_training,
    scale_samples,
    split_chronological,
    unscale_samples,
)

logger = logging.getLogger(__name__)

MODELS = ("DNN", "KDS", "KENN")
REPORT_COLUMNS = ("case", "model", "seed", "mse", "mae", "runtime")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


# ---------------------------------------------------------------- schema

_DATA_SYNTHETIC = {
    "source": str, "n": int, "period": int, "seed": (int, type(None)), "noise_sd": float,
    "trend": float, "level": float, "amplitude": float, "weekly_amp": float,
    "ar_coef": float, "slot_sd": float, "seasonal_coef": float,
}
_DATA_CSV = {"source": str, "path": str, "period": int}
_TRAIN = {
    "learning_rate": float, "batch_size": int, "max_epochs": int,
    "plateau_patience": int, "plateau_min_delta": float,
}
_DNN = {"kind": str, "hidden": list, "channels": list, "kernel_size": int, "output_gain": float}
_RULE = {"k_sigma": float, "block_hours": int, "enabled": bool, "sigma_mode": str, "blend": float}
_KDS = {
    "graph": {"variant": str, "threshold": float, "max_lag": (int, type(None)),
              "abs_threshold": bool, "rule": dict},
    "naive_last": {"variant": str},
    "zero": {"variant": str},
    "noisy": {"variant": str, "noise_sd": float, "seed": (int, type(None)), "inner": dict},
    "seasonal_ar": {"variant": str, "p": int, "seasonal_diff": bool},
}
_TOP = {
    "case_label": str, "data": dict, "train_fraction": float, "keep_fraction": float,
    "keep_mode": str, "kds_fit_on": str, "kds": dict, "dnn": dict, "train": dict,
    "w": int, "h": int, "seeds": list,
}

DEFAULTS: Dict[str, Any] = {
    "case_label": "case",
    "data": {
        "source": "synthetic", "n": 4800, "period": 48, "seed": None, "noise_sd": 2.0,
        "trend": 0.0, "level": 20.0, "amplitude": 15.0, "weekly_amp": 0.0,
        "ar_coef": 0.6, "slot_sd": 2.0, "seasonal_coef": 0.0,
    },
    "train_fraction": 0.8,
    "keep_fraction": 1.0,
    "keep_mode": "last",
    "kds_fit_on": "train",
    "kds": {"variant": "graph"},
    "dnn": {"kind": "mlp", "hidden": [32, 16], "output_gain": 0.1},
    "train": {
        "learning_rate": 0.02, "batch_size": 32, "max_epochs": 30,
        "plateau_patience": 20, "plateau_min_delta": 1e-5,
    },
    "w": 48,
    "h": 1,
    "seeds": [0, 1, 2, 3, 4],
}


def _check_types(d: dict, schema: dict, path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(d).__name__}")
    for key, value in d.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if want is int and isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected int, got bool")
        if not isinstance(value, want):
            names = want.__name__ if isinstance(want, type) else "/".join(t.__name__ for t in want)
            raise ConfigError(f"{path}.{key}: expected {names}, got {type(value).__name__}")


def _check_kds(d: dict, path: str, depth: int = 0) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    variant = d.get("variant", "graph")
    if variant not in _KDS:
        raise ConfigError(f"{path}.variant: unknown KDS variant {variant!r}")
    _check_types(d, _KDS[variant], path)
    if variant == "graph" and "rule" in d:
        _check_types(d["rule"], _RULE, f"{path}.rule")
    if variant == "noisy":
        if depth:
            raise ConfigError(f"{path}: noisy KDS may not be nested")
        if d.get("noise_sd", 0) < 0:
            raise ConfigError(f"{path}.noise_sd: must be >= 0")
        _check_kds(d.get("inner", {"variant": "graph"}), f"{path}.inner", depth + 1)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("kds",):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    case_label: str
    data: Dict[str, Any]
    train_fraction: float
    keep_fraction: float
    keep_mode: str
    kds_fit_on: str
    kds: Dict[str, Any]
    dnn: Dict[str, Any]
    train: Dict[str, Any]
    w: int
    h: int
    seeds: tuple

    @classmethod
    def from_dict(cls, raw: dict, path: str = "case") -> "ExperimentConfig":
        _check_types(raw, _TOP, path)
        d = _merge(DEFAULTS, raw)
        source = d["data"].get("source")
        if source == "csv":
            data = {k: v for k, v in d["data"].items() if k in _DATA_CSV}
            extra = set(raw.get("data", {})) - set(_DATA_CSV)
            if extra:
                raise ConfigError(f"{path}.data.{sorted(extra)[0]}: unknown key for csv source")
            if "path" not in data:
                raise ConfigError(f"{path}.data.path: required for csv source")
            d["data"] = data
        elif source == "synthetic":
            _check_types(d["data"], _DATA_SYNTHETIC, f"{path}.data")
        else:
            raise ConfigError(f"{path}.data.source: must be 'synthetic' or 'csv', got {source!r}")
        _check_kds(d["kds"], f"{path}.kds")
        _check_types(d["dnn"], _DNN, f"{path}.dnn")
        if d["dnn"].get("kind") not in ("mlp", "tcn"):
            raise ConfigError(f"{path}.dnn.kind: must be 'mlp' or 'tcn'")
        _check_types(d["train"], _TRAIN, f"{path}.train")
        if not 0 < d["train_fraction"] < 1:
            raise ConfigError(f"{path}.train_fraction: must lie in (0, 1)")
        if not 0 < d["keep_fraction"] <= 1:
            raise ConfigError(f"{path}.keep_fraction: must lie in (0, 1]")
        if d["keep_mode"] not in ("last", "first"):
            raise ConfigError(f"{path}.keep_mode: must be 'last' or 'first'")
        if d["kds_fit_on"] not in ("train", "reduced"):
            raise ConfigError(f"{path}.kds_fit_on: must be 'train' or 'reduced'")
        if d["dnn"].get("output_gain", 0.0) < 0:
            raise ConfigError(f"{path}.dnn.output_gain: must be >= 0")
        if not d["seeds"] or not all(isinstance(s, int) for s in d["seeds"]):
            raise ConfigError(f"{path}.seeds: need a non-empty list of integers")
        if d["w"] < 0 or d["h"] < 1:
            raise ConfigError(f"{path}.w/h: need w >= 0 and h >= 1")
        try:
            TrainConfig(**d["train"])
        except ValueError as exc:
            raise ConfigError(f"{path}.train: {exc}") from None
        d["seeds"] = tuple(d["seeds"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in _TOP}
        d["seeds"] = list(self.seeds)
        return d

    def arch(self) -> PredictorArch:
        width, h = self.w + 1 + self.h, self.h
        if self.dnn["kind"] == "mlp":
            return PredictorArch.mlp(width, *self.dnn.get("hidden", [32, 16]), h)
        return PredictorArch.tcn(
            width, h, tuple(self.dnn.get("channels", [8] * 6)), self.dnn.get("kernel_size", 2)
        )


# ---------------------------------------------------------------- runs


def load_series(cfg: ExperimentConfig, seed: int) -> Series:
    d = cfg.data
    if d["source"] == "csv":
        return load_csv(d["path"], d.get("period", 48))
    params = {k: v for k, v in d.items() if k not in ("source", "seed")}
    data_seed = seed if d.get("seed") is None else d["seed"]
    return generate_synthetic(seed=data_seed, **params)


def build_kds(cfg: ExperimentConfig, seed: int) -> KDSBase:
    spec = copy.deepcopy(cfg.kds)
    if spec.get("variant") == "noisy" and spec.get("seed") is None:
        spec["seed"] = seed
    return make_kds(spec)


@dataclass
class SeedRun:
    seed: int
    metrics: Dict[str, MetricsReport]
    runtime: float
    predictions: Optional[Dict[str, np.ndarray]] = None
    truth: Optional[np.ndarray] = None
    error: Optional[str] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def run_seed(cfg: ExperimentConfig, seed: int, series: Optional[Series] = None) -> SeedRun:
    """One replicate of the full pipeline.

    The KDS is fitted on the whole training slice (``kds_fit_on="train"``)
    or on the reduced one; the networks only ever see the reduced slice.
    Everything is fitted before the held-out slice is first read.
    """
    t0 = time.perf_counter()
    series = load_series(cfg, seed) if series is None else series
    w, h = cfg.w, cfg.h
    train, test = split_chronological(series, cfg.train_fraction)
    cut = len(train)
    reduced = reduce_training(train, cfg.keep_fraction, cfg.keep_mode)

    kds = build_kds(cfg, seed).fit(train if cfg.kds_fit_on == "train" else reduced)
    train = reduced
    first = kds.first_valid_sample(w)
    train_kds, skipped = kds.predict_series_checked(train, w, h, first)
    train_samples = attach_kds(make_samples(train, w, h)[first:], train_kds, kds)
    # targets of the test samples are exactly the held-out observations
    test_first = cut - (w + 1)
    if test_first < 0 or test_first + w + 1 < kds.min_history_:
        raise ValueError("not enough history before the test slice")

    tcfg = TrainConfig(seed=seed, **cfg.train)
    p0 = init_predictor(cfg.arch(), seed, cfg.dnn.get("output_gain", 1.0))
    # data-only baseline: the same network with the KDS inputs held at zero
    zeros = np.zeros_like(train_samples.kds_pred)
    dnn = fit_arrays(p0, fuse_input(train_samples.inputs, zeros), train_samples.targets, tcfg)
    kenn = train_kenn(KennModel(p0, w, h, kds), train_samples, tcfg)

    test_kds = kds.predict_series(series, w, h, test_first)
    test_samples = attach_kds(make_samples(series, w, h)[test_first:], test_kds, kds)

    preds = {
        "DNN": unscale_samples(
            forward(dnn.predictor, fuse_input(test_samples.inputs, np.zeros_like(test_samples.kds_pred))),
            test_samples,
        ),
        "KDS": test_kds,
        "KENN": kenn_predict(kenn.model, test_samples),
    }
    truth = make_samples(series, w, h)[test_first:].targets
    metrics = {m: MetricsReport.score(m, preds[m], truth) for m in MODELS}
    diag = {
        "n_train_samples": len(train_samples),
        "n_test_samples": len(test_samples),
        "first_test_index": cut,
        "rule_skipped": int(skipped),
        "dnn_epochs": len(dnn.loss_history),
        "kenn_epochs": len(kenn.loss_history),
    }
    if hasattr(kds, "graph_"):
        diag["graph_lags"] = list(kds.graph_.connected_lags)
    return SeedRun(seed, metrics, time.perf_counter() - t0, preds, truth, diagnostics=diag)


@dataclass
class CaseReport:
    case_label: str
    runs: List[SeedRun]
    config: dict
    runtime: float

    def mse(self, model: str) -> List[float]:
        return [r.metrics[model].mse for r in self.runs if r.error is None]

    def median_mse(self, model: str) -> float:
        vals = self.mse(model)
        return statistics.median(vals) if vals else float("nan")

    @property
    def failed(self) -> List[SeedRun]:
        return [r for r in self.runs if r.error is not None]


def _run_seed_safe(cfg: ExperimentConfig, seed: int) -> SeedRun:
    try:
        return run_seed(cfg, seed)
    except Exception as exc:  # recorded per seed; the case fails only if all seeds do
        logger.warning("%s seed %d failed: %s", cfg.case_label, seed, exc)
        return SeedRun(seed, {}, 0.0, error=f"{type(exc).__name__}: {exc}")


def run_case(cfg: ExperimentConfig, jobs: int = 1) -> CaseReport:
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            runs = list(pool.map(_run_seed_safe, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        runs = [_run_seed_safe(cfg, s) for s in cfg.seeds]
    if all(r.error is not None for r in runs):
        raise RuntimeError(f"{cfg.case_label}: every seed failed; first error: {runs[0].error}")
    return CaseReport(cfg.case_label, runs, cfg.to_dict(), time.perf_counter() - t0)


# ---------------------------------------------------------------- suites


def load_suite(path) -> List[ExperimentConfig]:
    """Parse a suite file: optional ``defaults`` merged into every entry of ``cases``."""
    path = Path(path)
    if not path.exists():
        builtin = Path(__file__).parent / "suites" / f"{path.name.removesuffix('.yaml')}.yaml"
        if not builtin.exists():
            raise FileNotFoundError(f"no such suite file: {path}")
        path = builtin
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: suite must be a mapping with a 'cases' list")
    unknown = set(doc) - {"suite", "description", "defaults", "cases"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    cases = doc.get("cases")
    if not isinstance(cases, list) or not cases:
        raise ConfigError("cases: a suite needs a non-empty list of cases")
    defaults = doc.get("defaults") or {}
    if not isinstance(defaults, dict):
        raise ConfigError("defaults: expected a mapping")
    return [
        ExperimentConfig.from_dict(_merge(defaults, c) if isinstance(c, dict) else c, f"cases[{i}]")
        for i, c in enumerate(cases)
    ]


def run_suite(path, jobs: int = 1) -> List[CaseReport]:
    return [run_case(cfg, jobs) for cfg in load_suite(path)]


def summary_table(reports: Sequence[CaseReport]) -> str:
    """Human-readable median MSE per case, one row per case."""
    width = max(len("Description"), *(len(r.case_label) for r in reports))
    lines = [f"{'Description':<{width}} | {'DNN':>9} | {'KDS':>9} | {'KENN':>9}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        cells = " | ".join(f"{r.median_mse(m):9.4f}" for m in MODELS)
        lines.append(f"{r.case_label:<{width}} | {cells}")
    return "\n".join(lines)


def report_rows(reports: Sequence[CaseReport], include_runtime: bool = True) -> List[list]:
    rows = []
    for rep in reports:
        for run in rep.runs:
            for model in MODELS:
                if run.error is not None:
                    rows.append([rep.case_label, model, run.seed, "nan", "nan", "error"])
                    continue
                m = run.metrics[model]
                rt = f"{run.runtime:.3f}" if include_runtime else ""
                rows.append([rep.case_label, model, run.seed, repr(m.mse), repr(m.mae), rt])
    return rows


def emit_report(reports: Sequence[CaseReport], path=None, fmt: str = "csv", include_runtime: bool = True) -> str:
    """Write the per-seed report; also returns the text. ``fmt`` is ``csv`` or ``text``."""
    if not reports:
        raise ValueError("nothing to report")
    rows = report_rows(reports, include_runtime)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(rows)
        text = buf.getvalue()
    elif fmt in ("text", "structured-text"):
        lines = []
        for rep in reports:
            lines.append(f"[{rep.case_label}]")
            for row in rows:
                if row[0] == rep.case_label:
                    lines.append(
                        f"model={row[1]} seed={row[2]} mse={row[3]} mae={row[4]} runtime={row[5]}"
                    )
            lines.append(
                "median " + " ".join(f"{m}={rep.median_mse(m)!r}" for m in MODELS)
            )
            lines.append("")
        text = "\n".join(lines)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
    return text


def predictions_csv(report: CaseReport) -> str:
    """Per-observation test predictions (first step of each horizon), for overlay plots.

    ``index`` is the position of the forecast target in the full series.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "index", "truth", *MODELS])
    for run in report.runs:
        if run.error is not None:
            continue
        base = run.diagnostics.get("first_test_index", 0)
        for i, y in enumerate(run.truth[:, 0]):
            writer.writerow([run.seed, base + i, repr(float(y)), *(repr(float(run.predictions[m][i, 0])) for m in MODELS)])
    return buf.getvalue()


def calibrate_noise_sd(
    base: ExperimentConfig, target_ratio: float = 1.15, grid: Optional[Sequence[float]] = None
) -> Dict[str, float]:
    """Pick the KDS noise level whose median noisy-KDS MSE is closest to
    ``target_ratio`` times the median DNN MSE of ``base``.

    Adding independent noise of s.d. ``s`` raises the KDS MSE by ``s**2`` in
    expectation, so the closed-form guess ``sqrt(ratio * dnn - kds)`` seeds
    the search grid.
    """
    rep = run_case(base)
    dnn, kds = rep.median_mse("DNN"), rep.median_mse("KDS")
    guess = float(np.sqrt(max(target_ratio * dnn - kds, 0.0)))
    grid = list(grid) if grid is not None else [guess * f for f in (0.8, 0.9, 1.0, 1.1, 1.2)]
    best = None
    for sd in grid:
        errs = []
        for seed in base.seeds:
            series = load_series(base, seed)
            train, _ = split_chronological(series, base.train_fraction)
            cut = len(train)
            if base.kds_fit_on == "reduced":
                train = reduce_training(train, base.keep_fraction, base.keep_mode)
            kds_model = make_kds({"variant": "noisy", "noise_sd": sd, "seed": seed, "inner": base.kds}).fit(train)
            pred = kds_model.predict_series(series, base.w, base.h, cut - base.w - 1)
            truth = make_samples(series, base.w, base.h)[cut - base.w - 1 :].targets
            errs.append(float(np.mean((pred - truth) ** 2)))
        ratio = statistics.median(errs) / dnn
        if best is None or abs(ratio - target_ratio) < abs(best["ratio"] - target_ratio):
            best = {"noise_sd": sd, "ratio": ratio, "kds_mse": statistics.median(errs)}
    best.update(dnn_mse=dnn, clean_kds_mse=kds)
    return best
