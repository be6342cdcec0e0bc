"""Command-line entry point (``kenn``).

Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a run
fails at runtime (divergence, every seed failing, unwritable output).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    MODELS,
    ConfigError,
    emit_report,
    load_suite,
    predictions_csv,
    run_case,
    summary_table,
)
from .fusion import KENNForecaster, save_kenn
from .kds import make_kds
from .neural import PredictorArch, TrainConfig, TrainingDiverged, save_predictor
from .stats import pacf
from .timeseries import SeriesError, generate_synthetic, load_csv, mse, split_chronological, write_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

KDS_KINDS = {
    "graph": "graph",
    "naive": "naive_last",
    "zero": "zero",
    "sar": "seasonal_ar",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_or_print(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _kds_from_args(args):
    spec = {"variant": KDS_KINDS[args.kind]}
    if args.kind == "graph":
        spec.update(threshold=args.threshold, abs_threshold=args.abs_threshold)
        if args.max_lag is not None:
            spec["max_lag"] = args.max_lag
    return make_kds(spec)


def _arch_from_args(args) -> PredictorArch:
    if args.arch == "mlp":
        return PredictorArch.mlp(1, *args.hidden, 1)
    return PredictorArch.tcn(1, 1, tuple(args.channels), args.kernel_size)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        plateau_patience=args.patience,
        seed=args.seed,
    )


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    s = generate_synthetic(
        args.n, args.period, seed=args.seed, noise_sd=args.noise_sd, trend=args.trend
    )
    if args.out:
        write_csv(s, args.out)
    else:
        sys.stdout.write("value\n" + "".join(f"{v!r}\n" for v in s.values))
    return EXIT_OK


def cmd_pacf(args) -> int:
    s = load_csv(args.input, args.period)
    prof = pacf(s, args.max_lag)
    rows = [(k, repr(float(prof[k]))) for k in range(1, args.max_lag + 1)]
    _write_or_print(_rows_csv(("lag", "value"), rows), args.out)
    return EXIT_OK


def cmd_kds_forecast(args) -> int:
    s = load_csv(args.input, args.period)
    train, _ = split_chronological(s, args.train_fraction)
    kds = _kds_from_args(args).fit(train)
    first = kds.first_valid_sample(args.w)
    preds = kds.predict_series(s, args.w, args.h, first)
    rows = []
    for i, row in enumerate(preds):
        origin = first + i + args.w + 1
        rows.append((origin, *(repr(float(v)) for v in row)))
    header = ("index", *(f"step{j + 1}" for j in range(args.h)))
    _write_or_print(_rows_csv(header, rows), args.out)
    if args.graph_out:
        if not hasattr(kds, "graph_"):
            raise UsageError("--graph-out needs --kind graph")
        Path(args.graph_out).write_text(kds.graph_.to_csv())
    return EXIT_OK


def _fit_and_score(args, fusion: bool) -> int:
    s = load_csv(args.input, args.period)
    train, _ = split_chronological(s, args.train_fraction)
    kds = _kds_from_args(args) if fusion else make_kds({"variant": "naive_last"})
    est = KENNForecaster(
        kds=kds,
        arch=_arch_from_args(args),
        train_config=_train_config(args),
        w=args.w,
        h=args.h,
        fusion=fusion,
        seed=args.seed,
        output_gain=args.output_gain,
    ).fit(train)
    data = est.samples(s)
    pred = est.predict(s)
    truth = data.targets * (data.scale_max - data.scale_min)[:, None] + data.scale_min[:, None]
    held_out = data.ends + 1 >= len(train)
    score = mse(pred[held_out], truth[held_out])
    print(f"epochs={len(est.loss_history_)} train_loss={est.loss_history_[-1]:.6g} test_mse={score:.6g}")
    if args.out:
        if fusion:
            save_kenn(est.model_, args.out)
        else:
            save_predictor(est.model_, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    return _fit_and_score(args, fusion=False)


def cmd_kenn_train(args) -> int:
    return _fit_and_score(args, fusion=True)


def cmd_suite_run(args) -> int:
    configs = load_suite(args.config)
    reports = [run_case(cfg, args.jobs) for cfg in configs]
    print(summary_table(reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(reports, out / "report.csv", "csv", include_runtime=not args.no_runtime)
        emit_report(reports, out / "report.txt", "text", include_runtime=not args.no_runtime)
        (out / "summary.txt").write_text(summary_table(reports) + "\n")
        for i, rep in enumerate(reports):
            (out / f"predictions_{i}.csv").write_text(predictions_csv(rep))
    if any(rep.failed for rep in reports):
        logging.warning("some seeds failed; see the report for details")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "mse" not in rows[0]:
        raise UsageError(f"{args.input}: not a report CSV")
    cases = {}
    for r in rows:
        cases.setdefault(r["case"], {m: [] for m in MODELS})
        if r["model"] in MODELS and r["mse"] != "nan":
            cases[r["case"]][r["model"]].append(float(r["mse"]))
    width = max(len("Description"), *(len(c) for c in cases))
    print(f"{'Description':<{width}} | " + " | ".join(f"{m:>9}" for m in MODELS))
    for case, vals in cases.items():
        cells = " | ".join(f"{np.median(vals[m]) if vals[m] else float('nan'):9.4f}" for m in MODELS)
        print(f"{case:<{width}} | {cells}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_series_opts(p) -> None:
    p.add_argument("--input", required=True, help="CSV with a 'value' column")
    p.add_argument("--period", type=int, default=48)


def _add_kds_opts(p) -> None:
    p.add_argument("--kind", choices=sorted(KDS_KINDS), default="graph")
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--abs-threshold", action="store_true", help="connect lags on |pacf|")


def _add_window_opts(p) -> None:
    p.add_argument("--w", type=int, default=48, help="window size (the input holds w+1 values)")
    p.add_argument("--h", type=int, default=1, help="forecast horizon")
    p.add_argument("--train-fraction", type=float, default=0.8)


def _add_train_opts(p) -> None:
    p.add_argument("--arch", choices=("mlp", "tcn"), default="mlp")
    p.add_argument("--hidden", type=int, nargs="+", default=[32, 16])
    p.add_argument("--channels", type=int, nargs="+", default=[8] * 6)
    p.add_argument("--kernel-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--output-gain", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="checkpoint path (JSON)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kenn", description="Knowledge-enhanced forecasting toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic seasonal series as CSV")
    p.add_argument("--n", type=int, default=4800)
    p.add_argument("--period", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", type=float, default=2.0)
    p.add_argument("--trend", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pacf", help="partial autocorrelations as lag,value CSV")
    _add_series_opts(p)
    p.add_argument("--max-lag", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pacf)

    p = sub.add_parser("kds", help="knowledge-driven forecasters")
    kds_sub = p.add_subparsers(dest="kds_command", parser_class=_Parser)
    kds_sub.required = True
    q = kds_sub.add_parser("forecast", help="walk-forward KDS forecasts for a series")
    _add_series_opts(q)
    _add_kds_opts(q)
    _add_window_opts(q)
    q.add_argument("--out")
    q.add_argument("--graph-out", help="also dump the lag graph (graph KDS only)")
    q.set_defaults(func=cmd_kds_forecast)

    p = sub.add_parser("train", help="train the data-only network")
    _add_series_opts(p)
    _add_window_opts(p)
    _add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kenn", help="knowledge-fused model")
    kenn_sub = p.add_subparsers(dest="kenn_command", parser_class=_Parser)
    kenn_sub.required = True
    q = kenn_sub.add_parser("train", help="train a KENN model")
    _add_series_opts(q)
    _add_kds_opts(q)
    _add_window_opts(q)
    _add_train_opts(q)
    q.set_defaults(func=cmd_kenn_train)

    p = sub.add_parser("suite", help="experiment suites")
    suite_sub = p.add_subparsers(dest="suite_command", parser_class=_Parser)
    suite_sub.required = True
    q = suite_sub.add_parser("run", help="run every case of a suite file")
    q.add_argument("--config", required=True, help="suite YAML, or a bundled suite name")
    q.add_argument("--out", help="directory for report.csv, report.txt and predictions")
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--no-runtime", action="store_true", help="leave the runtime column empty")
    q.set_defaults(func=cmd_suite_run)

    p = sub.add_parser("report", help="median table from a report CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, SeriesError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"kenn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, RuntimeError, OSError) as exc:
        print(f"kenn: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
