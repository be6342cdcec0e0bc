"""Derive the noisy-KDS standard deviation shipped in the table1_analog suite.

Runs the full-data setting with the default configuration, then sweeps the
noise level around the closed-form guess sqrt(1.15 * dnn - kds) and keeps the
one whose median noisy-KDS MSE lands closest to 1.15 times the median DNN MSE.

    python scripts/calibrate_noise.py [--ratio 1.15] [--seeds 0 1 2 3 4]
"""
import argparse
import json

from kenn.experiments import ExperimentConfig, calibrate_noise_sd


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratio", type=float, default=1.15)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--grid", type=float, nargs="*", help="explicit noise levels to try")
    args = ap.parse_args(argv)
    base = ExperimentConfig.from_dict({"seeds": args.seeds})
    print(json.dumps(calibrate_noise_sd(base, args.ratio, args.grid), indent=2))


if __name__ == "__main__":
    main()
