"""Command-line interface.

Subcommands: `sample` (Monte Carlo a config grid to CSV), `predict`
(closed-form rows only), `calibrate` (score conventions against the
single-layer law and write calibration.json), `verify` (named invariant
checks), and `figure` (run a named grid and render its SVG).  Exit codes:
0 success, 1 failed verification, 2 bad config or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .analytics import DEFAULT_SETTINGS_GRID, calibrate_single_layer
from .checks import run_checks
from .experiments import (
    FIGURE_TAGS,
    ConfigError,
    ExperimentConfig,
    config_to_dict,
    load_config,
    parse_config,
    run_figure,
    run_predict,
    run_sample,
)

DEFAULT_CALIBRATION_SAMPLES = 2 * 10**4
DEFAULT_CALIBRATION_SEED = 7
CALIBRATION_RANGE = tuple(range(2, 11))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpgrad",
        description="Gradient-variance experiments for layered Pauli-rotation circuits.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sample = sub.add_parser("sample", help="Monte Carlo a config grid to CSV")
    sample.add_argument("--config", required=True, help="config or manifest JSON")
    sample.add_argument("--samples", type=int, help="override n_samples")
    sample.add_argument("--seed", type=int, help="override master_seed")
    sample.add_argument("--workers", type=int, help="override worker count")
    sample.add_argument("--out", default="out", help="output directory")
    sample.add_argument(
        "--prefactor",
        choices=("eq14", "figure1"),
        default="eq14",
        help="single-layer prediction prefactor",
    )

    predict = sub.add_parser("predict", help="emit closed-form rows for a config")
    predict.add_argument("--config", required=True, help="config or manifest JSON")
    predict.add_argument("--out", default="out", help="output directory")
    predict.add_argument("--c0", type=float, help="deep-law constant override")

    calibrate = sub.add_parser(
        "calibrate", help="score conventions against the single-layer law"
    )
    calibrate.add_argument("--out", default="out", help="output directory")
    calibrate.add_argument(
        "--samples", type=int, default=DEFAULT_CALIBRATION_SAMPLES
    )
    calibrate.add_argument("--seed", type=int, default=DEFAULT_CALIBRATION_SEED)

    verify = sub.add_parser("verify", help="run named self-checks")
    verify.add_argument("--level", choices=("fast", "full"), default="fast")

    figure = sub.add_parser("figure", help="run a named figure grid")
    figure.add_argument("tag", choices=FIGURE_TAGS)
    figure.add_argument("--out", default="out", help="output directory")
    figure.add_argument("--scale", choices=("desk", "paper"), default="desk")
    figure.add_argument("--samples", type=int, help="override samples per point")
    figure.add_argument("--seed", type=int, help="override master seed")
    figure.add_argument("--workers", type=int, default=1)
    figure.add_argument(
        "--n12", action="store_true", help="run the wide (n=12) collapse grid"
    )
    figure.add_argument("--calibration", help="explicit calibration.json path")
    return parser


def _load_with_overrides(args) -> ExperimentConfig:
    config = load_config(args.config)
    data = config_to_dict(config)
    for field, name in (
        ("samples", "n_samples"),
        ("seed", "master_seed"),
        ("workers", "workers"),
    ):
        value = getattr(args, field, None)
        if value is not None:
            data[name] = value
    return parse_config(data)


def _cmd_sample(args) -> int:
    config = _load_with_overrides(args)
    paths = run_sample(config, args.out, prefactor_mode=args.prefactor)
    print(f"wrote {paths.csv} and {paths.manifest}")
    return 0


def _cmd_predict(args) -> int:
    config = load_config(args.config)
    paths = run_predict(config, args.out, c0=args.c0)
    print(f"wrote {paths.csv} and {paths.manifest}")
    return 0


def _cmd_calibrate(args) -> int:
    report = calibrate_single_layer(
        DEFAULT_SETTINGS_GRID, CALIBRATION_RANGE, args.samples, args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "calibration.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    for entry in report.settings:
        print(
            f"{entry.setting.setting_id:<42} matched={str(entry.matched):<5} "
            f"R2={entry.r2:.4f} score={entry.score:.3f}"
        )
    print(f"selected: {report.selected.setting_id}")
    print(f"any_matched: {report.any_matched}")
    print(f"wrote {path} (samples={args.samples}, seed={args.seed})")
    return 0


def _cmd_verify(args) -> int:
    results = run_checks(args.level)
    failed = 0
    for result in results:
        status = " ok " if result.passed else "FAIL"
        print(f"[{status}] {result.name}: {result.detail}")
        failed += not result.passed
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed ({args.level} level)")
    return 0


def _cmd_figure(args) -> int:
    paths = run_figure(
        args.tag,
        args.out,
        scale=args.scale,
        samples=args.samples,
        master_seed=args.seed,
        workers=args.workers,
        n12=args.n12,
        calibration=args.calibration,
    )
    print(f"wrote {paths.csv}, {paths.svg} and {paths.manifest}")
    return 0


_COMMANDS = {
    "sample": _cmd_sample,
    "predict": _cmd_predict,
    "calibrate": _cmd_calibrate,
    "verify": _cmd_verify,
    "figure": _cmd_figure,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
