"""Command-line pipeline: simulate record files, analyze them, sweep curves, fit datasets."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .correlator import CountTable, accumulate, estimate_metrics, report_text
from .event_sim import run_session
from .model_fit import (DEFAULT_BOUNDS, covariance_csv, dataset_from_csv, fit,
                        fit_result_text, predict_curves)
from .params import (DetectionConfig, DetectionMode, ModelParams, SessionSpec,
                     TrialSchedule, params_from_text, parse_keyvalues, schedule_from_text)
from .records_io import BINARY, CSV, RecordFormatError, read_records, write_records

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


def _load_params(path: str) -> tuple[ModelParams, TrialSchedule]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOError(f"cannot read params file {path}: {exc}") from exc
    try:
        return params_from_text(text), schedule_from_text(text)
    except ValueError as exc:
        raise UsageError(f"invalid params file {path}: {exc}") from exc


def _write_manifest(out_path: str, command: str, config: dict, seed, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 6),
        "outputs": [out_path],
    }
    Path(out_path + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_simulate(args) -> int:
    started = time.monotonic()
    params, schedule = _load_params(args.params)
    mode = DetectionMode(args.mode)
    spec = SessionSpec(params=params, config=DetectionConfig(mode), schedule=schedule,
                       n_trials=args.trials, seed=args.seed)
    stream = run_session(spec)
    fmt = BINARY if args.format == "bin" else CSV
    with open(args.out, "wb") as sink:
        n_bytes = write_records(stream, sink, fmt)
    _write_manifest(args.out, "simulate",
                    {"params_file": args.params, "mode": args.mode,
                     "trials": args.trials, "format": args.format,
                     "records": len(stream), "bytes": n_bytes},
                    args.seed, started)
    print(f"wrote {len(stream)} records ({n_bytes} bytes) to {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    started = time.monotonic()
    try:
        with open(args.records, "rb") as source:
            stream = read_records(source)
    except OSError as exc:
        raise IOError(f"cannot read {args.records}: {exc}") from exc
    table = accumulate(CountTable(mode=stream.mode), stream)
    metrics = estimate_metrics(table, eta2=args.eta2, method=args.error_method,
                               seed=args.seed)
    text = report_text(metrics)
    if args.out:
        Path(args.out).write_text(text)
        _write_manifest(args.out, "analyze",
                        {"records_file": args.records, "eta2": args.eta2,
                         "error_method": args.error_method}, args.seed, started)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.monotonic()
    params, _ = _load_params(args.params)
    if not 0.0 < args.chi_min < args.chi_max < 1.0:
        raise UsageError("need 0 < chi-min < chi-max < 1")
    if args.points < 1:
        raise UsageError("points must be >= 1")
    if args.points == 1:
        grid = np.array([args.chi_min])
    else:
        grid = np.geomspace(args.chi_min, args.chi_max, args.points)
    curves = predict_curves(params, grid)
    lines = ["chi,p1,g12,qc,p12,w"]
    for c in curves:
        lines.append(f"{c.chi!r},{c.p1!r},{c.g12!r},{c.qc!r},{c.p12!r},{c.w!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    _write_manifest(args.out, "sweep",
                    {"params_file": args.params, "chi_min": args.chi_min,
                     "chi_max": args.chi_max, "points": args.points},
                    None, started)
    print(f"wrote {len(curves)} sweep points to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    started = time.monotonic()
    try:
        text = Path(args.dataset).read_text()
    except OSError as exc:
        raise IOError(f"cannot read dataset {args.dataset}: {exc}") from exc
    try:
        dataset = dataset_from_csv(text)
    except ValueError as exc:
        raise UsageError(f"invalid dataset: {exc}") from exc

    bounds = None
    if args.bounds:
        try:
            kv = parse_keyvalues(Path(args.bounds).read_text())
        except OSError as exc:
            raise IOError(f"cannot read bounds file {args.bounds}: {exc}") from exc
        bounds = {}
        for key, value in kv.items():
            name, _, which = key.rpartition("_")
            if which not in ("min", "max") or name not in DEFAULT_BOUNDS:
                raise UsageError(f"bad bounds key {key!r} (expect <param>_min / <param>_max)")
            lo, hi = bounds.get(name, DEFAULT_BOUNDS[name])
            bounds[name] = (float(value), hi) if which == "min" else (lo, float(value))

    base = _load_params(args.params)[0] if args.params else ModelParams()
    result = fit(dataset, base=base, bounds=bounds, seed=args.seed,
                 n_starts=args.starts)
    out = Path(args.out)
    out.write_text(fit_result_text(result))
    out.with_suffix(out.suffix + ".cov.csv").write_text(covariance_csv(result))

    p1s = [pt.p1 for pt in dataset.points]
    grid = np.geomspace(max(min(p1s) * 0.5, 1e-8), 0.9, 60)
    from .model_fit import chi_from_p1
    chis = chi_from_p1(result.params, grid)
    chis = chis[np.isfinite(chis)]
    curves = predict_curves(result.params, chis) if len(chis) else []
    overlay = ["chi,p1,g12,qc,p12,w"]
    for c in curves:
        overlay.append(f"{c.chi!r},{c.p1!r},{c.g12!r},{c.qc!r},{c.p12!r},{c.w!r}")
    out.with_suffix(out.suffix + ".overlay.csv").write_text("\n".join(overlay) + "\n")

    _write_manifest(args.out, "fit",
                    {"dataset": args.dataset, "bounds_file": args.bounds,
                     "starts": args.starts, "objective": result.objective,
                     "flags": list(result.flags)}, args.seed, started)
    sys.stdout.write(fit_result_text(result))
    if "under-determined" in result.flags:
        print("warning: dataset is under-determined; parameter values are not unique",
              file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlczsim",
                                     description="Heralded photon-pair source simulator and analyzer")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a detection record file")
    p.add_argument("--params", required=True, help="model params key-value file")
    p.add_argument("--trials", type=int, default=44000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["single", "split"], default="single")
    p.add_argument("--format", choices=["bin", "csv"], default="bin")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="estimate metrics from a record file")
    p.add_argument("records", help="record file (PDR1 binary or CSV)")
    p.add_argument("--eta2", type=float, default=0.25)
    p.add_argument("--error-method", choices=["delta", "bootstrap"], default="delta")
    p.add_argument("--seed", type=int, default=0, help="bootstrap resampling seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="emit model curves over a drive-strength grid")
    p.add_argument("--params", required=True)
    p.add_argument("--chi-min", type=float, default=1e-4)
    p.add_argument("--chi-max", type=float, default=0.3)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit a global parameter set to a measured dataset")
    p.add_argument("dataset", help="dataset CSV")
    p.add_argument("--params", default=None, help="base params file for fixed values")
    p.add_argument("--bounds", default=None, help="key-value file of <param>_min/<param>_max")
    p.add_argument("--starts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecordFormatError, IOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
