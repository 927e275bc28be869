"""Command-line entry points for the experiment pipeline.

Every command takes a JSON config and an output directory; all randomness
descends from ``sampling.seed`` through fixed stream labels, so rerunning a
command with the same config reproduces its outputs bit for bit. Exit codes:
0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .archive import atomic_write_text, load_series, save_series, sha256_path
from .config import (
    STREAM_CV,
    STREAM_FIT,
    STREAM_TRAIN,
    STREAM_VALID,
    ConfigError,
    RunConfig,
    derive_seed,
    load_config,
)
from .correct import VALIDATION_CSV_HEADER, correct_series, evaluate_correction, prediction_interval_report
from .gp import cross_validate, fit, linear_baseline, load_model, save_model
from .rollout import read_samples_csv, sample_errors, write_samples_csv
from .solver import solve_qvi

__all__ = [
    "main",
    "cmd_solve",
    "cmd_sample",
    "cmd_fit",
    "cmd_validate",
    "cmd_correct",
    "cmd_sweep",
    "cmd_pipeline",
]

logger = logging.getLogger("reachgp")

VALUE_ARCHIVE = "value_archive"
TRAIN_SAMPLES = "train_samples.csv"
FIT_REPORT = "fit_report.csv"
MODELS_DIR = "models"
VALIDATION_REPORT = "validation_report.csv"
CORRECTED_ARCHIVE = "corrected_archive"
CORRECTION_REPORT = "correction_report.json"
SWEEP_REPORT = "sweep_report.csv"
RUN_MANIFEST = "run_manifest.json"

FIT_REPORT_HEADER = ["model", "cv_rmse", "params", "seed"]
SWEEP_REPORT_HEADER = ["v_e", "v_p", "gpr_cv_rmse", "uncorrected_rmse", "status"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    """Solve the tube equation and archive the value series."""
    series = solve_qvi(cfg.problem, cfg.grid, cfg.solver)
    dest = out / VALUE_ARCHIVE
    save_series(series, dest)
    logger.info("solve: %d slices on %s nodes -> %s", series.n_slices, cfg.grid.shape, dest)
    return {"outputs": [VALUE_ARCHIVE], "n_slices": series.n_slices}


def cmd_sample(cfg: RunConfig, out: Path, archive: Path | None = None) -> dict:
    """Draw training error samples against the archived value function."""
    series = load_series(archive or out / VALUE_ARCHIVE)
    seed = derive_seed(cfg.sampling.seed, STREAM_TRAIN)
    drawn = sample_errors(
        series,
        cfg.sampling.n_train,
        seed,
        time_range=cfg.sampling.time_range,
        dt=cfg.rollout_dt,
    )
    dest = out / TRAIN_SAMPLES
    partial = dest.with_name(dest.name + ".partial")
    write_samples_csv(drawn.samples, partial)
    os.replace(partial, dest)
    logger.info(
        "sample: %d draws (rms %0.5f, %d resampled) -> %s",
        len(drawn), drawn.rms_error(), drawn.resampled, dest,
    )
    return {"outputs": [TRAIN_SAMPLES], "seed": seed, "resampled": drawn.resampled,
            "rms_error": drawn.rms_error()}


def cmd_fit(cfg: RunConfig, out: Path, samples_path: Path | None = None) -> dict:
    """Cross-validate and fit every configured model family."""
    samples = read_samples_csv(samples_path or out / TRAIN_SAMPLES)
    cv_seed = derive_seed(cfg.sampling.seed, STREAM_CV)
    fit_seed = derive_seed(cfg.sampling.seed, STREAM_FIT)
    rows: list[list[str]] = []
    outputs = []
    failures: dict[str, str] = {}
    for kind in cfg.gp.kernels:
        try:
            cv = cross_validate(samples, cfg.gp.cv_folds, kind, cv_seed, cfg.gp.fit_options(fit_seed))
            model = fit(samples, kind, cfg.gp.fit_options(fit_seed))
        except Exception as exc:  # recorded; command fails only if all fail
            failures[kind] = str(exc)
            logger.warning("fit: %s failed: %s", kind, exc)
            continue
        model.provenance.update(
            {
                "spec": cfg.problem.to_dict(),
                "n_train": len(samples),
                "cv_rmse": cv.rmse,
                "small_n": len(samples) < 50,
            }
        )
        dest = out / MODELS_DIR / kind
        save_model(model, dest)
        outputs.append(f"{MODELS_DIR}/{kind}")
        params = {
            "length_scale": model.kernel.length_scale,
            "signal_variance": model.kernel.signal_variance,
            "alpha": model.kernel.alpha,
            "noise_variance": model.noise_variance,
            "beta": model.beta,
            "small_n": len(samples) < 50,
        }
        rows.append([kind, _fmt(cv.rmse), json.dumps(params, sort_keys=True), str(cv_seed)])
        logger.info("fit: %s cv_rmse=%0.6f", kind, cv.rmse)
    if not rows:
        raise RuntimeError(f"every model family failed to fit: {failures}")
    ols = linear_baseline(samples, cfg.gp.cv_folds, cv_seed)
    rows.append([
        "linear",
        _fmt(ols.cv_rmse),
        json.dumps({"coef": list(ols.coef), "rank_deficient": ols.rank_deficient}, sort_keys=True),
        str(cv_seed),
    ])
    logger.info("fit: linear cv_rmse=%0.6f", ols.cv_rmse)
    _write_csv(out / FIT_REPORT, FIT_REPORT_HEADER, rows)
    outputs.append(FIT_REPORT)
    return {"outputs": outputs, "cv_seed": cv_seed, "fit_seed": fit_seed, "failures": failures}


def _resolve_model(cfg: RunConfig, out: Path, model: Path | None) -> Path:
    return model if model is not None else out / MODELS_DIR / cfg.gp.report_kernel()


def cmd_validate(
    cfg: RunConfig, out: Path, archive: Path | None = None, model: Path | None = None
) -> dict:
    """Score fresh rollouts against the model's 95% prediction intervals."""
    series = load_series(archive or out / VALUE_ARCHIVE)
    gp_model = load_model(_resolve_model(cfg, out, model))
    seed = derive_seed(cfg.sampling.seed, STREAM_VALID)
    rows, coverage = prediction_interval_report(
        series, gp_model, cfg.sampling.n_valid, seed, dt=cfg.rollout_dt
    )
    csv_rows = [
        ["sample"] + [_fmt(r[k]) for k in ("x1", "x2", "x3", "t", "v_tilde", "v_rollout", "v_hat", "std")]
        + [str(r["in_interval"])]
        for r in rows
    ]
    csv_rows.append(["coverage"] + [""] * 8 + [_fmt(coverage)])
    _write_csv(out / VALIDATION_REPORT, ["kind"] + VALIDATION_CSV_HEADER, csv_rows)
    logger.info("validate: coverage %0.3f over %d samples", coverage, len(rows))
    return {"outputs": [VALIDATION_REPORT], "seed": seed, "coverage": coverage}


def cmd_correct(
    cfg: RunConfig, out: Path, archive: Path | None = None, model: Path | None = None
) -> dict:
    """Apply the error correction and compare both series on fresh draws."""
    series = load_series(archive or out / VALUE_ARCHIVE)
    gp_model = load_model(_resolve_model(cfg, out, model))
    corrected = correct_series(series, gp_model)
    save_series(corrected, out / CORRECTED_ARCHIVE)
    seed = derive_seed(cfg.sampling.seed, STREAM_VALID)
    report = evaluate_correction(series, corrected, cfg.sampling.n_valid, seed, dt=cfg.rollout_dt)
    atomic_write_text(out / CORRECTION_REPORT, report.to_json())
    logger.info(
        "correct: rmse %0.5f -> %0.5f (%d flips)",
        report.rmse_uncorrected, report.rmse_corrected, report.flipped_membership_count,
    )
    return {
        "outputs": [CORRECTED_ARCHIVE, CORRECTION_REPORT],
        "seed": seed,
        "rmse_uncorrected": report.rmse_uncorrected,
        "rmse_corrected": report.rmse_corrected,
    }


def cmd_sweep(cfg: RunConfig, out: Path, archive: Path | None = None) -> dict:
    """Re-estimate errors under perturbed speeds, keeping the archive fixed.

    Every pair samples with the training stream so the nominal pair
    reproduces the nominal report row; only the rollout dynamics change.
    """
    series = load_series(archive or out / VALUE_ARCHIVE)
    train_seed = derive_seed(cfg.sampling.seed, STREAM_TRAIN)
    cv_seed = derive_seed(cfg.sampling.seed, STREAM_CV)
    fit_seed = derive_seed(cfg.sampling.seed, STREAM_FIT)
    kind = cfg.gp.report_kernel()
    rows = []
    failed = 0
    for v_e in cfg.sweep.v_e_values:
        for v_p in cfg.sweep.v_p_values:
            try:
                perturbed = cfg.problem.with_speeds(v_e, v_p)
                drawn = sample_errors(
                    series,
                    cfg.sampling.n_train,
                    train_seed,
                    time_range=cfg.sampling.time_range,
                    dt=cfg.rollout_dt,
                    sim_spec=perturbed,
                )
                cv = cross_validate(drawn, cfg.gp.cv_folds, kind, cv_seed, cfg.gp.fit_options(fit_seed))
                rows.append([_fmt(v_e), _fmt(v_p), _fmt(cv.rmse), _fmt(drawn.rms_error()), "ok"])
                logger.info("sweep: v_e=%s v_p=%s cv_rmse=%0.5f", v_e, v_p, cv.rmse)
            except Exception as exc:  # keep sweeping; the row records the failure
                rows.append([_fmt(v_e), _fmt(v_p), "", "", f"error: {exc}"])
                failed += 1
                logger.warning("sweep: pair (%s, %s) failed: %s", v_e, v_p, exc)
    _write_csv(out / SWEEP_REPORT, SWEEP_REPORT_HEADER, rows)
    return {"outputs": [SWEEP_REPORT], "seed": train_seed, "failed_pairs": failed}


_PIPELINE = (
    ("solve", lambda cfg, out: cmd_solve(cfg, out)),
    ("sample", lambda cfg, out: cmd_sample(cfg, out)),
    ("fit", lambda cfg, out: cmd_fit(cfg, out)),
    ("validate", lambda cfg, out: cmd_validate(cfg, out)),
    ("correct", lambda cfg, out: cmd_correct(cfg, out)),
)


def cmd_pipeline(cfg: RunConfig, out: Path) -> dict:
    """Run solve, sample, fit, validate, and correct, then write a manifest."""
    stages = []
    outputs: list[str] = []
    for name, fn in _PIPELINE:
        try:
            info = fn(cfg, out)
        except Exception as exc:
            raise RuntimeError(f"pipeline stage {name!r} failed: {exc}") from exc
        outputs.extend(info.pop("outputs"))
        stages.append({"stage": name, **info})
    manifest = {
        "tool": "reachgp",
        "version": __version__,
        "seed": cfg.sampling.seed,
        "config": cfg.raw,
        "stages": stages,
        "outputs": {rel: sha256_path(out / rel) for rel in outputs},
    }
    atomic_write_text(out / RUN_MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"outputs": outputs + [RUN_MANIFEST]}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachgp",
        description="Reach-avoid tube solve, rollout error sampling, GP correction.",
        epilog="example: reachgp pipeline --config configs/default.json --out out",
    )
    parser.add_argument("--version", action="version", version=f"reachgp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the tube equation and write the value archive"),
        ("sample", "draw training error samples from rollouts"),
        ("fit", "cross-validate and fit the regression models"),
        ("validate", "check prediction-interval coverage on fresh draws"),
        ("correct", "write the corrected archive and comparison report"),
        ("sweep", "re-estimate errors over a grid of perturbed speeds"),
        ("pipeline", "run solve, sample, fit, validate, correct"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override sampling.seed")
        if name in ("sample", "validate", "correct", "sweep"):
            p.add_argument("--archive", type=Path, default=None, help="value archive (default: <out>/value_archive)")
        if name in ("validate", "correct"):
            p.add_argument("--model", type=Path, default=None, help="model archive (default: <out>/models/<kernel>)")
        if name == "fit":
            p.add_argument("--samples", type=Path, default=None, help="samples CSV (default: <out>/train_samples.csv)")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.sampling = replace(cfg.sampling, seed=args.seed)
            cfg.raw = {**cfg.raw, "sampling": {**cfg.raw["sampling"], "seed": args.seed}}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "solve":
            cmd_solve(cfg, out)
        elif args.command == "sample":
            cmd_sample(cfg, out, archive=args.archive)
        elif args.command == "fit":
            cmd_fit(cfg, out, samples_path=args.samples)
        elif args.command == "validate":
            cmd_validate(cfg, out, archive=args.archive, model=args.model)
        elif args.command == "correct":
            cmd_correct(cfg, out, archive=args.archive, model=args.model)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, archive=args.archive)
        else:
            cmd_pipeline(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
