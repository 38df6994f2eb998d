"""Command-line entry point: generate a simulated dataset, train the
forecaster on it, emit probabilistic forecasts for test instances, and
evaluate them. One seed drives every stage, so a full
generate/train/predict/evaluate chain is reproducible end to end.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .building_sim import (
    BuildingSpec,
    Calendar,
    ExcitationSignals,
    generate_mprs_setpoints,
    generate_prbs_windows,
    generate_schedules,
    load_dataset_csv,
    save_dataset_csv,
    simulate,
    synth_weather,
)
from .config import RunConfig, apply_profile, load_config
from .errors import ConfigurationError, ParseError
from .evaluation import (
    export_metrics,
    interval_coverage,
    per_horizon_cvrmse,
    pinball_scores,
    plateau_step,
    read_forecast_dump,
    write_forecast_dump,
)
from .model import ModelConfig, build_model, forward_batch
from .numerics import no_grad
from .pipeline import (
    FUTURE_FEATURES,
    PAST_FEATURES,
    TARGET_FEATURES,
    Scaler,
    build_windows,
    split_chronological,
)
from .training import (
    Hyperparameters,
    fit,
    load_checkpoint,
    make_checkpoint,
    restore_model,
    save_checkpoint,
)


def simulate_dataset(cfg: RunConfig):
    """Run the excitation generators and the thermal model under the
    configured seed."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    cal = Calendar()
    weather = synth_weather(rng, cfg.simulator.days,
                            start=cfg.simulator.start_datetime())
    schedules = generate_schedules(rng, weather.timestamps, cal)
    sp_heat, sp_cool = generate_mprs_setpoints(rng, weather.timestamps, cal)
    window_signal = generate_prbs_windows(rng, len(weather))
    signals = ExcitationSignals(sp_heat, sp_cool, window_signal)
    return simulate(BuildingSpec(), weather, schedules, signals)


def cmd_generate(cfg: RunConfig, out_path: str | None) -> int:
    out = out_path or cfg.paths.dataset
    dataset = simulate_dataset(cfg)
    save_dataset_csv(dataset, out)
    manifest = {
        "seed": cfg.seed,
        "config_sha256": cfg.config_hash(),
        "rows": len(dataset),
        "days": cfg.simulator.days,
        "start": cfg.simulator.start,
        "dataset": os.path.basename(out),
    }
    with open(cfg.paths.manifest, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(dataset)} rows to {out} "
          f"(manifest: {cfg.paths.manifest})")
    return 0


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        n_past=cfg.pipeline.n_past,
        n_future=cfg.pipeline.n_future,
        past_feature_count=len(PAST_FEATURES),
        future_feature_count=len(FUTURE_FEATURES),
        zone_count=len(TARGET_FEATURES),
        rnn_units=cfg.model.rnn_units,
        mha_heads=cfg.model.mha_heads,
        d_model=cfg.model.d_model,
        dropout_rate=cfg.model.dropout_rate,
        quantile_levels=tuple(cfg.model.quantile_levels),
        rng_seed=cfg.seed,
    )


def _windows_and_splits(cfg: RunConfig, dataset, n_past: int, n_future: int):
    windows = build_windows(dataset, n_past=n_past, n_future=n_future,
                            stride=cfg.pipeline.stride,
                            noise_sd=cfg.pipeline.noise_sd,
                            noise_seed=cfg.seed)
    return split_chronological(windows, fractions=cfg.pipeline.fractions)


def cmd_train(cfg: RunConfig, dataset_path: str | None,
              out_path: str | None) -> int:
    dataset = load_dataset_csv(dataset_path or cfg.paths.dataset)
    splits = _windows_and_splits(cfg, dataset, cfg.pipeline.n_past,
                                 cfg.pipeline.n_future)
    params = build_model(_model_config(cfg))
    hyper = Hyperparameters(
        batch_size=cfg.training.batch_size,
        learning_rate=cfg.training.learning_rate,
        max_epochs=cfg.training.max_epochs,
        patience=cfg.training.patience,
        grad_clip_norm=cfg.training.grad_clip_norm,
        shuffle_seed=cfg.seed,
    )
    report = fit(params, splits.train, splits.validation, hyper,
                 log_path=cfg.paths.train_log)
    out = out_path or cfg.paths.checkpoint
    ckpt = make_checkpoint(params, metadata={
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "stopping_reason": report.stopping_reason,
        "epochs_run": len(report.epochs) - 1,
        "dataset_rows": len(dataset),
        "config_sha256": cfg.config_hash(),
    })
    save_checkpoint(ckpt, out)
    print(f"trained {len(report.epochs) - 1} epochs "
          f"(best epoch {report.best_epoch}, validation loss "
          f"{report.best_val_loss:.6g}); checkpoint: {out}")
    return 0


def select_instances(selector: str, count: int) -> list[int]:
    """Instance selectors: 'all-test', 'head:<n>' for the first n test
    instances, 'index:<i>' for a single one."""
    if selector == "all-test":
        return list(range(count))
    if selector.startswith("head:"):
        try:
            n = int(selector.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(
                f"bad instance selector {selector!r}") from None
        if n < 1:
            raise ConfigurationError("head selector needs n >= 1")
        return list(range(min(n, count)))
    if selector.startswith("index:"):
        try:
            i = int(selector.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(
                f"bad instance selector {selector!r}") from None
        if not 0 <= i < count:
            raise ConfigurationError(
                f"instance index {i} outside 0..{count - 1}")
        return [i]
    raise ConfigurationError(
        f"unknown instance selector {selector!r}; expected 'all-test', "
        f"'head:<n>', or 'index:<i>'")


def cmd_predict(cfg: RunConfig, checkpoint_path: str | None,
                dataset_path: str | None, selector: str,
                out_path: str | None) -> int:
    ckpt = load_checkpoint(checkpoint_path or cfg.paths.checkpoint)
    params = restore_model(ckpt)
    dataset = load_dataset_csv(dataset_path or cfg.paths.dataset)
    mc = ckpt.config
    splits = _windows_and_splits(cfg, dataset, mc.n_past, mc.n_future)
    test = splits.test
    chosen = select_instances(selector, len(test))

    scaler = Scaler()
    values_parts = []
    actual_parts = []
    batch = max(1, cfg.training.batch_size)
    with no_grad():
        for lo in range(0, len(chosen), batch):
            idx = chosen[lo:lo + batch]
            past, future, target = test.batch(idx)
            out = forward_batch(params, past, future, training=False).data
            values_parts.append(out)
            actual_parts.append(target)
    scaled_values = np.concatenate(values_parts)
    scaled_actuals = np.concatenate(actual_parts)

    values = np.empty_like(scaled_values)
    actuals = np.empty_like(scaled_actuals)
    for z, name in enumerate(TARGET_FEATURES):
        values[:, :, z, :] = scaler.inverse_scale(scaled_values[:, :, z, :],
                                                  name)
        actuals[:, :, z] = scaler.inverse_scale(scaled_actuals[:, :, z],
                                                name)

    out = out_path or cfg.paths.forecast_dump
    instance_ids = [int(test.origins[i]) for i in chosen]
    write_forecast_dump(out, values, actuals, mc.quantile_levels,
                        instance_ids=instance_ids)
    print(f"wrote {len(chosen)} forecast instances to {out}")
    return 0


def cmd_evaluate(cfg: RunConfig, dump_path: str | None,
                 out_dir: str | None) -> int:
    dump = read_forecast_dump(dump_path or cfg.paths.forecast_dump)
    horizon = per_horizon_cvrmse(dump.values, dump.actuals,
                                 dump.quantile_levels)
    coverage = interval_coverage(
        dump.values, dump.actuals, dump.quantile_levels,
        nominal_levels=cfg.evaluation.nominal_intervals)
    scores = pinball_scores(dump.values, dump.actuals, dump.quantile_levels)

    target_dir = out_dir or cfg.paths.metrics_dir
    os.makedirs(target_dir, exist_ok=True)
    horizon_path = os.path.join(target_dir, "horizon_cvrmse.csv")
    coverage_path = os.path.join(target_dir, "coverage.csv")
    export_metrics(horizon, horizon_path)
    export_metrics(coverage, coverage_path)

    summary = {
        "instances": len(dump.instance_ids),
        "steps": horizon.step_count,
        "zones": horizon.zone_count,
        "overall_cvrmse_pct": horizon.overall,
        "zone_cvrmse_pct": [float(v) for v in horizon.zone_aggregate],
        "coverage": {f"{lv:g}": coverage.coverage[lv]
                     for lv in coverage.nominal_levels},
        "crossing_freq": coverage.crossing_freq,
        "pinball": {f"{q:g}": scores[q] for q in dump.quantile_levels},
        "plateau_step_mean_curve": plateau_step(horizon.mean_curve),
        "plateau_step_by_zone": [plateau_step(horizon.zone_curves[z])
                                 for z in range(horizon.zone_count)],
    }
    summary_path = os.path.join(target_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"overall CVRMSE {horizon.overall:.6g}% over "
          f"{len(dump.instance_ids)} instances; metrics in {target_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvforecast",
        description="Simulate, train, forecast, and evaluate multi-zone "
                    "indoor temperature under hybrid ventilation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--profile", choices=("tiny", "full"),
                       default="full",
                       help="model/pipeline size profile (default: full)")

    g = sub.add_parser("generate", help="simulate a building dataset")
    common(g)
    g.add_argument("--days", type=int, help="override simulated day count")
    g.add_argument("--start", help="override start date (YYYY-MM-DD)")
    g.add_argument("--out", help="dataset CSV path")

    t = sub.add_parser("train", help="train the forecaster on a dataset")
    common(t)
    t.add_argument("--dataset", help="dataset CSV path")
    t.add_argument("--epochs", type=int, help="override max epochs")
    t.add_argument("--batch-size", type=int, help="override batch size")
    t.add_argument("--learning-rate", type=float,
                   help="override learning rate")
    t.add_argument("--patience", type=int,
                   help="override early-stopping patience")
    t.add_argument("--out", help="checkpoint output path")

    p = sub.add_parser("predict", help="forecast test instances from a "
                                       "checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--dataset", help="dataset CSV path")
    p.add_argument("--instances", default="all-test",
                   help="selector: all-test, head:<n>, or index:<i> "
                        "(default: all-test)")
    p.add_argument("--out", help="forecast dump CSV path")

    e = sub.add_parser("evaluate", help="compute metrics from a forecast "
                                        "dump")
    common(e)
    e.add_argument("--dump", help="forecast dump CSV path")
    e.add_argument("--out", help="metrics output directory")
    return parser


def assemble_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_profile(cfg, args.profile)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "days", None) is not None:
        cfg = dataclasses.replace(
            cfg, simulator=dataclasses.replace(cfg.simulator,
                                               days=args.days))
    if getattr(args, "start", None) is not None:
        cfg = dataclasses.replace(
            cfg, simulator=dataclasses.replace(cfg.simulator,
                                               start=args.start))
    training = cfg.training
    if getattr(args, "epochs", None) is not None:
        training = dataclasses.replace(training, max_epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        training = dataclasses.replace(training,
                                       batch_size=args.batch_size)
    if getattr(args, "learning_rate", None) is not None:
        training = dataclasses.replace(training,
                                       learning_rate=args.learning_rate)
    if getattr(args, "patience", None) is not None:
        training = dataclasses.replace(training, patience=args.patience)
    if training is not cfg.training:
        cfg = dataclasses.replace(cfg, training=training)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = assemble_config(args)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.dataset, args.out)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.dataset,
                               args.instances, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.dump, args.out)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
