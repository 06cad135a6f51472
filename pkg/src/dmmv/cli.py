"""Command-line front end.

Commands: train, eval, sweep-bias, synth, decompose. Every command reads an
optional key=value config file; repeated --set key=value flags (and a few
convenience flags) override file entries. Unknown keys are rejected.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.

Output directory layout: config.txt (effective config snapshot),
checkpoint*.npz, history.csv, metrics.json, tables/*.csv.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codec import detect_period
from .data import (PERIOD_PRESETS, SplitSpec, load_csv, save_csv,
                   synth_decaying_sine, synth_trend_sine)
from .errors import ConfigError, ConfigMismatch, DmmvError
from .evaluation import (DEFAULT_SEGMENT_LENGTHS, bias_sweep, evaluate_forecasts,
                         prepare_splits, sweep_summary, write_csv_table,
                         write_long_csv, write_text_summary)
from .models import DmmvModel, ModelConfig, build_model, moving_average_batch
from .training import StageConfig, TrainConfig, mse_loss, train_two_stage

# every recognized config key: name -> (type, default)
CONFIG_KEYS = {
    # data source
    "data": (str, ""),
    "synth_kind": (str, ""),          # decaying_sine | trend_sine
    "synth_len": (int, 2400),
    "synth_period": (int, 24),
    "synth_a_start": (float, 1.0),
    "synth_a_end": (float, 0.1),
    "synth_slope": (float, 0.005),
    "synth_amp": (float, 1.0),
    "synth_noise": (float, 0.1),
    "synth_seed": (int, 0),
    # protocol
    "split_train": (float, 0.7),
    "split_val": (float, 0.1),
    "split_test": (float, 0.2),
    "standardize": (bool, True),
    "train_stride": (int, 1),
    "eval_stride": (int, 1),
    "metrics_raw": (bool, False),
    # model assembly
    "variant": (str, "a"),
    "lookback": (int, 336),
    "horizon": (int, 96),
    "period": (str, "24"),            # integer, "auto", or a frequency preset
    "image_size": (int, 64),
    "patch_size": (int, 8),
    "channels": (int, 1),
    "enc_dim": (int, 64),
    "enc_depth": (int, 3),
    "enc_heads": (int, 4),
    "dec_dim": (int, 48),
    "dec_depth": (int, 2),
    "dec_heads": (int, 4),
    "numerical": (str, "linear"),
    "patch_len": (int, 16),
    "num_dim": (int, 64),
    "num_depth": (int, 2),
    "num_heads": (int, 4),
    "fusion": (str, "gate"),
    "mask_mode": (str, "bcmask"),
    "decomposition": (bool, True),
    "detach_backcast": (bool, False),
    # training
    "stage1_lr": (float, 0.01),
    "stage1_epochs": (int, 50),
    "stage1_patience": (int, 10),
    "stage2_lr": (float, 0.005),
    "stage2_epochs": (int, 5),
    "stage2_patience": (int, 2),
    "warmup_lr": (float, 1e-3),
    "warmup_epochs": (int, 20),
    "warmup_mask_ratio": (float, 0.5),
    "visual_lr": (float, 1e-3),
    "batch_size": (int, 64),
    "weight_decay": (float, 0.01),
    "freeze_visual": (bool, False),
    "seed": (int, 0),
    # sweep
    "segment_lengths": (str, ",".join(str(v) for v in DEFAULT_SEGMENT_LENGTHS)),
    "sweep_seeds": (str, "0"),
    # output
    "outdir": (str, "runs/out"),
}


def _parse_value(key, raw):
    typ, _ = CONFIG_KEYS[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: expected {typ.__name__}, got {raw!r}") from None


def load_config_file(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def resolve_config(args):
    """defaults <- config file <- --set/flag overrides (overrides win)."""
    cfg = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(key, raw)
    for flag in ("data", "outdir", "variant", "mask_mode", "seed", "lookback",
                 "horizon", "period"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = _parse_value(flag, str(value))
    return cfg


def config_snapshot(cfg):
    return "\n".join(f"{k} = {cfg[k]}" for k in CONFIG_KEYS) + "\n"


def load_series(cfg):
    if cfg["data"]:
        return load_csv(cfg["data"])
    kind = cfg["synth_kind"]
    if kind == "decaying_sine":
        return synth_decaying_sine(cfg["synth_len"], cfg["synth_period"],
                                   cfg["synth_a_start"], cfg["synth_a_end"])
    if kind == "trend_sine":
        return synth_trend_sine(cfg["synth_len"], cfg["synth_period"],
                                cfg["synth_slope"], cfg["synth_amp"],
                                cfg["synth_noise"], cfg["synth_seed"])
    raise ConfigError("no data source: set data=PATH or synth_kind="
                      "decaying_sine|trend_sine")


def resolve_period(cfg, series):
    raw = cfg["period"]
    if raw in PERIOD_PRESETS:
        return PERIOD_PRESETS[raw]
    if raw == "auto":
        split = SplitSpec(cfg["split_train"], cfg["split_val"], cfg["split_test"])
        train_len = int(np.floor(split.train * series.length))
        max_p = max(2, cfg["lookback"] // 2)
        return detect_period(series.values[0, :train_len], 2, max_p)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"period must be an integer, 'auto', or one of "
            f"{sorted(PERIOD_PRESETS)}; got {raw!r}") from None


def model_config(cfg, period):
    return ModelConfig(
        variant=cfg["variant"], lookback=cfg["lookback"], horizon=cfg["horizon"],
        period=period, image_size=cfg["image_size"], patch_size=cfg["patch_size"],
        channels=cfg["channels"], enc_dim=cfg["enc_dim"], enc_depth=cfg["enc_depth"],
        enc_heads=cfg["enc_heads"], dec_dim=cfg["dec_dim"],
        dec_depth=cfg["dec_depth"], dec_heads=cfg["dec_heads"],
        numerical=cfg["numerical"], patch_len=cfg["patch_len"],
        num_dim=cfg["num_dim"], num_depth=cfg["num_depth"],
        num_heads=cfg["num_heads"], fusion=cfg["fusion"],
        mask_mode=cfg["mask_mode"], decomposition=cfg["decomposition"],
        detach_backcast=cfg["detach_backcast"])


def train_config(cfg):
    return TrainConfig(
        stage1=StageConfig(cfg["stage1_lr"], cfg["stage1_epochs"], cfg["stage1_patience"]),
        stage2=StageConfig(cfg["stage2_lr"], cfg["stage2_epochs"], cfg["stage2_patience"]),
        warmup=StageConfig(cfg["warmup_lr"], cfg["warmup_epochs"], 0),
        warmup_mask_ratio=cfg["warmup_mask_ratio"], visual_lr=cfg["visual_lr"],
        batch_size=cfg["batch_size"], seed=cfg["seed"],
        weight_decay=cfg["weight_decay"], freeze_visual=cfg["freeze_visual"])


def _prepare(cfg, series, period):
    split = SplitSpec(cfg["split_train"], cfg["split_val"], cfg["split_test"])
    return prepare_splits(series, cfg["lookback"], cfg["horizon"], split,
                          cfg["standardize"], cfg["train_stride"],
                          cfg["eval_stride"])


def _outdir(cfg):
    out = Path(cfg["outdir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "tables").mkdir(exist_ok=True)
    (out / "config.txt").write_text(config_snapshot(cfg))
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = resolve_config(args)
    series = load_series(cfg)
    period = resolve_period(cfg, series)
    prepared = _prepare(cfg, series, period)
    mcfg = model_config(cfg, period)
    model = DmmvModel(mcfg, seed=cfg["seed"])
    out = _outdir(cfg)
    result = train_two_stage(model, prepared.train, train_config(cfg))

    header, rows = result.history_rows()
    with open(out / "history.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    for stage in ("post_stage1", "post_stage2"):
        snap = result.snapshots[stage]
        current = model.store.snapshot()
        model.store.restore(snap)
        model.store.save(out / f"checkpoint_{stage[5:]}.npz", model.assembly())
        model.store.restore(current)
    model.store.save(out / "checkpoint.npz", model.assembly())

    rng_val = np.random.default_rng([cfg["seed"], 99])
    val_pred = model.predict(prepared.train.x_val, rng=rng_val)
    report = evaluate_forecasts(val_pred, prepared.train.y_val,
                                "standardized" if cfg["standardize"] else "raw")
    metrics = {"split": "val", **report.to_dict(),
               "gate_value": model.gate_weight(),
               "best_val": result.best_val}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(f"trained variant={cfg['variant']} period={period} "
          f"val_mse={report.mse:.6f} gate={model.gate_weight():.4f}")
    print(f"outputs in {out}")
    return 0


def _load_checkpoint_model(cfg, period, checkpoint):
    mcfg = model_config(cfg, period)
    model = DmmvModel(mcfg, seed=cfg["seed"])
    model.store.load(checkpoint, expect_assembly=model.assembly())
    return model


def cmd_eval(args):
    cfg = resolve_config(args)
    series = load_series(cfg)
    period = resolve_period(cfg, series)
    prepared = _prepare(cfg, series, period)
    model = _load_checkpoint_model(cfg, period, args.checkpoint)
    out = _outdir(cfg)

    if args.split == "val":
        x, y = prepared.train.x_val, prepared.train.y_val
    else:
        x, y = prepared.x_test, prepared.y_test
    rng_eval = np.random.default_rng([cfg["seed"], 99])
    pred = model.predict(x, rng=rng_eval)
    scale = "standardized" if cfg["standardize"] else "raw"
    if cfg["metrics_raw"] and prepared.stats is not None:
        std = prepared.stats.std.mean()  # univariate pools share one scale
        mean = prepared.stats.mean.mean()
        pred = pred * std + mean
        y = y * std + mean
        scale = "raw"
    report = evaluate_forecasts(pred, y, scale)
    metrics = {"split": args.split, **report.to_dict(),
               "gate_value": model.gate_weight()}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    rows = [{"horizon_step": t + 1, "mse": float(report.per_horizon_mse[t]),
             "mae": float(report.per_horizon_mae[t])}
            for t in range(len(report.per_horizon_mse))]
    write_csv_table(out / "tables" / "per_horizon.csv", rows)
    print(json.dumps(metrics))
    return 0


def cmd_sweep_bias(args):
    cfg = resolve_config(args)
    series = load_series(cfg)
    out = _outdir(cfg)
    segments = [int(s) for s in str(cfg["segment_lengths"]).split(",") if s]
    seeds = [int(s) for s in str(cfg["sweep_seeds"]).split(",") if s]
    split = SplitSpec(cfg["split_train"], cfg["split_val"], cfg["split_test"])
    mae_dims = {k: cfg[k] for k in ("channels", "enc_dim", "enc_depth", "enc_heads",
                                    "dec_dim", "dec_depth", "dec_heads")}
    rows = bias_sweep(series, segments, train_config(cfg),
                      lookback=cfg["lookback"], horizon=cfg["horizon"],
                      image_size=cfg["image_size"], patch_size=cfg["patch_size"],
                      seeds=seeds, split=split, standardized=cfg["standardize"],
                      train_stride=cfg["train_stride"],
                      eval_stride=cfg["eval_stride"], mae_dims=mae_dims)
    write_csv_table(out / "tables" / "bias_sweep.csv", rows)
    summary = sweep_summary(rows)
    write_csv_table(out / "tables" / "bias_sweep_summary.csv", summary)
    write_long_csv(out / "tables" / "bias_sweep_long.csv", rows, "segment_length")
    write_text_summary(out / "tables" / "bias_sweep.txt",
                       "visual forecaster test error vs imaging segment length",
                       summary, ["segment_length", "mse", "mae", "n_seeds"])
    for row in summary:
        print(f"segment {row['segment_length']:>3}: "
              f"mse={row['mse']:.6f} mae={row['mae']:.6f}")
    return 0


def cmd_synth(args):
    cfg = resolve_config(args)
    series = load_series({**cfg, "data": ""})
    save_csv(args.out, series)
    print(f"wrote {series.n_variates}x{series.length} series to {args.out}")
    return 0


def cmd_decompose(args):
    cfg = resolve_config(args)
    series = load_series(cfg)
    period = resolve_period(cfg, series)
    prepared = _prepare(cfg, series, period)
    model = _load_checkpoint_model(cfg, period, args.checkpoint)
    out = _outdir(cfg)

    x_all, y_all = ((prepared.train.x_val, prepared.train.y_val)
                    if args.split == "val" else (prepared.x_test, prepared.y_test))
    idx = args.window_index
    if not 0 <= idx < len(x_all):
        raise ConfigError(f"window index {idx} out of range [0, {len(x_all)})")
    x = x_all[idx:idx + 1]
    y = y_all[idx]

    rng = np.random.default_rng([cfg["seed"], 99])
    branch = model.visual_branch(x, train=False, rng=rng)
    forecast = model.head(branch, train=False).data[0]
    lookback = x[0]
    t_len = len(lookback)
    retained = model.backcast_geo.retained_len

    rows = []
    if model.config.variant == "s":
        trend = moving_average_batch(x, model.config.period)[0]
        seasonal = lookback - trend
        for t in range(t_len):
            rows.append({"t": t, "x": lookback[t], "trend": trend[t],
                         "seasonal": seasonal[t], "forecast": "", "target": ""})
    else:
        residual = branch["trend_input"].data[0]
        backcast = lookback[t_len - retained:] - residual
        offset = t_len - retained
        for t in range(t_len):
            in_region = t >= offset
            rows.append({
                "t": t, "x": lookback[t],
                "trend": residual[t - offset] if in_region else "",
                "seasonal": backcast[t - offset] if in_region else "",
                "forecast": "", "target": "",
            })
    for h in range(len(forecast)):
        rows.append({"t": t_len + h, "x": "", "trend": "", "seasonal": "",
                     "forecast": forecast[h], "target": y[h]})
    path = out / "tables" / f"decompose_window{idx}.csv"
    write_csv_table(path, rows, ["t", "x", "trend", "seasonal", "forecast", "target"])
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmmv",
        description="decomposition-based multi-modal-view forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--data", help="dataset CSV path")
        p.add_argument("--outdir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=["s", "a"])
        p.add_argument("--mask-mode", dest="mask_mode",
                       choices=["bcmask", "none", "random"])
        p.add_argument("--lookback", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--period")

    p_train = sub.add_parser("train", help="train a model, write checkpoints")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=["val", "test"], default="test")
    p_eval.set_defaults(fn=cmd_eval)

    p_sweep = sub.add_parser("sweep-bias",
                             help="segment-length sweep of the visual forecaster")
    common(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep_bias)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset CSV")
    common(p_synth)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(fn=cmd_synth)

    p_dec = sub.add_parser("decompose",
                           help="emit one window's decomposition and forecast")
    common(p_dec)
    p_dec.add_argument("--checkpoint", required=True)
    p_dec.add_argument("--window-index", type=int, required=True)
    p_dec.add_argument("--split", choices=["val", "test"], default="test")
    p_dec.set_defaults(fn=cmd_decompose)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:  # includes ConfigMismatch
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DmmvError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
