"""Metrics, the segment-length bias sweep, and the ablation suite.

The sweep trains the visual-only forecaster once per (segment length, seed)
on a series with a known period and tabulates test MSE/MAE; period-multiple
segment lengths should win by a wide margin. The ablation suite retrains the
full model under named configuration switches with a shared seed set.

Heavy runs honor the DMMV_WORKERS environment variable (process pool, one
worker per configuration).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .data import SplitSpec, chronological_split, standardize, window_matrix
from .models import (DmmvModel, NumericalOnlyConfig, NumericalOnlyModel,
                     VisualOnlyConfig, VisualOnlyModel)
from .training import (TrainData, train_numerical_only, train_two_stage,
                       train_visual_only)


@dataclass
class MetricReport:
    mse: float
    mae: float
    per_horizon_mse: np.ndarray
    per_horizon_mae: np.ndarray
    window_count: int
    scale: str = "standardized"

    def to_dict(self):
        return {"mse": self.mse, "mae": self.mae,
                "window_count": self.window_count, "scale": self.scale}


def evaluate_forecasts(pred, truth, scale="standardized"):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    err = pred - truth
    return MetricReport(
        mse=float(np.mean(err * err)),
        mae=float(np.mean(np.abs(err))),
        per_horizon_mse=np.mean(err * err, axis=0),
        per_horizon_mae=np.mean(np.abs(err), axis=0),
        window_count=pred.shape[0],
        scale=scale,
    )


def evaluate_model(model, x, y, rng=None, scale="standardized"):
    return evaluate_forecasts(model.predict(x, rng=rng), y, scale)


@dataclass
class PreparedData:
    train: TrainData
    x_test: np.ndarray
    y_test: np.ndarray
    stats: object  # per-variate standardization stats (None when disabled)


def prepare_splits(series, lookback, horizon, split=None, standardized=True,
                   train_stride=1, eval_stride=1):
    """Split chronologically, optionally z-score on train statistics, and
    window each split independently."""
    split = split or SplitSpec(0.7, 0.1, 0.2)
    train, val, test = chronological_split(series, split)
    stats = None
    if standardized:
        (train, val, test), stats = standardize(train, val, test)
    xt, yt = window_matrix(train, lookback, horizon, train_stride)
    xv, yv = window_matrix(val, lookback, horizon, eval_stride)
    xe, ye = window_matrix(test, lookback, horizon, eval_stride)
    return PreparedData(TrainData(xt, yt, xv, yv), xe, ye, stats)


# ---------------------------------------------------------------------------
# inductive-bias segment-length sweep
# ---------------------------------------------------------------------------

DEFAULT_SEGMENT_LENGTHS = (16, 20, 24, 28, 32, 36, 40, 44, 48)


def _sweep_one(args):
    (values, names, segment, seed, lookback, horizon, image_size, patch_size,
     mae_dims, train_cfg, split, standardized, train_stride, eval_stride) = args
    from .data import MultivariateSeries

    series = MultivariateSeries(values, names)
    prepared = prepare_splits(series, lookback, horizon, split, standardized,
                              train_stride, eval_stride)
    cfg = VisualOnlyConfig(lookback=lookback, horizon=horizon, period=segment,
                           image_size=image_size, patch_size=patch_size,
                           **mae_dims)
    model = VisualOnlyModel(cfg, seed=seed)
    train_visual_only(model, prepared.train, replace(train_cfg, seed=seed))
    report = evaluate_model(model, prepared.x_test, prepared.y_test,
                            scale="standardized" if standardized else "raw")
    return {"segment_length": segment, "seed": seed,
            "mse": report.mse, "mae": report.mae}


def bias_sweep(series, segment_lengths, train_cfg, *, lookback=336, horizon=96,
               image_size=64, patch_size=8, seeds=(0,), split=None,
               standardized=True, train_stride=1, eval_stride=1, mae_dims=None,
               workers=None):
    """Train/evaluate the visual forecaster per imaging segment length.

    Returns one row per (segment_length, seed): dicts with mse/mae.
    """
    mae_dims = mae_dims or {}
    jobs = [
        (series.values, list(series.names), segment, seed, lookback, horizon,
         image_size, patch_size, mae_dims, train_cfg, split, standardized,
         train_stride, eval_stride)
        for seed in seeds for segment in segment_lengths
    ]
    return _run_jobs(_sweep_one, jobs, workers)


def sweep_summary(rows):
    """Mean MSE/MAE per segment length over seeds."""
    segments = sorted({r["segment_length"] for r in rows})
    out = []
    for seg in segments:
        sub = [r for r in rows if r["segment_length"] == seg]
        out.append({"segment_length": seg,
                    "mse": float(np.mean([r["mse"] for r in sub])),
                    "mae": float(np.mean([r["mae"] for r in sub])),
                    "n_seeds": len(sub)})
    return out


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

# named configuration switches; each entry transforms (ModelConfig, TrainConfig)
ABLATION_MODES = {
    "baseline": {},
    "patch_transformer": {"model": {"numerical": "patch_transformer"}},
    "sum_fusion": {"model": {"fusion": "sum"}},
    "no_mask": {"model": {"mask_mode": "none"}},
    "random_mask": {"model": {"mask_mode": "random"}},
    "freeze_visual": {"train": {"freeze_visual": True}},
    "no_decomposition": {"model": {"decomposition": False}},
}


def apply_mode(mode, model_cfg, train_cfg):
    if mode not in ABLATION_MODES:
        raise KeyError(f"unknown ablation mode {mode!r}; "
                       f"known: {sorted(ABLATION_MODES)}")
    spec = ABLATION_MODES[mode]
    if spec.get("model"):
        model_cfg = replace(model_cfg, **spec["model"])
    if spec.get("train"):
        train_cfg = replace(train_cfg, **spec["train"])
    return model_cfg, train_cfg


def _ablation_one(args):
    (values, names, mode, seed, model_cfg, train_cfg, split, standardized,
     train_stride, eval_stride) = args
    from .data import MultivariateSeries

    series = MultivariateSeries(values, names)
    model_cfg, train_cfg = apply_mode(mode, model_cfg, train_cfg)
    prepared = prepare_splits(series, model_cfg.lookback, model_cfg.horizon,
                              split, standardized, train_stride, eval_stride)
    model = DmmvModel(model_cfg, seed=seed)
    train_two_stage(model, prepared.train, replace(train_cfg, seed=seed))
    rng_eval = np.random.default_rng([seed, 99])
    report = evaluate_model(model, prepared.x_test, prepared.y_test, rng=rng_eval,
                            scale="standardized" if standardized else "raw")
    return {"mode": mode, "seed": seed, "mse": report.mse, "mae": report.mae,
            "gate_value": model.gate_weight()}


def ablation_suite(series, modes, model_cfg, train_cfg, seeds=(0,), split=None,
                   standardized=True, train_stride=1, eval_stride=1, workers=None):
    """Run each named mode over the shared seed set; returns per-run rows."""
    jobs = [
        (series.values, list(series.names), mode, seed, model_cfg, train_cfg,
         split, standardized, train_stride, eval_stride)
        for mode in modes for seed in seeds
    ]
    return _run_jobs(_ablation_one, jobs, workers)


def ablation_summary(rows):
    modes = []
    for r in rows:
        if r["mode"] not in modes:
            modes.append(r["mode"])
    out = []
    for mode in modes:
        sub = [r for r in rows if r["mode"] == mode]
        out.append({"mode": mode,
                    "mse": float(np.mean([r["mse"] for r in sub])),
                    "mae": float(np.mean([r["mae"] for r in sub])),
                    "n_seeds": len(sub)})
    return out


# ---------------------------------------------------------------------------
# single-view baselines (decomposition-benefit comparison)
# ---------------------------------------------------------------------------

def train_and_evaluate_baseline(kind, series, model_cfg, train_cfg, seed=0,
                                split=None, standardized=True, train_stride=1,
                                eval_stride=1):
    """Train one model of the requested kind on the series and report test
    metrics. kind: dmmv | visual_only | linear_only."""
    prepared = prepare_splits(series, model_cfg.lookback, model_cfg.horizon,
                              split, standardized, train_stride, eval_stride)
    cfg = replace(train_cfg, seed=seed)
    if kind == "dmmv":
        model = DmmvModel(model_cfg, seed=seed)
        train_two_stage(model, prepared.train, cfg)
    elif kind == "visual_only":
        vcfg = VisualOnlyConfig(
            lookback=model_cfg.lookback, horizon=model_cfg.horizon,
            period=model_cfg.period, image_size=model_cfg.image_size,
            patch_size=model_cfg.patch_size, channels=model_cfg.channels,
            enc_dim=model_cfg.enc_dim, enc_depth=model_cfg.enc_depth,
            enc_heads=model_cfg.enc_heads, dec_dim=model_cfg.dec_dim,
            dec_depth=model_cfg.dec_depth, dec_heads=model_cfg.dec_heads)
        model = VisualOnlyModel(vcfg, seed=seed)
        train_visual_only(model, prepared.train, cfg)
    elif kind == "linear_only":
        ncfg = NumericalOnlyConfig(lookback=model_cfg.lookback,
                                   horizon=model_cfg.horizon, numerical="linear")
        model = NumericalOnlyModel(ncfg, seed=seed)
        train_numerical_only(model, prepared.train, cfg)
    else:
        raise KeyError(f"unknown baseline kind {kind!r}")
    rng_eval = np.random.default_rng([seed, 99])
    report = evaluate_model(model, prepared.x_test, prepared.y_test, rng=rng_eval,
                            scale="standardized" if standardized else "raw")
    return model, report


# ---------------------------------------------------------------------------
# table output
# ---------------------------------------------------------------------------

def _run_jobs(fn, jobs, workers):
    if workers is None:
        workers = int(os.environ.get("DMMV_WORKERS", "1"))
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    import multiprocessing as mp

    with mp.Pool(processes=min(workers, len(jobs))) as pool:
        return pool.map(fn, jobs)


def write_csv_table(path, rows, columns=None):
    if not rows:
        raise ValueError("no rows to write")
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([r[c] for c in columns])


def write_long_csv(path, rows, config_key):
    """Plot-ready long format: (config, metric, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "metric", "value"])
        for r in rows:
            config = r[config_key]
            for metric in ("mse", "mae"):
                writer.writerow([config, metric, r[metric]])


def write_text_summary(path, title, rows, columns):
    widths = [max(len(str(c)), max((len(_fmt(r[c])) for r in rows), default=0))
              for c in columns]
    lines = [title, ""]
    lines.append("  ".join(str(c).ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        lines.append("  ".join(_fmt(r[c]).ljust(w) for c, w in zip(columns, widths)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)
