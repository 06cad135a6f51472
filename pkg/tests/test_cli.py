import json
import os

import numpy as np
import pytest

from dmmv.cli import main
from dmmv.data import load_csv

TINY_MODEL = [
    "--lookback", "32", "--horizon", "8", "--period", "8",
    "--set", "image_size=16", "--set", "patch_size=4",
    "--set", "enc_dim=16", "--set", "enc_depth=1", "--set", "enc_heads=2",
    "--set", "dec_dim=16", "--set", "dec_depth=1", "--set", "dec_heads=2",
    "--set", "warmup_epochs=2", "--set", "stage1_epochs=4",
    "--set", "stage1_patience=2", "--set", "stage2_epochs=2",
    "--set", "stage2_patience=1", "--set", "batch_size=32",
    "--set", "train_stride=3", "--set", "eval_stride=3",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "series.csv"
    code = main(["synth", "--set", "synth_kind=trend_sine",
                 "--set", "synth_len=400", "--set", "synth_period=8",
                 "--set", "synth_noise=0.05", "--out", str(path)])
    assert code == 0
    return str(path)


@pytest.fixture(scope="module")
def trained_run(dataset, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("run")
    code = main(["train", "--data", dataset, "--outdir", str(outdir),
                 "--seed", "3"] + TINY_MODEL)
    assert code == 0
    return outdir


class TestTrain:
    def test_missing_dataset_is_usage_error(self, tmp_path):
        code = main(["train", "--outdir", str(tmp_path / "x")] + TINY_MODEL)
        assert code == 2

    def test_outputs_written(self, trained_run):
        for name in ("checkpoint.npz", "checkpoint_stage1.npz",
                     "checkpoint_stage2.npz", "history.csv", "metrics.json",
                     "config.txt"):
            assert (trained_run / name).exists(), name
        header = (trained_run / "history.csv").read_text().splitlines()[0]
        assert header == "stage,epoch,train_mse,val_mse,gate_value"

    def test_no_mask_variant_runs(self, dataset, tmp_path):
        code = main(["train", "--data", dataset, "--outdir", str(tmp_path / "nm"),
                     "--variant", "a", "--mask-mode", "none", "--seed", "1"]
                    + TINY_MODEL)
        assert code == 0

    def test_unknown_config_key_rejected(self, dataset, tmp_path):
        code = main(["train", "--data", dataset, "--outdir", str(tmp_path / "u"),
                     "--set", "bogus_key=1"] + TINY_MODEL)
        assert code == 2


class TestEval:
    def test_metrics_json_fields(self, dataset, trained_run, tmp_path):
        outdir = tmp_path / "eval"
        code = main(["eval", "--data", dataset, "--outdir", str(outdir),
                     "--checkpoint", str(trained_run / "checkpoint.npz"),
                     "--split", "test", "--seed", "3"] + TINY_MODEL)
        assert code == 0
        metrics = json.loads((outdir / "metrics.json").read_text())
        for key in ("mse", "mae", "window_count", "scale", "gate_value"):
            assert key in metrics
        assert (outdir / "tables" / "per_horizon.csv").exists()

    def test_val_metric_matches_training_time(self, dataset, trained_run, tmp_path):
        train_metrics = json.loads((trained_run / "metrics.json").read_text())
        outdir = tmp_path / "eval_val"
        code = main(["eval", "--data", dataset, "--outdir", str(outdir),
                     "--checkpoint", str(trained_run / "checkpoint.npz"),
                     "--split", "val", "--seed", "3"] + TINY_MODEL)
        assert code == 0
        eval_metrics = json.loads((outdir / "metrics.json").read_text())
        assert abs(eval_metrics["mse"] - train_metrics["mse"]) <= 1e-9

    def test_assembly_mismatch_is_config_error(self, dataset, trained_run, tmp_path):
        code = main(["eval", "--data", dataset, "--outdir", str(tmp_path / "m"),
                     "--checkpoint", str(trained_run / "checkpoint.npz"),
                     "--variant", "s", "--seed", "3"] + TINY_MODEL)
        assert code == 2


class TestSweep:
    def test_rows_match_requested_lengths(self, dataset, tmp_path):
        outdir = tmp_path / "sweep"
        code = main(["sweep-bias", "--data", dataset, "--outdir", str(outdir),
                     "--seed", "0",
                     "--set", "segment_lengths=4,8",
                     "--set", "sweep_seeds=0",
                     "--set", "warmup_epochs=1", "--set", "stage1_epochs=1",
                     "--set", "stage1_patience=1"] + TINY_MODEL)
        assert code == 0
        lines = (outdir / "tables" / "bias_sweep.csv").read_text().splitlines()
        assert lines[0] == "segment_length,seed,mse,mae"
        assert len(lines) == 3
        assert (outdir / "tables" / "bias_sweep_long.csv").exists()
        assert (outdir / "tables" / "bias_sweep.txt").exists()

    def test_custom_lengths_accepted(self, dataset, tmp_path):
        code = main(["sweep-bias", "--data", dataset,
                     "--outdir", str(tmp_path / "s2"), "--seed", "0",
                     "--set", "segment_lengths=8",
                     "--set", "sweep_seeds=1",
                     "--set", "warmup_epochs=1", "--set", "stage1_epochs=1",
                     "--set", "stage1_patience=1"] + TINY_MODEL)
        assert code == 0


class TestSynth:
    def test_decaying_sine_csv(self, tmp_path):
        out = tmp_path / "d.csv"
        code = main(["synth", "--set", "synth_kind=decaying_sine",
                     "--set", "synth_len=128", "--out", str(out)])
        assert code == 0
        series = load_csv(str(out))
        assert series.values.shape == (1, 128)

    def test_seeded_regeneration_bitwise(self, tmp_path):
        args = ["synth", "--set", "synth_kind=trend_sine",
                "--set", "synth_len=64", "--set", "synth_seed=9"]
        main(args + ["--out", str(tmp_path / "a.csv")])
        main(args + ["--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_missing_kind_is_config_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x.csv")]) == 2


class TestDecompose:
    def test_variant_a_identities_and_cross_check(self, dataset, trained_run, tmp_path):
        outdir = tmp_path / "dec"
        code = main(["decompose", "--data", dataset, "--outdir", str(outdir),
                     "--checkpoint", str(trained_run / "checkpoint.npz"),
                     "--window-index", "2", "--split", "test", "--seed", "3"]
                    + TINY_MODEL)
        assert code == 0
        rows = (outdir / "tables" / "decompose_window2.csv").read_text().splitlines()
        assert rows[0] == "t,x,trend,seasonal,forecast,target"
        parsed = [r.split(",") for r in rows[1:]]
        lookback_rows = [r for r in parsed if r[1] != ""]
        assert len(lookback_rows) == 32
        for r in lookback_rows:
            if r[2] != "" and r[3] != "":
                # residual + backcast reproduce the input
                assert abs(float(r[2]) + float(r[3]) - float(r[1])) <= 1e-9
        forecast_rows = [r for r in parsed if r[4] != ""]
        assert len(forecast_rows) == 8

    def test_forecast_column_matches_eval_prediction(self, dataset, trained_run,
                                                     tmp_path):
        outdir = tmp_path / "dec2"
        main(["decompose", "--data", dataset, "--outdir", str(outdir),
              "--checkpoint", str(trained_run / "checkpoint.npz"),
              "--window-index", "0", "--split", "test", "--seed", "3"] + TINY_MODEL)
        rows = (outdir / "tables" / "decompose_window0.csv").read_text().splitlines()
        forecast = [float(r.split(",")[4]) for r in rows[1:] if r.split(",")[4] != ""]

        from dmmv.cli import build_parser, resolve_config, load_series, \
            resolve_period, _prepare, _load_checkpoint_model
        args = build_parser().parse_args(
            ["eval", "--data", dataset, "--checkpoint",
             str(trained_run / "checkpoint.npz"), "--seed", "3"] + TINY_MODEL)
        cfg = resolve_config(args)
        series = load_series(cfg)
        period = resolve_period(cfg, series)
        prepared = _prepare(cfg, series, period)
        model = _load_checkpoint_model(cfg, period, args.checkpoint)
        rng = np.random.default_rng([3, 99])
        pred = model.predict(prepared.x_test[:1], rng=rng)[0]
        np.testing.assert_allclose(forecast, pred, atol=1e-9)

    def test_variant_s_additivity(self, dataset, tmp_path):
        run_s = tmp_path / "run_s"
        code = main(["train", "--data", dataset, "--outdir", str(run_s),
                     "--variant", "s", "--seed", "2"] + TINY_MODEL)
        assert code == 0
        outdir = tmp_path / "dec_s"
        code = main(["decompose", "--data", dataset, "--outdir", str(outdir),
                     "--checkpoint", str(run_s / "checkpoint.npz"),
                     "--variant", "s", "--window-index", "1", "--split", "test",
                     "--seed", "2"] + TINY_MODEL)
        assert code == 0
        rows = (outdir / "tables" / "decompose_window1.csv").read_text().splitlines()
        for r in rows[1:]:
            cells = r.split(",")
            if cells[1] != "":
                assert abs(float(cells[2]) + float(cells[3]) - float(cells[1])) <= 1e-9

    def test_out_of_range_index_is_config_error(self, dataset, trained_run, tmp_path):
        code = main(["decompose", "--data", dataset,
                     "--outdir", str(tmp_path / "oor"),
                     "--checkpoint", str(trained_run / "checkpoint.npz"),
                     "--window-index", "99999", "--seed", "3"] + TINY_MODEL)
        assert code == 2


class TestDeterminism:
    def test_same_seed_same_checkpoint(self, dataset, tmp_path):
        a, b = tmp_path / "ra", tmp_path / "rb"
        for out in (a, b):
            assert main(["train", "--data", dataset, "--outdir", str(out),
                         "--seed", "7"] + TINY_MODEL) == 0
        with np.load(a / "checkpoint.npz") as fa, np.load(b / "checkpoint.npz") as fb:
            for key in fa.files:
                if key != "meta_json":
                    np.testing.assert_array_equal(fa[key], fb[key])
