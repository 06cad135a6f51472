import numpy as np
import pytest

from dmmv.data import (MultivariateSeries, SplitSpec, chronological_split,
                       load_csv, save_csv, standardize, synth_decaying_sine,
                       synth_trend_sine, window_count, window_iter, window_matrix)
from dmmv.errors import ConfigError, EmptySplit, NonNumericCell, ParseError


def write_csv(path, text):
    path.write_text(text)
    return str(path)


class TestLoadCsv:
    def test_small_file_shape(self, tmp_path):
        p = write_csv(tmp_path / "a.csv",
                      "date,u,v\n2020-01-01,1,4\n2020-01-02,2,5\n2020-01-03,3,6\n")
        series = load_csv(p)
        assert series.values.shape == (2, 3)
        np.testing.assert_array_equal(series.values, [[1, 2, 3], [4, 5, 6]])
        assert series.names == ["u", "v"]

    def test_blank_cell_names_location(self, tmp_path):
        p = write_csv(tmp_path / "b.csv", "date,u,v\nt0,1,2\nt1,,3\n")
        with pytest.raises(NonNumericCell) as err:
            load_csv(p)
        assert "row 3" in str(err.value) and "column 2" in str(err.value)

    def test_ragged_row_rejected(self, tmp_path):
        p = write_csv(tmp_path / "c.csv", "date,u\nt0,1\nt1\n")
        with pytest.raises(ParseError):
            load_csv(p)

    def test_etth1_shaped_file(self, tmp_path):
        rows = 17420
        d = 7
        rng = np.random.default_rng(0)
        values = rng.standard_normal((d, rows))
        series = MultivariateSeries(values, [f"v{i}" for i in range(d)])
        path = tmp_path / "etth1_shape.csv"
        save_csv(path, series)
        loaded = load_csv(str(path))
        assert loaded.values.shape == (7, 17420)
        np.testing.assert_allclose(loaded.values, values, atol=0)

    def test_save_load_round_trip(self, tmp_path):
        series = synth_trend_sine(50, seed=1)
        path = tmp_path / "round.csv"
        save_csv(path, series)
        np.testing.assert_array_equal(load_csv(str(path)).values, series.values)


class TestSplits:
    def test_60_20_20(self):
        series = MultivariateSeries(np.arange(100.0)[None, :], ["x"])
        tr, va, te = chronological_split(series, SplitSpec(0.6, 0.2, 0.2))
        assert (tr.length, va.length, te.length) == (60, 20, 20)
        np.testing.assert_array_equal(tr.values[0], np.arange(60.0))
        np.testing.assert_array_equal(te.values[0], np.arange(80.0, 100.0))

    def test_illness_geometry(self):
        series = MultivariateSeries(np.zeros((7, 966)), [f"v{i}" for i in range(7)])
        tr, va, te = chronological_split(series, SplitSpec(0.7, 0.1, 0.2))
        assert (tr.length, va.length, te.length) == (676, 96, 194)

    def test_bad_ratios_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.5, 0.2, 0.2)

    def test_empty_split_rejected(self):
        series = MultivariateSeries(np.zeros((1, 5)), ["x"])
        with pytest.raises(EmptySplit):
            chronological_split(series, SplitSpec(0.9, 0.05, 0.05))

    def test_splits_partition_series(self):
        series = MultivariateSeries(np.arange(123.0)[None, :], ["x"])
        tr, va, te = chronological_split(series, SplitSpec(0.7, 0.1, 0.2))
        joined = np.concatenate([tr.values, va.values, te.values], axis=1)
        np.testing.assert_array_equal(joined, series.values)


class TestStandardize:
    def test_train_mean_zero(self):
        rng = np.random.default_rng(2)
        train = MultivariateSeries(rng.standard_normal((3, 200)) * 5 + 2, list("abc"))
        (z_train,), _ = standardize(train)
        np.testing.assert_allclose(z_train.values.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(z_train.values.std(axis=1), 1.0, atol=1e-9)

    def test_other_splits_keep_shift(self):
        rng = np.random.default_rng(3)
        train = MultivariateSeries(rng.standard_normal((2, 100)), ["a", "b"])
        val = MultivariateSeries(rng.standard_normal((2, 50)) + 4.0, ["a", "b"])
        (_, z_val), _ = standardize(train, val)
        assert np.abs(z_val.values.mean(axis=1)).min() > 0.5

    def test_inverse_restores(self):
        rng = np.random.default_rng(4)
        train = MultivariateSeries(rng.standard_normal((2, 80)) * 3 + 1, ["a", "b"])
        (z_train,), stats = standardize(train)
        np.testing.assert_allclose(stats.invert(z_train).values, train.values,
                                   atol=1e-9)


class TestWindows:
    def test_count_small_example(self):
        series = MultivariateSeries(np.arange(10.0)[None, :], ["x"])
        windows = list(window_iter(series, 4, 2))
        assert len(windows) == 5

    def test_first_window_indices(self):
        series = MultivariateSeries(np.arange(10.0)[None, :], ["x"])
        w = next(window_iter(series, 4, 2))
        np.testing.assert_array_equal(w.lookback, [0, 1, 2, 3])
        np.testing.assert_array_equal(w.target, [4, 5])

    def test_stride_counts_match_enumeration_oracle(self):
        series = MultivariateSeries(np.arange(57.0)[None, :], ["x"])
        for t, h, stride in [(4, 2, 4), (5, 3, 5), (7, 2, 1), (6, 1, 3)]:
            brute = [s for s in range(0, series.length)
                     if s % stride == 0 and s + t + h <= series.length]
            windows = list(window_iter(series, t, h, stride))
            assert len(windows) == len(brute) == window_count(series.length, t, h, stride)

    def test_matrix_pools_variates(self):
        series = MultivariateSeries(np.arange(20.0).reshape(2, 10), ["a", "b"])
        x, y = window_matrix(series, 4, 2)
        assert x.shape == (10, 4) and y.shape == (10, 2)
        np.testing.assert_array_equal(x[5], series.values[1, 0:4])


class TestSynthetic:
    def test_flat_amplitude_is_pure_sine(self):
        series = synth_decaying_sine(240, period=24, a_start=1.0, a_end=1.0)
        t = np.arange(240)
        np.testing.assert_allclose(series.values[0], np.sin(2 * np.pi * t / 24),
                                   atol=1e-12)

    def test_starts_at_zero(self):
        assert synth_decaying_sine(100, 24, 1.0, 0.1).values[0, 0] == 0.0

    def test_amplitude_envelope(self):
        series = synth_decaying_sine(480, period=24, a_start=2.0, a_end=0.5)
        t = np.arange(480)
        amp = 2.0 + (0.5 - 2.0) * t / 479
        x = series.values[0]
        assert (np.abs(x) <= amp + 1e-12).all()
        quarter = np.arange(6, 480, 24)  # P mod 4 == 0: on-grid quarter points
        np.testing.assert_allclose(np.abs(x[quarter]), amp[quarter], atol=1e-12)

    def test_trend_sine_components(self):
        pure = synth_trend_sine(100, period=20, slope=0.0, amp=1.0, noise_std=0.0)
        t = np.arange(100)
        np.testing.assert_allclose(pure.values[0], np.sin(2 * np.pi * t / 20), atol=1e-12)
        ramp = synth_trend_sine(100, period=20, slope=0.5, amp=0.0, noise_std=0.0)
        np.testing.assert_allclose(ramp.values[0], 0.5 * t, atol=1e-12)

    def test_seeded_noise_reproducible(self):
        a = synth_trend_sine(64, seed=7).values
        b = synth_trend_sine(64, seed=7).values
        np.testing.assert_array_equal(a, b)
        c = synth_trend_sine(64, seed=8).values
        assert np.abs(a - c).max() > 0
