import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmamba.data import (
    CSVFormatError,
    Scaler,
    SeriesTable,
    SplitSpec,
    coupled_sinusoids,
    load_csv,
    mae,
    make_windows,
    mse,
    persistence_forecast,
    split,
    window_count,
    write_csv,
)
from fmamba.model import DATASETS
from fmamba.tensor import Rng


def table(values):
    values = np.asarray(values, dtype=float)
    return SeriesTable([f"v{i}" for i in range(values.shape[1])], values)


class TestLoadCsv:
    def test_headerless_shape(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1,2\n3,4\n5,6\n")
        t = load_csv(p, has_header=False)
        assert t.values.shape == (3, 2)
        np.testing.assert_array_equal(t.values[:, 1], [2, 4, 6])

    def test_bad_cell_position(self, tmp_path):
        p = tmp_path / "t.csv"
        lines = ["1,2"] * 6 + ["1,abc"]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(CSVFormatError) as err:
            load_csv(p, has_header=False)
        assert (err.value.row, err.value.column) == (7, 2)
        assert "row 7, column 2" in str(err.value)

    def test_ragged(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n3\n")
        with pytest.raises(CSVFormatError, match="row 2"):
            load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CSVFormatError):
            load_csv(tmp_path / "absent.csv")

    def test_non_finite(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a\n1\nnan\n")
        with pytest.raises(CSVFormatError):
            load_csv(p)

    def test_timestamp_column_kept_as_labels(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n")
        t = load_csv(p, timestamp_column="date")
        assert t.names == ["a", "b"]
        assert t.timestamps == ["2020-01-01", "2020-01-02"]
        np.testing.assert_array_equal(t.values, [[1, 2], [3, 4]])

    def test_write_then_load_is_exact(self, tmp_path):
        values = Rng(0).normal((5, 3))
        write_csv(tmp_path / "o.csv", ["x", "y", "z"], values)
        np.testing.assert_array_equal(load_csv(tmp_path / "o.csv").values, values)


class TestSplit:
    def test_electricity_lengths(self):
        lengths = DATASETS["Electricity"]["split"]
        assert lengths == (18317, 2633, 5261)
        segs = split(table(np.zeros((26304, 1))), SplitSpec(lengths=lengths))
        assert tuple(s.length for s in segs) == lengths

    def test_ratios(self):
        segs = split(table(np.arange(10.0)[:, None]), SplitSpec(ratios=(0.6, 0.2, 0.2)))
        assert tuple(s.length for s in segs) == (6, 2, 2)
        np.testing.assert_array_equal(segs[2].values[:, 0], [8, 9])

    def test_oversize(self):
        with pytest.raises(ValueError, match="exceeds"):
            split(table(np.zeros((10, 1))), SplitSpec(lengths=(6, 3, 3)))

    def test_lookback_overhang(self):
        train, val, test = split(table(np.arange(20.0)[:, None]), SplitSpec(lengths=(10, 5, 5)), lookback=3)
        assert train.values[-1, 0] == 9
        np.testing.assert_array_equal(val.values[:, 0], np.arange(7, 15))
        np.testing.assert_array_equal(test.values[:, 0], np.arange(12, 20))

    def test_spec_needs_one_form(self):
        with pytest.raises(ValueError):
            SplitSpec()
        with pytest.raises(ValueError):
            SplitSpec(lengths=(1, 1, 1), ratios=(0.5, 0.2, 0.2))


class TestWindows:
    def test_count(self):
        assert window_count(10, 4, 2) == 5
        batches = list(make_windows(np.zeros((10, 1)), 4, 2, batch_size=2))
        assert [len(b) for b in batches] == [2, 2, 1]

    def test_exact_fit_is_one_window(self):
        assert sum(len(b) for b in make_windows(np.zeros((6, 2)), 4, 2, batch_size=8)) == 1

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            list(make_windows(np.zeros((5, 1)), 4, 2, batch_size=1))

    def test_seeded_shuffle(self):
        data = np.arange(40.0)[:, None]
        a = [b.starts.tolist() for b in make_windows(data, 4, 2, 8, shuffle=True, rng=Rng(7))]
        b = [b.starts.tolist() for b in make_windows(data, 4, 2, 8, shuffle=True, rng=Rng(7))]
        assert a == b
        assert sorted(sum(a, [])) == list(range(35))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(8, 60), st.integers(1, 5), st.integers(1, 5), st.integers(1, 9), st.integers(0, 1000))
    def test_targets_follow_inputs(self, T_seg, L, tau, bs, seed):
        data = np.arange(float(T_seg))[:, None] * np.array([1.0, -1.0])
        if T_seg < L + tau:
            return
        for batch in make_windows(data, L, tau, bs, shuffle=True, rng=Rng(seed)):
            np.testing.assert_array_equal(batch.inputs[:, 0, 0], batch.starts)
            np.testing.assert_array_equal(batch.targets[:, 0, 0], batch.starts + L)
            assert batch.targets[:, -1, 0].max() <= T_seg - 1


class TestMetrics:
    def test_equal(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0 and mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit(self):
        assert mse([0.0, 0.0], [1.0, 1.0]) == 1.0 and mae([0.0, 0.0], [1.0, 1.0]) == 1.0

    def test_hand_values(self):
        assert mse([0.0, 3.0], [1.0, 1.0]) == 2.5
        assert mae([0.0, 3.0], [1.0, 1.0]) == 1.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            mse(np.zeros(3), np.zeros(4))


class TestScaler:
    def test_uses_training_statistics_only(self):
        train = Rng(0).normal((50, 3))
        s1 = Scaler().fit(train)
        _ = Scaler().fit(np.vstack([train, 1e6 * np.ones((5, 3))]))
        s2 = Scaler().fit(train)
        np.testing.assert_array_equal(s1.mean, s2.mean)
        np.testing.assert_array_equal(s1.std, s2.std)

    def test_constant_column_floor(self):
        s = Scaler().fit(np.ones((4, 2)))
        assert np.all(s.std == 1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1e3))
    def test_roundtrip(self, seed, scale):
        x = Rng(seed).normal((20, 4)) * scale
        s = Scaler().fit(x[:10])
        assert np.max(np.abs(s.inverse_transform(s.transform(x)) - x)) < 1e-10 * max(1.0, scale)


class TestSynthetic:
    def test_deterministic(self):
        np.testing.assert_array_equal(coupled_sinusoids(3, 50, seed=1), coupled_sinusoids(3, 50, seed=1))

    def test_persistence_repeats_last_row(self):
        x = np.arange(12.0).reshape(1, 4, 3)
        np.testing.assert_array_equal(persistence_forecast(x, 2)[0], [[9, 10, 11], [9, 10, 11]])
