import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgnas.data import (Record, extract_labels, load_windows, mae, read_ndjson, resample, save_windows,
                         split_per_subject, subject_folds, synth_generate, window, windows_from_records,
                         write_ndjson)


class TestResample:
    def test_same_rate_is_identity(self):
        x = np.arange(10.0)
        np.testing.assert_array_equal(resample(x, 125, 125), x)

    def test_length_ratio(self):
        assert resample(np.zeros(500), 250, 125).size == 250

    def test_sinusoid_downsample(self):
        t_in = np.arange(5000) / 1000.0
        out = resample(np.sin(2 * np.pi * t_in), 1000, 125)
        t_out = np.arange(out.size) / 125.0
        assert np.abs(out - np.sin(2 * np.pi * t_out)).max() < 1e-3

    def test_up_then_down_roundtrip(self):
        t = np.arange(1250) / 125.0
        x = np.sin(2 * np.pi * 1.3 * t) + 0.3 * np.cos(2 * np.pi * 0.4 * t)
        back = resample(resample(x, 125, 250), 250, 125)
        assert np.abs(back - x).max() < 1e-3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            resample([], 100, 125)


class TestWindow:
    def test_ten_seconds_two_windows(self):
        ws = window(Record("a", 125.0, np.random.default_rng(0).standard_normal(1250), sbp=120, dbp=80))
        assert ws.ppg.shape == (2, 625)

    def test_ppgbp_style_segment(self):
        rec = Record("a", 1000.0, np.sin(np.arange(2100) / 50.0), sbp=120, dbp=80)
        ws = windows_from_records([rec], seconds=2.1)
        assert ws.ppg.shape == (1, 263)

    def test_constant_signal_zscore_guard(self):
        ws = window(Record("a", 125.0, np.full(625, 3.0), sbp=120, dbp=80))
        np.testing.assert_array_equal(ws.ppg, 0.0)

    def test_short_record_warns(self):
        with pytest.warns(UserWarning, match="shorter"):
            ws = window(Record("a", 125.0, np.zeros(100), sbp=1, dbp=1))
        assert len(ws) == 0

    def test_requires_125hz(self):
        with pytest.raises(ValueError, match="resample"):
            window(Record("a", 250.0, np.zeros(2000), sbp=1, dbp=1))

    @given(n=st.integers(625, 5000), sec=st.sampled_from([1.0, 2.1, 5.0]))
    @settings(max_examples=30, deadline=None)
    def test_sample_conservation(self, n, sec):
        rec = Record("a", 125.0, np.random.default_rng(n).standard_normal(n), sbp=1, dbp=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ws = window(rec, sec)
        assert ws.ppg.size <= n
        assert n - len(ws) * ws.length < ws.length


class TestLabels:
    def test_extrema(self):
        assert extract_labels([80, 120, 75, 110]) == (120, 75)

    def test_constant(self):
        assert extract_labels(np.full(10, 100.0)) == (100, 100)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            extract_labels([1.0, np.nan])

    def test_programmed_generator_labels(self):
        rec = synth_generate(0, 1, 10.0, pressures=[(138.3, 73.3)])[0]
        for w in window(rec).abp:
            sbp, dbp = extract_labels(w)
            assert abs(sbp - 138.3) <= 0.5 and abs(dbp - 73.3) <= 0.5


class TestSynth:
    def test_deterministic(self):
        a, b = synth_generate(7, 3, 6.0), synth_generate(7, 3, 6.0)
        for ra, rb in zip(a, b):
            assert ra.ppg.tobytes() == rb.ppg.tobytes() and ra.abp.tobytes() == rb.abp.tobytes()

    def test_label_ranges_and_self_consistency(self):
        for rec in synth_generate(3, 40, 5.0):
            assert 90 <= rec.sbp <= 180 and 50 <= rec.dbp <= 110 and rec.dbp < rec.sbp
            sbp, dbp = extract_labels(window(rec).abp[0])
            assert abs(sbp - rec.sbp) <= 0.5 and abs(dbp - rec.dbp) <= 0.5


class TestSplits:
    def test_ten_subjects_five_folds(self):
        groups = subject_folds([f"s{i}" for i in range(10)], k=5, seed=0)
        assert [g.size for g in groups] == [2] * 5
        assert len(set(np.concatenate(groups))) == 10

    def test_no_leakage_and_coverage(self):
        subjects = np.repeat([f"s{i}" for i in range(12)], 3)
        folds = split_per_subject(subjects, k=5, seed=4)
        tested = set()
        for f in folds:
            tr, va, te = f.subject_sets(subjects)
            assert not (tr & te) and not (tr & va) and not (va & te)
            assert len(f.train) + len(f.val) + len(f.test) == subjects.size
            tested |= te
        assert tested == set(subjects)

    def test_seeded_determinism(self):
        subjects = np.repeat(np.arange(9).astype(str), 2)
        a, b = split_per_subject(subjects, seed=11), split_per_subject(subjects, seed=11)
        assert all(np.array_equal(x.test, y.test) for x, y in zip(a, b))

    def test_holdout_default_fractions(self):
        subjects = np.arange(20).astype(str)
        (s,) = split_per_subject(subjects, mode="holdout")
        assert (len(s.train), len(s.val), len(s.test)) == (14, 3, 3)

    def test_too_few_subjects(self):
        with pytest.raises(ValueError, match="at least"):
            split_per_subject(np.array(["a", "b"]), k=5)


class TestMae:
    def test_zero(self):
        assert mae([1, 2], [1, 2]) == 0

    def test_arithmetic(self):
        assert mae([10, 20], [12, 16]) == 3.0

    def test_streaming_oracle(self, rng):
        p, t = rng.uniform(50, 200, 1000), rng.uniform(50, 200, 1000)
        acc = 0.0
        for i, (a, b) in enumerate(zip(p, t), 1):
            acc += (abs(a - b) - acc) / i
        assert abs(mae(p, t) - acc) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mae([1, 2], [1])

    @given(c=st.floats(-100, 100))
    def test_shift_invariance(self, c):
        a, b = np.array([1.0, 5.0, 9.0]), np.array([2.0, 2.0, 2.0])
        assert mae(a + c, b + c) == pytest.approx(mae(a, b), abs=1e-9)


class TestFormats:
    def test_ndjson_roundtrip(self, tmp_path):
        recs = synth_generate(1, 2, 3.0) + [Record("p", 1000.0, [0.1, 0.2, 0.3], sbp=120.0, dbp=80.0)]
        write_ndjson(recs, tmp_path / "r.ndjson")
        back = list(read_ndjson(tmp_path / "r.ndjson"))
        assert [r.subject_id for r in back] == ["S0000", "S0001", "p"]
        np.testing.assert_array_equal(back[0].abp, recs[0].abp)
        assert back[2].abp is None and back[2].sbp == 120.0

    def test_record_needs_labels(self):
        with pytest.raises(ValueError, match="abp series or both"):
            Record("x", 125.0, [1.0, 2.0], sbp=120.0)

    def test_window_cache_roundtrip(self, tmp_path):
        ws = windows_from_records(synth_generate(2, 3, 11.0))
        save_windows(ws, tmp_path / "w.bin")
        back = load_windows(tmp_path / "w.bin")
        assert back.ppg.tobytes() == ws.ppg.tobytes()
        np.testing.assert_array_equal(back.subjects, ws.subjects)
        np.testing.assert_allclose(back.sbp, ws.sbp, rtol=1e-6)
        assert back.abp.tobytes() == ws.abp.tobytes()
