from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adast.data import (DEFAULT_PRIORS, EPOCH_MAGIC, UNLABELED, DomainDataset, EpochRecord,
                        SyntheticShiftSpec, batches, generate_synthetic, load_dataset, n_batches,
                        save_dataset, spectral_distance, split_counts, subject_split)
from adast.errors import FormatError, SpecError, SplitError

SMALL = SyntheticShiftSpec(n_subjects=6, epochs_per_subject=30)


def toy(n_subjects=10, per=3, t=4, k=5, seed=0):
    rng = np.random.default_rng(seed)
    n = n_subjects * per
    return DomainDataset(np.repeat(np.arange(n_subjects), per), rng.standard_normal((n, t)),
                         rng.integers(0, k, n), t, k)


class TestSynthetic:
    def test_deterministic(self):
        for role in ("source", "target"):
            assert generate_synthetic(SMALL, role) == generate_synthetic(SMALL, role)

    def test_seed_matters(self):
        assert generate_synthetic(SMALL) != generate_synthetic(replace(SMALL, seed=1))

    def test_layout(self):
        ds = generate_synthetic(SMALL, "target")
        assert len(ds) == 180 and ds.epoch_len == 300 and ds.n_classes == 5
        assert ds.signals.dtype == np.float32
        assert list(ds.subjects) == list(range(6))
        assert ds.is_labeled()
        # z-scored per epoch
        np.testing.assert_allclose(ds.signals.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(ds.signals.std(axis=1), 1.0, atol=1e-4)

    def test_class_spectral_peak_in_band(self):
        spec = SyntheticShiftSpec(n_subjects=10, epochs_per_subject=50)
        ds = generate_synthetic(spec, "source")
        freqs = np.fft.rfftfreq(spec.epoch_len, d=1.0 / spec.sampling_rate_hz)
        for c, (lo, hi) in enumerate(spec.bands):
            mag = np.abs(np.fft.rfft(ds.signals[ds.stages == c].astype(float), axis=1)).mean(axis=0)
            assert lo <= freqs[np.argmax(mag)] <= hi, c

    def test_target_peak_moves_with_offset(self):
        spec = SyntheticShiftSpec(n_subjects=10, epochs_per_subject=50, resample_factor=1.0,
                                  frequency_offset_hz=0.5)
        ds = generate_synthetic(spec, "target")
        freqs = np.fft.rfftfreq(spec.epoch_len, d=1.0 / spec.sampling_rate_hz)
        lo, hi = spec.bands[2]
        mag = np.abs(np.fft.rfft(ds.signals[ds.stages == 2].astype(float), axis=1)).mean(axis=0)
        assert lo + 0.5 <= freqs[np.argmax(mag)] <= hi + 0.5

    def test_priors_within_three_sigma(self):
        spec = SyntheticShiftSpec()  # 4000 epochs
        ds = generate_synthetic(spec)
        n = len(ds)
        p = np.asarray(DEFAULT_PRIORS)
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(ds.class_histogram() - n * p) <= 3 * sigma)

    def test_neutral_shift_matches_source_generator(self):
        spec = SyntheticShiftSpec(n_subjects=10, epochs_per_subject=100)
        neutral = generate_synthetic(spec.neutral(), "target")
        src = generate_synthetic(spec, "source")
        other_src = generate_synthetic(replace(spec, seed=1), "source")
        shifted = generate_synthetic(spec, "target")
        # an unshifted target is as far from the source as another source draw is
        baseline = spectral_distance(src, other_src)
        assert spectral_distance(src, neutral) < 1.5 * baseline
        assert spectral_distance(src, shifted) > 3 * baseline

    def test_shift_distance_monotone(self):
        spec = SyntheticShiftSpec(n_subjects=10, epochs_per_subject=50)
        src = generate_synthetic(spec, "source")
        dists = []
        for s in (0.0, 0.5, 1.0):
            shifted = replace(spec, amplitude_scale=1.0 - 0.3 * s, frequency_offset_hz=0.25 * s,
                              noise_sigma=0.5 * s, resample_factor=1.0 - 0.2 * s)
            dists.append(spectral_distance(src, generate_synthetic(shifted, "target")))
        assert dists[0] < dists[1] < dists[2]

    @pytest.mark.parametrize("bad", [
        {"priors": (0.5, 0.6, 0.0, 0.0, 0.0)},
        {"priors": (0.2, 0.2, 0.2, 0.2, 0.3)},
        {"bands": ((0.3, 0.8),) * 5},
        {"n_subjects": 0},
    ])
    def test_invalid_spec(self, bad):
        with pytest.raises(SpecError):
            generate_synthetic(replace(SMALL, **bad))


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(SMALL, "target")
        save_dataset(ds, tmp_path / "d.adst")
        back = load_dataset(tmp_path / "d.adst")
        assert back == ds
        assert back.signals.tobytes() == ds.signals.tobytes()

    def test_empty(self, tmp_path):
        ds = DomainDataset(np.zeros(0), np.zeros((0, 7)), np.zeros(0), 7, 5)
        save_dataset(ds, tmp_path / "e.adst")
        back = load_dataset(tmp_path / "e.adst")
        assert back == ds and len(back) == 0 and back.epoch_len == 7

    def test_single_record(self, tmp_path):
        rec = EpochRecord(3, np.array([0.0, 1.0, 0.0, -1.0]), 2)
        ds = DomainDataset.from_records([rec], epoch_len=4)
        path = tmp_path / "one.adst"
        save_dataset(ds, path)
        # header (20 bytes) + u32 subject + u8 stage + 4 x f32
        assert path.stat().st_size == 20 + 4 + 1 + 16
        back = load_dataset(path).records[0]
        assert back.subject_id == 3 and back.stage == 2
        np.testing.assert_array_equal(back.signal, [0.0, 1.0, 0.0, -1.0])

    def test_sentinel_round_trips(self, tmp_path):
        ds = toy().without_labels()
        save_dataset(ds, tmp_path / "u.adst")
        back = load_dataset(tmp_path / "u.adst")
        assert np.all(back.stages == UNLABELED) and back == ds

    @settings(max_examples=20)
    @given(n=st.integers(0, 12), t=st.integers(1, 9), k=st.integers(2, 6), seed=st.integers(0, 999))
    def test_round_trip_property(self, tmp_path_factory, n, t, k, seed):
        rng = np.random.default_rng(seed)
        stages = rng.integers(0, k, n)
        stages[rng.random(n) < 0.2] = UNLABELED
        ds = DomainDataset(rng.integers(0, 2**32, n), rng.standard_normal((n, t)), stages, t, k)
        path = tmp_path_factory.mktemp("rt") / "x.adst"
        save_dataset(ds, path)
        assert load_dataset(path) == ds

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.adst"
        save_dataset(toy(), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(FormatError) as exc:
            load_dataset(path)
        assert exc.value.offset == 0

    def test_truncated(self, tmp_path):
        path = tmp_path / "x.adst"
        save_dataset(toy(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-1])
        with pytest.raises(FormatError) as exc:
            load_dataset(path)
        assert exc.value.offset == len(raw) - 1

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.adst"
        save_dataset(toy(), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_label_out_of_range(self, tmp_path):
        ds = toy(t=4)
        path = tmp_path / "x.adst"
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        rec_size = 4 + 1 + 4 * 4
        raw[20 + 2 * rec_size + 4] = 5  # stage of record 2, K = 5
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as exc:
            load_dataset(path)
        assert exc.value.offset == 20 + 2 * rec_size + 4

    def test_magic_constant(self):
        assert EPOCH_MAGIC == b"ADST"


class TestSplits:
    # 7 subjects: shares 4.2/1.4/1.4 floor to 4/1/1; the spare goes to the
    # largest remainder, val before test on a tie
    @pytest.mark.parametrize("n,want", [(10, [6, 2, 2]), (5, [3, 1, 1]), (20, [12, 4, 4]), (7, [4, 2, 1])])
    def test_counts(self, n, want):
        assert split_counts(n) == want

    @given(st.integers(5, 200))
    def test_counts_close_to_fractions(self, n):
        counts = split_counts(n)
        assert sum(counts) == n
        assert all(abs(c - f * n) <= 1 for c, f in zip(counts, (0.6, 0.2, 0.2)))

    def test_partition(self):
        ds = subject_split(toy(10), seed=3)
        parts = [ds.split_indices(s) for s in ("train", "val", "test")]
        assert [len(np.unique(ds.subject_ids[p])) for p in parts] == [6, 2, 2]
        allidx = np.concatenate(parts)
        assert sorted(allidx.tolist()) == list(range(len(ds)))
        for a in range(3):
            for b in range(a + 1, 3):
                assert not set(ds.subject_ids[parts[a]]) & set(ds.subject_ids[parts[b]])

    def test_deterministic(self):
        assert subject_split(toy(), seed=4).splits == subject_split(toy(), seed=4).splits

    def test_too_few_subjects(self):
        with pytest.raises(SplitError):
            subject_split(toy(4))

    def test_unsplit_dataset(self):
        with pytest.raises(SplitError):
            toy().split_indices("train")

    def test_without_labels_only_touches_split(self):
        ds = subject_split(toy(), seed=0)
        stripped = ds.without_labels("train")
        assert np.all(stripped.stages[ds.split_indices("train")] == UNLABELED)
        for s in ("val", "test"):
            idx = ds.split_indices(s)
            np.testing.assert_array_equal(stripped.stages[idx], ds.stages[idx])
        assert ds.is_labeled()  # original untouched


class TestBatches:
    def test_sizes(self):
        ds = toy(10, 1)
        sizes = [len(y) for _, y in batches(ds, "all", 4, 0, 0)]
        assert sizes == [4, 4, 2]
        assert n_batches(ds, "all", 4) == 3

    def test_single_batch(self):
        ds = toy(10, 1)
        ((x, y),) = list(batches(ds, "all", 50, 0, 0))
        assert x.shape == (10, 1, 4) and y.shape == (10,)

    def test_same_key_same_order(self):
        ds = toy()
        a = [y.tolist() for _, y in batches(ds, "all", 7, 5, 2)]
        b = [y.tolist() for _, y in batches(ds, "all", 7, 5, 2)]
        assert a == b

    def test_epoch_reshuffles(self):
        ds = toy(10, 5)
        a = [i for *_, idx in batches(ds, "all", 50, 5, 0, with_index=True) for i in idx]
        b = [i for *_, idx in batches(ds, "all", 50, 5, 1, with_index=True) for i in idx]
        assert sorted(a) == sorted(b) and a != b

    def test_split_restricted(self):
        ds = subject_split(toy(), seed=0)
        seen = np.concatenate([idx for *_, idx in batches(ds, "val", 3, 0, 0, with_index=True)])
        assert sorted(seen.tolist()) == ds.split_indices("val").tolist()
