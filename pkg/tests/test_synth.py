"""Synthetic-generator tests: determinism, separability, subject effects."""

import numpy as np
import pytest
from scipy import signal as sp_signal
from sklearn.linear_model import LogisticRegression

from eegattn.preprocess import FilterSpec, bandpass_filter, build_dataset
from eegattn.recordings import CHANNEL_NAMES, SAMPLE_RATE, AttentionClass
from eegattn.synth import ClassBand, SynthSpec, default_spec, generate

BANDS = ((2, 5), (5, 8), (8, 13), (13, 18), (18, 28), (28, 45))


def band_power_features(windows):
    """Log band power per (channel, canonical band) for each window."""
    feats = []
    for w in windows:
        freqs, psd = sp_signal.periodogram(w.data, fs=SAMPLE_RATE, axis=1)
        rows = []
        for lo, hi in BANDS:
            sel = (freqs >= lo) & (freqs < hi)
            rows.append(np.log(psd[:, sel].sum(axis=1) + 1e-12))
        feats.append(np.concatenate(rows))
    return np.array(feats)


def fit_and_score(train_windows, test_windows):
    clf = LogisticRegression(max_iter=2000)
    clf.fit(band_power_features(train_windows), [int(w.label) for w in train_windows])
    pred = clf.predict(band_power_features(test_windows))
    truth = np.array([int(w.label) for w in test_windows])
    return float((pred == truth).mean())


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        spec = default_spec(2, "easy", seconds_per_class=10, seed=5)
        a = generate(spec)
        b = generate(spec)
        for ra, rb in zip(a, b):
            assert ra.subject_id == rb.subject_id
            for sa, sb in zip(ra.segments, rb.segments):
                assert np.array_equal(sa.samples, sb.samples)

    def test_different_seeds_differ(self):
        a = generate(default_spec(2, "easy", seconds_per_class=10, seed=1))
        b = generate(default_spec(2, "easy", seconds_per_class=10, seed=2))
        assert not np.array_equal(a[0].segments[0].samples, b[0].segments[0].samples)

    def test_shapes_and_labels(self):
        recs = generate(default_spec(3, "easy", seconds_per_class=12, seed=0))
        assert [r.subject_id for r in recs] == ["S01", "S02", "S03"]
        for rec in recs:
            assert [s.label for s in rec.segments] == list(AttentionClass)
            for seg in rec.segments:
                assert seg.samples.shape == (14, 12 * SAMPLE_RATE)

    def test_per_class_durations(self):
        spec = default_spec(2, "easy", seed=0)
        spec.seconds_per_class = {
            AttentionClass.RELAXED: 10, AttentionClass.SELECTIVE: 12,
            AttentionClass.SUSTAINED: 14, AttentionClass.ALTERNATING: 16,
            AttentionClass.DIVIDED: 18}
        recs = generate(spec)
        lengths = [seg.samples.shape[1] for seg in recs[0].segments]
        assert lengths == [10 * 128, 12 * 128, 14 * 128, 16 * 128, 18 * 128]


class TestDefaultSpec:
    def test_profile_constants(self):
        assert default_spec(2, "easy").gain_sigma == 0.1
        assert default_spec(2, "shifted").gain_sigma == 0.5

    def test_all_classes_have_distinct_signatures(self):
        for profile in ("easy", "shifted"):
            spec = default_spec(2, profile)
            signatures = []
            for cls in AttentionClass:
                sig = frozenset((ch, band.center_hz)
                                for band in spec.class_profiles[cls]
                                for ch in band.channels)
                signatures.append(sig)
            assert len(set(signatures)) == 5

    def test_unknown_profile_rejected(self):
        with pytest.raises(ValueError, match="profile"):
            default_spec(2, "medium")

    def test_needs_two_subjects(self):
        with pytest.raises(ValueError, match="subjects"):
            default_spec(1, "easy")


class TestSpecValidation:
    def test_errors_name_the_field(self):
        spec = default_spec(2, "easy")
        spec.seconds_per_class = 5
        with pytest.raises(ValueError, match="seconds_per_class"):
            spec.validate()
        spec = default_spec(2, "easy")
        spec.gain_sigma = -1
        with pytest.raises(ValueError, match="gain_sigma"):
            spec.validate()
        spec = default_spec(2, "easy")
        spec.class_profiles = {
            **spec.class_profiles,
            AttentionClass.RELAXED: (ClassBand(("O1",), 50.0, 2.0, 1.0),),
        }
        with pytest.raises(ValueError, match="center_hz"):
            spec.validate()

    def test_bad_channel_rejected(self):
        spec = default_spec(2, "easy")
        spec.class_profiles = {
            **spec.class_profiles,
            AttentionClass.DIVIDED: (ClassBand(("XX",), 10.0, 2.0, 1.0),),
        }
        with pytest.raises(ValueError, match="XX"):
            spec.validate()


class TestSignalProperties:
    def test_energy_survives_preprocessing_band(self):
        recs = generate(default_spec(2, "easy", seconds_per_class=10, seed=3))
        spec = FilterSpec()
        for rec in recs:
            for seg in rec.segments:
                raw_energy = float((seg.samples ** 2).sum())
                kept = bandpass_filter(seg.samples, spec)
                assert float((kept ** 2).sum()) / raw_energy > 0.90

    def test_band_power_margin_over_noise_floor(self):
        """Class band power at each center frequency clears the 1/f noise
        floor by at least 6 dB on the band's channels."""
        spec = default_spec(2, "easy", seconds_per_class=30, seed=4)
        spec.gain_sigma = 0.0
        spec.freq_jitter_hz = 0.0
        recs = generate(spec)
        noise_only = SynthSpec(
            n_subjects=1, seconds_per_class=30,
            class_profiles={cls: (ClassBand(("AF3",), bands[0].center_hz,
                                            bands[0].bandwidth_hz, 1e-9),)
                            for cls, bands in spec.class_profiles.items()},
            gain_sigma=0.0, freq_jitter_hz=0.0, seed=4)
        noise_recs = generate(noise_only)
        noise_seg = noise_recs[0].segments[0].samples[5]  # no band lands on P7 here
        f_noise, psd_noise = sp_signal.welch(noise_seg, fs=SAMPLE_RATE, nperseg=512)
        for rec in recs:
            for seg in rec.segments:
                for band in spec.class_profiles[seg.label]:
                    idx = np.argmin(np.abs(f_noise - band.center_hz))
                    for ch in band.channels:
                        c = CHANNEL_NAMES.index(ch)
                        _, psd = sp_signal.welch(seg.samples[c], fs=SAMPLE_RATE, nperseg=512)
                        ratio = psd[idx] / psd_noise[idx]
                        assert ratio > 10 ** (6 / 10), (
                            f"{seg.label.display_name} {ch} @ {band.center_hz} Hz: "
                            f"{10 * np.log10(ratio):.1f} dB")

    def test_subject_power_profiles_differ(self):
        recs = generate(default_spec(2, "easy", seconds_per_class=20, seed=7))
        power = []
        for rec in recs:
            all_samples = np.concatenate([s.samples for s in rec.segments], axis=1)
            power.append((all_samples ** 2).mean(axis=1))
        ratio = power[0] / power[1]
        outside = np.sum((ratio < 0.9) | (ratio > 1.1))
        assert outside >= 3, f"only {outside} channels outside [0.9, 1.1]: {ratio}"


@pytest.fixture(scope="module")
def easy_windows():
    recs = generate(default_spec(4, "easy", seconds_per_class=20, seed=7))
    return build_dataset(recs)


class TestSeparability:

    def test_within_subject_oracle_accuracy(self, easy_windows):
        """Band-power + multinomial-logistic oracle on alternating halves."""
        scores = []
        for subject in sorted({w.subject_id for w in easy_windows}):
            ws = [w for w in easy_windows if w.subject_id == subject]
            train = [w for i, w in enumerate(ws) if i % 2 == 0]
            test = [w for i, w in enumerate(ws) if i % 2 == 1]
            scores.append(fit_and_score(train, test))
        assert float(np.mean(scores)) >= 0.80, scores

    def test_shifted_profile_breaks_cross_subject_transfer(self):
        recs = generate(default_spec(4, "shifted", seconds_per_class=20, seed=8))
        windows = build_dataset(recs)
        subjects = sorted({w.subject_id for w in windows})
        within = []
        for subject in subjects:
            ws = [w for w in windows if w.subject_id == subject]
            train = [w for i, w in enumerate(ws) if i % 2 == 0]
            test = [w for i, w in enumerate(ws) if i % 2 == 1]
            within.append(fit_and_score(train, test))
        train = [w for w in windows if w.subject_id in subjects[:2]]
        test = [w for w in windows if w.subject_id in subjects[2:]]
        cross = fit_and_score(train, test)
        assert np.mean(within) - cross >= 0.15, (np.mean(within), cross)
