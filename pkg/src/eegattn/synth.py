"""Deterministic class-conditional synthetic EEG.

Each (subject, class) segment is pink background noise plus class-specific
band-limited oscillations on a class-specific channel subset. Subject
variability enters as a per-channel log-normal gain on the oscillations
(a pure channel gain would vanish under per-window z-scoring) and a
per-subject frequency offset shared by all classes, so within-subject
band separation survives while cross-subject positions move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .recordings import (
    CHANNEL_NAMES,
    SAMPLE_RATE,
    AttentionClass,
    EegRecording,
    Segment,
)

_CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNEL_NAMES)}


@dataclass(frozen=True)
class ClassBand:
    """One oscillatory component: channels, center frequency, width, strength."""

    channels: tuple
    center_hz: float
    bandwidth_hz: float
    amplitude: float


@dataclass
class SynthSpec:
    n_subjects: int
    seconds_per_class: object   # one duration, or a per-class mapping
    class_profiles: dict
    gain_sigma: float = 0.1
    freq_jitter_hz: float = 0.5
    noise_amplitude: float = 1.0
    seed: int = 0

    def seconds_for(self, cls):
        if isinstance(self.seconds_per_class, dict):
            return float(self.seconds_per_class[cls])
        return float(self.seconds_per_class)

    def validate(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if isinstance(self.seconds_per_class, dict):
            if set(self.seconds_per_class) != set(AttentionClass):
                raise ValueError("per-class seconds_per_class must cover all 5 classes")
        if any(self.seconds_for(cls) < 10 for cls in AttentionClass):
            raise ValueError("seconds_per_class must be >= 10")
        if self.gain_sigma < 0:
            raise ValueError("gain_sigma must be >= 0")
        if self.freq_jitter_hz < 0:
            raise ValueError("freq_jitter_hz must be >= 0")
        if self.noise_amplitude <= 0:
            raise ValueError("noise_amplitude must be positive")
        if set(self.class_profiles) != set(AttentionClass):
            raise ValueError("class_profiles must define all 5 attention classes")
        for cls, bands in self.class_profiles.items():
            if not bands:
                raise ValueError(f"class_profiles[{cls.display_name}] is empty")
            for band in bands:
                if not 0.5 < band.center_hz < 45:
                    raise ValueError(f"center_hz must be in (0.5, 45), got "
                                     f"{band.center_hz} for {cls.display_name}")
                if band.amplitude <= 0:
                    raise ValueError(f"amplitude must be positive for {cls.display_name}")
                for ch in band.channels:
                    if ch not in _CHANNEL_INDEX:
                        raise ValueError(f"unknown channel {ch!r} for {cls.display_name}")
        return self


# 'easy': each class owns a canonical band on its own electrode subset, so
# both spectral and topographic cues survive across subjects.
_EASY_BANDS = {
    AttentionClass.RELAXED: (ClassBand(("O1", "O2", "P7", "P8"), 10.0, 2.0, 1.2),),
    AttentionClass.SELECTIVE: (ClassBand(("AF3", "F3", "F4", "AF4"), 6.0, 2.0, 1.2),),
    AttentionClass.SUSTAINED: (ClassBand(("FC5", "FC6", "F7", "F8"), 16.0, 3.0, 1.2),),
    AttentionClass.ALTERNATING: (ClassBand(("T7", "T8", "P7", "P8"), 25.0, 4.0, 1.2),),
    AttentionClass.DIVIDED: (ClassBand(("O1", "O2", "T7", "T8"), 4.0, 1.5, 1.0),
                             ClassBand(("AF3", "AF4"), 21.0, 3.0, 1.0)),
}

# 'shifted': every class excites the same frontal+posterior union, and class
# identity lives in which frequency sits on which region. The per-subject
# frequency offset then moves one subject's classes onto another's, so
# cross-subject transfer genuinely degrades while within-subject structure
# stays trivially separable.
_FRONT = ("AF3", "F3", "F4", "AF4")
_BACK = ("O1", "O2", "P7", "P8")
_SHIFTED_BANDS = {
    AttentionClass.RELAXED: (ClassBand(_FRONT, 9.0, 2.5, 1.2),
                             ClassBand(_BACK, 5.0, 2.5, 1.2)),
    AttentionClass.SELECTIVE: (ClassBand(_FRONT, 5.0, 2.5, 1.2),
                               ClassBand(_BACK, 9.0, 2.5, 1.2)),
    AttentionClass.SUSTAINED: (ClassBand(_FRONT, 13.0, 2.5, 1.2),
                               ClassBand(_BACK, 18.0, 2.5, 1.2)),
    AttentionClass.ALTERNATING: (ClassBand(_FRONT, 18.0, 2.5, 1.2),
                                 ClassBand(_BACK, 13.0, 2.5, 1.2)),
    AttentionClass.DIVIDED: (ClassBand(_FRONT, 24.0, 2.5, 1.2),
                             ClassBand(_BACK, 24.0, 2.5, 1.2)),
}


def default_spec(n_subjects, profile="easy", seconds_per_class=60.0, seed=0):
    """Canonical-band profiles: 'easy' has mild subject effects, 'shifted'
    has strong gains and frequency offsets so personalization visibly helps."""
    if n_subjects < 2:
        raise ValueError("default_spec needs n_subjects >= 2")
    if profile == "easy":
        bands, gain_sigma, jitter = _EASY_BANDS, 0.1, 0.5
    elif profile == "shifted":
        bands, gain_sigma, jitter = _SHIFTED_BANDS, 0.5, 5.0
    else:
        raise ValueError(f"unknown profile {profile!r}; expected 'easy' or 'shifted'")
    return SynthSpec(
        n_subjects=n_subjects,
        seconds_per_class=seconds_per_class,
        class_profiles=dict(bands),
        gain_sigma=gain_sigma,
        freq_jitter_hz=jitter,
        seed=seed,
    ).validate()


def _pink_noise(rng, channels, n, fs=SAMPLE_RATE, f_lo=0.5, f_hi=45.0):
    """In-band 1/f noise, unit RMS per channel."""
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    shape = np.zeros_like(freqs)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    shape[band] = 1.0 / np.sqrt(freqs[band])
    spectrum = (rng.standard_normal((channels, freqs.size))
                + 1j * rng.standard_normal((channels, freqs.size))) * shape
    x = np.fft.irfft(spectrum, n=n, axis=1)
    rms = x.std(axis=1, keepdims=True)
    return x / rms


def _band_wave(rng, n, f0, bandwidth, fs=SAMPLE_RATE):
    """Unit-RMS narrowband noise centered at f0."""
    lo = max(f0 - bandwidth / 2, 0.3)
    hi = min(f0 + bandwidth / 2, fs / 2 - 1.0)
    sos = signal.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    warmup = 4 * fs
    white = rng.standard_normal(n + warmup)
    wave = signal.sosfilt(sos, white)[warmup:]
    return wave / wave.std()


def _jittered_center(center, jitter, bandwidth):
    low = 0.5 + bandwidth / 2
    high = 44.5 - bandwidth / 2
    return float(np.clip(center + jitter, low, high))


def generate(spec):
    """All subjects' recordings: one segment per class, 14 ch x 128 Hz.

    Bit-identical for a fixed spec: every random draw comes from a seed
    tree keyed by (subject, class)."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    subject_seeds = root.spawn(spec.n_subjects + 1)
    # stratified offsets spanning the full +-jitter range (shuffled), so any
    # two generated subjects reliably differ instead of depending on draw luck
    if spec.n_subjects > 1:
        offsets = np.linspace(-spec.freq_jitter_hz, spec.freq_jitter_hz, spec.n_subjects)
        np.random.default_rng(subject_seeds[-1]).shuffle(offsets)
    else:
        offsets = np.zeros(1)
    recordings = []
    for s in range(spec.n_subjects):
        subject_id = f"S{s + 1:02d}"
        effect_rng = np.random.default_rng(subject_seeds[s])
        gains = np.exp(spec.gain_sigma * effect_rng.standard_normal(len(CHANNEL_NAMES)))
        jitter = float(offsets[s])
        class_seeds = subject_seeds[s].spawn(len(AttentionClass))
        segments = []
        for cls in AttentionClass:
            rng = np.random.default_rng(class_seeds[int(cls)])
            n_samples = int(round(spec.seconds_for(cls) * SAMPLE_RATE))
            samples = _pink_noise(rng, len(CHANNEL_NAMES), n_samples) * spec.noise_amplitude
            for band in spec.class_profiles[cls]:
                f0 = _jittered_center(band.center_hz, jitter, band.bandwidth_hz)
                wave = _band_wave(rng, n_samples, f0, band.bandwidth_hz)
                for ch in band.channels:
                    idx = _CHANNEL_INDEX[ch]
                    samples[idx] += band.amplitude * gains[idx] * wave
            segments.append(Segment(label=cls, samples=samples))
        recordings.append(EegRecording(subject_id=subject_id, segments=segments).validate())
    return recordings
