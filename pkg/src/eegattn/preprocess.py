"""Raw recordings to labeled, normalized windows.

Pipeline order is fixed: zero-phase bandpass filter each whole segment,
epoch into 1-second windows with 32-sample stride, z-score each window
per channel. Segment boundaries are hard epoch boundaries, so no window
ever straddles two segments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .recordings import SAMPLE_RATE, WINDOW_LEN, WINDOW_STRIDE, LabeledWindow


@dataclass
class FilterSpec:
    """Bandpass design: 4th-order Butterworth, applied forward-backward."""

    low_hz: float = 0.2
    high_hz: float = 45.0
    order: int = 4
    design: str = "butterworth"

    def validate(self, sample_rate=SAMPLE_RATE):
        if self.design != "butterworth":
            raise ValueError(f"unsupported filter design {self.design!r}")
        if not 0 < self.low_hz < self.high_hz < sample_rate / 2:
            raise ValueError(f"need 0 < low ({self.low_hz}) < high ({self.high_hz}) "
                             f"< Nyquist ({sample_rate / 2})")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")
        return self

    @property
    def pad_len(self):
        # reflect padding of 3x the effective order (a bandpass doubles it)
        return 3 * 2 * self.order


def design_bandpass(spec, sample_rate=SAMPLE_RATE):
    """Second-order sections of the bandpass; shared by filter and oracle."""
    spec.validate(sample_rate)
    return signal.butter(spec.order, [spec.low_hz, spec.high_hz],
                         btype="bandpass", fs=sample_rate, output="sos")


def bandpass_response(spec, freqs_hz, sample_rate=SAMPLE_RATE):
    """Analytic squared-magnitude (forward-backward) response at freqs_hz."""
    sos = design_bandpass(spec, sample_rate)
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / sample_rate
    _, h = signal.sosfreqz(sos, worN=w)
    return np.abs(h) ** 2


def bandpass_filter(x, spec, sample_rate=SAMPLE_RATE):
    """Zero-phase bandpass of a channels x samples array.

    Forward-backward application per channel with reflect padding, so the
    output has no phase lag and the effective magnitude response is the
    squared single-pass response.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    min_len = spec.pad_len + 1
    if n < min_len:
        raise ValueError(f"segment too short to filter: {n} samples, "
                         f"need at least {min_len} (3x effective filter order + 1)")
    sos = design_bandpass(spec, sample_rate)
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=spec.pad_len)


def epoch_segment(samples, window=WINDOW_LEN, stride=WINDOW_STRIDE):
    """Slice a channels x N segment into fixed-length windows.

    Returns floor((N - window)/stride) + 1 windows starting at offsets
    0, stride, 2*stride, ...; a too-short segment yields an empty list.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    samples = np.asarray(samples)
    n = samples.shape[-1]
    if n < window:
        warnings.warn(f"segment of {n} samples is shorter than the {window}-sample "
                      f"window; producing no windows", stacklevel=2)
        return []
    count = (n - window) // stride + 1
    return [samples[:, i * stride:i * stride + window].copy() for i in range(count)]


def normalize_window(window):
    """Per-channel z-score within the window; constant channels map to zeros."""
    window = np.asarray(window, dtype=np.float64)
    mean = window.mean(axis=1, keepdims=True)
    std = window.std(axis=1, keepdims=True)
    centered = window - mean
    out = np.divide(centered, std, out=np.zeros_like(window), where=std > 0)
    return out


def build_dataset(recordings, spec=None, window=WINDOW_LEN, stride=WINDOW_STRIDE):
    """Filter, epoch, normalize and label every recording.

    Ordering is deterministic: subjects sorted by id, then segment order,
    then window offset. Filter and shape errors carry subject/segment
    context.
    """
    spec = spec or FilterSpec()
    spec.validate()
    windows = []
    for rec in sorted(recordings, key=lambda r: r.subject_id):
        rec.validate()
        for seg_idx, seg in enumerate(rec.segments):
            try:
                filtered = bandpass_filter(seg.samples, spec, rec.sample_rate)
            except ValueError as exc:
                raise ValueError(f"subject {rec.subject_id} segment {seg_idx} "
                                 f"({seg.label.display_name}): {exc}") from exc
            for w_idx, raw in enumerate(epoch_segment(filtered, window, stride)):
                windows.append(LabeledWindow(
                    subject_id=rec.subject_id,
                    label=seg.label,
                    data=normalize_window(raw),
                    segment_index=seg_idx,
                    start=w_idx * stride,
                ))
    return windows
