"""Domain types for 14-channel EEG recordings and their on-disk text format.

One segment file per labeled task segment:

    subject=<id>
    label=<class-name>
    rate=128
    channels=AF3,F7,...
    <N lines of 14 comma-separated values, microvolts>

A manifest file lists segment files, one per line as
``<subject_id><TAB><path relative to the manifest>``. Values are written
with 17 significant digits so the decimal round trip is bit-exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 128
CHANNEL_NAMES = ("AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
                 "O2", "P8", "T8", "FC6", "F4", "F8", "AF4")
NUM_CHANNELS = len(CHANNEL_NAMES)
WINDOW_LEN = 128
WINDOW_STRIDE = 32  # 750 ms overlap at 128 Hz


class AttentionClass(enum.IntEnum):
    """The five attention states, with stable integer codes."""

    RELAXED = 0
    SELECTIVE = 1
    SUSTAINED = 2
    ALTERNATING = 3
    DIVIDED = 4

    @property
    def display_name(self):
        return self.name.capitalize()

    @classmethod
    def from_name(cls, name):
        try:
            return cls[name.upper()]
        except KeyError:
            valid = ", ".join(c.display_name for c in cls)
            raise ValueError(f"unknown attention class {name!r}; expected one of {valid}") from None


CLASS_NAMES = tuple(c.display_name for c in AttentionClass)
NUM_CLASSES = len(CLASS_NAMES)


@dataclass
class Segment:
    """One contiguous labeled stretch of signal, channels x samples."""

    label: AttentionClass
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != NUM_CHANNELS:
            raise ValueError(f"segment must be {NUM_CHANNELS} x N, got shape {self.samples.shape}")
        if self.samples.shape[1] < 1:
            raise ValueError("segment must contain at least one sample")


@dataclass
class EegRecording:
    """One subject's labeled continuous multichannel signal segments."""

    subject_id: str
    segments: list[Segment] = field(default_factory=list)
    sample_rate: int = SAMPLE_RATE
    channel_names: tuple = CHANNEL_NAMES

    def validate(self):
        if not self.subject_id:
            raise ValueError("recording has an empty subject_id")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"subject {self.subject_id}: sample rate must be "
                             f"{SAMPLE_RATE} Hz, got {self.sample_rate}")
        if tuple(self.channel_names) != CHANNEL_NAMES:
            raise ValueError(f"subject {self.subject_id}: channel names must be "
                             f"{','.join(CHANNEL_NAMES)}")
        if not self.segments:
            raise ValueError(f"subject {self.subject_id}: no segments")
        for seg in self.segments:
            if seg.samples.shape[0] != NUM_CHANNELS:
                raise ValueError(f"subject {self.subject_id}: segment has "
                                 f"{seg.samples.shape[0]} channels, expected {NUM_CHANNELS}")
        return self


@dataclass
class LabeledWindow:
    """A normalized 14 x 128 window, the unit of training and inference.

    segment_index and start record where in the source recording the
    window came from, which the personalization slicer needs to keep
    tuning and evaluation samples disjoint.
    """

    subject_id: str
    label: AttentionClass
    data: np.ndarray
    segment_index: int = 0
    start: int = 0


def _format_row(row):
    return ",".join("%.17g" % v for v in row)


def write_segment_file(path, subject_id, segment):
    with open(path, "w") as fh:
        fh.write(f"subject={subject_id}\n")
        fh.write(f"label={segment.label.display_name}\n")
        fh.write(f"rate={SAMPLE_RATE}\n")
        fh.write(f"channels={','.join(CHANNEL_NAMES)}\n")
        for t in range(segment.samples.shape[1]):
            fh.write(_format_row(segment.samples[:, t]))
            fh.write("\n")


def read_segment_file(path):
    """Parse one segment file, reporting the offending line on errors."""

    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 5:
        fail(len(lines), "truncated segment file (need 4 header lines plus data)")
    header = {}
    for i, key in enumerate(("subject", "label", "rate", "channels")):
        prefix = key + "="
        if not lines[i].startswith(prefix):
            fail(i + 1, f"expected '{key}=...', got {lines[i]!r}")
        header[key] = lines[i][len(prefix):]
    label = AttentionClass.from_name(header["label"])
    if header["rate"] != str(SAMPLE_RATE):
        fail(3, f"sample rate must be {SAMPLE_RATE}, got {header['rate']}")
    if header["channels"] != ",".join(CHANNEL_NAMES):
        fail(4, f"channel list must be {','.join(CHANNEL_NAMES)}")
    rows = []
    for lineno, line in enumerate(lines[4:], start=5):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != NUM_CHANNELS:
            fail(lineno, f"expected {NUM_CHANNELS} comma-separated values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            fail(lineno, f"non-numeric value in {line!r}")
    if not rows:
        fail(5, "segment contains no samples")
    samples = np.array(rows, dtype=np.float64).T
    return header["subject"], Segment(label=label, samples=samples)


def write_recordings(out_dir, recordings, manifest_name="manifest.txt"):
    """Write one directory per subject plus the manifest; returns manifest path."""
    import os

    entries = []
    for rec in recordings:
        rec.validate()
        subj_dir = os.path.join(out_dir, rec.subject_id)
        os.makedirs(subj_dir, exist_ok=True)
        for i, seg in enumerate(rec.segments):
            fname = f"{i:02d}_{seg.label.display_name}.txt"
            write_segment_file(os.path.join(subj_dir, fname), rec.subject_id, seg)
            entries.append((rec.subject_id, f"{rec.subject_id}/{fname}"))
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w") as fh:
        for subject, rel in entries:
            fh.write(f"{subject}\t{rel}\n")
    return manifest


def read_manifest(manifest_path):
    """Load all recordings listed in a manifest, grouped by subject."""
    import os

    base = os.path.dirname(os.path.abspath(manifest_path))
    by_subject = {}
    order = []
    with open(manifest_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{manifest_path}:{lineno}: expected "
                                 f"'<subject>\\t<path>', got {line!r}")
            subject, rel = parts
            file_subject, segment = read_segment_file(os.path.join(base, rel))
            if file_subject != subject:
                raise ValueError(f"{manifest_path}:{lineno}: manifest says subject "
                                 f"{subject!r} but file {rel} says {file_subject!r}")
            if subject not in by_subject:
                by_subject[subject] = []
                order.append(subject)
            by_subject[subject].append(segment)
    return [EegRecording(subject_id=s, segments=by_subject[s]).validate() for s in order]
