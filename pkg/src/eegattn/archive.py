"""Binary window archive: the preprocess output consumed by training.

Little-endian, versioned magic header, then subject/class string tables,
per-window provenance records, and one contiguous float64 block of
window data. Text round trips of tens of thousands of 14 x 128 windows
are impractically slow; this loads in one read.
"""

from __future__ import annotations

import struct

import numpy as np

from .recordings import CLASS_NAMES, AttentionClass, LabeledWindow

ARCHIVE_MAGIC = b"ATNWIN\x01\x00"
ARCHIVE_VERSION = 1


def _write_string_table(fh, strings):
    fh.write(struct.pack("<I", len(strings)))
    for s in strings:
        raw = s.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)


def _read_string_table(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    out = []
    for _ in range(count):
        (n,) = struct.unpack("<H", fh.read(2))
        out.append(fh.read(n).decode("utf-8"))
    return out


def save_windows(path, windows):
    if not windows:
        raise ValueError("refusing to write an empty window archive")
    channels, length = windows[0].data.shape
    subjects = sorted({w.subject_id for w in windows})
    subject_idx = {s: i for i, s in enumerate(subjects)}
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<IIHH", ARCHIVE_VERSION, len(windows), channels, length))
        _write_string_table(fh, subjects)
        _write_string_table(fh, list(CLASS_NAMES))
        for w in windows:
            fh.write(struct.pack("<IBII", subject_idx[w.subject_id], int(w.label),
                                 w.segment_index, w.start))
        block = np.stack([w.data for w in windows]).astype("<f8", copy=False)
        fh.write(np.ascontiguousarray(block).tobytes())


def load_windows(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not a window archive (bad magic {magic!r})")
        version, count, channels, length = struct.unpack("<IIHH", fh.read(12))
        if version != ARCHIVE_VERSION:
            raise ValueError(f"{path}: unsupported archive version {version}")
        subjects = _read_string_table(fh)
        class_names = _read_string_table(fh)
        if class_names != list(CLASS_NAMES):
            raise ValueError(f"{path}: class table {class_names} does not match "
                             f"{list(CLASS_NAMES)}")
        records = [struct.unpack("<IBII", fh.read(13)) for _ in range(count)]
        data = np.frombuffer(fh.read(count * channels * length * 8), dtype="<f8")
    data = data.reshape(count, channels, length)
    windows = []
    for i, (subj, label, segment, start) in enumerate(records):
        windows.append(LabeledWindow(subject_id=subjects[subj],
                                     label=AttentionClass(label),
                                     data=data[i].copy(),
                                     segment_index=segment,
                                     start=start))
    return windows
