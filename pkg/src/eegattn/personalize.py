"""Transfer-learning personalization of a subject-independent base model.

A held-out subject contributes the chronologically earliest contiguous
seconds per class as the tuning slice; everything else (minus any window
that shares a raw sample with the slice) is the evaluation set. Sweeping
the slice size traces the accuracy-vs-calibration-data curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .model import model_forward
from .recordings import SAMPLE_RATE, WINDOW_LEN, WINDOW_STRIDE, AttentionClass
from .train import AdamState, adam_step, cross_entropy, evaluate


@dataclass
class FinetuneConfig:
    schedule: tuple = (10, 20, 30)   # seconds per class, strictly increasing
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    precision: str = "float64"

    def validate(self):
        if not self.schedule:
            raise ValueError("schedule is empty")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError(f"schedule must be strictly increasing, got {self.schedule}")
        if any(s % 10 != 0 or s <= 0 for s in self.schedule):
            raise ValueError(f"schedule entries must be positive multiples of 10 s, "
                             f"got {self.schedule}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def windows_per_slice(seconds):
    """Window count inside an S-second span: floor((S*128 - 128)/32) + 1."""
    return (int(seconds * SAMPLE_RATE) - WINDOW_LEN) // WINDOW_STRIDE + 1


def select_tuning_slice(subject_windows, seconds_per_class):
    """Split one subject's windows into (tuning, evaluation) sets.

    Tuning takes every window that lies fully inside the first
    seconds_per_class of the chronologically first segment of each class;
    windows sharing any raw sample with that span are dropped entirely, so
    tuning and evaluation are disjoint at the sample level.
    """
    span = int(seconds_per_class * SAMPLE_RATE)
    expected = windows_per_slice(seconds_per_class)
    by_class = {}
    for w in subject_windows:
        by_class.setdefault(w.label, []).append(w)
    missing = [c.display_name for c in AttentionClass if c not in by_class]
    if missing:
        raise ValueError(f"subject has no windows for class(es): {', '.join(missing)}")
    tuning, evaluation = [], []
    for cls, windows in sorted(by_class.items()):
        first_segment = min(w.segment_index for w in windows)
        in_span = [w for w in windows
                   if w.segment_index == first_segment and w.start + WINDOW_LEN <= span]
        if len(in_span) < expected:
            raise ValueError(
                f"class {cls.display_name}: only {len(in_span)} windows fit in the "
                f"first {seconds_per_class} s (need {expected}); not enough "
                f"contiguous signal")
        tuning.extend(in_span)
        for w in windows:
            if w.segment_index == first_segment and w.start < span:
                continue  # inside or straddling the tuning span
            evaluation.append(w)
    return tuning, evaluation


def fine_tune(base_params, tuning_windows, config, log_fn=None):
    """Continue training every layer on the tuning slice at a reduced rate.

    The base parameters are deep-copied first; batch normalization runs in
    training mode so running statistics adapt to the subject.
    """
    config.validate()
    params = base_params.copy().astype(config.dtype)
    if config.epochs == 0 or not tuning_windows:
        return params
    named = params.named_parameters()
    adam = AdamState()
    rng = np.random.default_rng(config.seed)
    x = np.stack([w.data for w in tuning_windows]).astype(config.dtype)
    y = np.array([int(w.label) for w in tuning_windows], dtype=np.int64)
    n = len(tuning_windows)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            cache = model_forward(Tensor(x[idx]), params, training=True)
            loss = cross_entropy(cache.probabilities, y[idx])
            loss.backward()
            adam_step(named, adam, config.learning_rate)
            epoch_loss += float(loss.data) * len(idx)
        if log_fn:
            log_fn(f"fine-tune epoch {epoch}: loss={epoch_loss / n:.4f}")
    return params


@dataclass
class PersonalizationPoint:
    seconds_per_class: int
    windows_per_class: int
    accuracy: float


@dataclass
class PersonalizationCurve:
    subject: str
    points: list = field(default_factory=list)


@dataclass
class SweepAggregate:
    """Mean +- standard error per schedule point across subjects."""

    seconds: list
    mean_accuracy: list
    std_error: list
    n_subjects: int
    sufficient_seconds: int
    base_mean_accuracy: float


def personalization_sweep(base_models, windows, config, log_fn=None):
    """Fine-tune each subject's base model on growing slices.

    base_models: held-out subject id -> ModelParams trained without that
    subject. Every schedule point is scored on one fixed evaluation set
    per subject (the remainder after the largest slice), so points are
    comparable. Returns per-subject curves and the cross-subject
    aggregate, flagging the smallest point whose mean accuracy is within
    one standard error of the maximum.
    """
    config.validate()
    max_seconds = max(config.schedule)
    curves = []
    base_accs = []
    point_accs = {s: [] for s in config.schedule}
    for subject in sorted(base_models):
        subject_windows = [w for w in windows if w.subject_id == subject]
        if not subject_windows:
            raise ValueError(f"no windows for held-out subject {subject!r}")
        _, evaluation = select_tuning_slice(subject_windows, max_seconds)
        base = base_models[subject]
        base_acc, _, _ = evaluate(base, evaluation)
        base_accs.append(base_acc)
        curve = PersonalizationCurve(subject=subject)
        for seconds in config.schedule:
            tuning, _ = select_tuning_slice(subject_windows, seconds)
            _assert_disjoint(tuning, evaluation, subject)
            tuned = fine_tune(base, tuning, config)
            acc, _, _ = evaluate(tuned, evaluation)
            curve.points.append(PersonalizationPoint(
                seconds_per_class=seconds,
                windows_per_class=windows_per_slice(seconds),
                accuracy=acc))
            point_accs[seconds].append(acc)
            if log_fn:
                log_fn(f"{subject} @ {seconds}s/class: tuned={acc:.4f} (base={base_acc:.4f})")
        curves.append(curve)
    means = [float(np.mean(point_accs[s])) for s in config.schedule]
    ses = [float(np.std(point_accs[s], ddof=1) / np.sqrt(len(point_accs[s])))
           if len(point_accs[s]) > 1 else 0.0
           for s in config.schedule]
    best = max(means)
    sufficient = next(s for s, m, se in zip(config.schedule, means, ses)
                      if m >= best - se)
    aggregate = SweepAggregate(seconds=list(config.schedule), mean_accuracy=means,
                               std_error=ses, n_subjects=len(curves),
                               sufficient_seconds=sufficient,
                               base_mean_accuracy=float(np.mean(base_accs)))
    return curves, aggregate


def _assert_disjoint(tuning, evaluation, subject):
    # leakage guard: no raw sample may appear on both sides
    spans = {}
    for w in tuning:
        spans.setdefault(w.segment_index, []).append((w.start, w.start + WINDOW_LEN))
    for w in evaluation:
        for lo, hi in spans.get(w.segment_index, ()):
            if w.start < hi and lo < w.start + WINDOW_LEN:
                raise AssertionError(f"subject {subject}: evaluation window at "
                                     f"segment {w.segment_index} offset {w.start} "
                                     f"overlaps a tuning window")
