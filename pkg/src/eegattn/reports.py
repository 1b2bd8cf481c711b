"""Structured-text metrics records and delimited curve tables.

Fold and aggregate records are ``key = value`` text with stable field
names; floats are written with repr so identical runs produce byte
identical files. Personalization curves are tab-separated tables.
"""

from __future__ import annotations

from .recordings import CLASS_NAMES


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _float_list(values):
    return " ".join(repr(float(v)) for v in values)


def write_fold_record(path, result):
    with open(path, "w") as fh:
        fh.write("record = fold\n")
        fh.write(f"held_out_subject = {result.held_out_subject}\n")
        fh.write(f"epochs_run = {len(result.val_loss)}\n")
        fh.write(f"best_epoch = {result.best_epoch}\n")
        fh.write(f"best_val_accuracy = {result.best_val_accuracy!r}\n")
        fh.write(f"val_window_count = {int(result.confusion.sum())}\n")
        events = " ".join(f"{epoch}:{lr!r}" for epoch, lr in result.lr_events) or "none"
        fh.write(f"lr_events = {events}\n")
        fh.write(f"train_loss = {_float_list(result.train_loss)}\n")
        fh.write(f"train_accuracy = {_float_list(result.train_accuracy)}\n")
        fh.write(f"val_loss = {_float_list(result.val_loss)}\n")
        fh.write(f"val_accuracy = {_float_list(result.val_accuracy)}\n")
        for i, name in enumerate(CLASS_NAMES):
            row = " ".join(str(int(v)) for v in result.confusion[i])
            fh.write(f"confusion_{name} = {row}\n")


def write_aggregate_record(path, aggregate):
    with open(path, "w") as fh:
        fh.write("record = aggregate\n")
        fh.write(f"n_folds = {len(aggregate.per_fold)}\n")
        fh.write(f"mean_accuracy = {aggregate.mean_accuracy!r}\n")
        fh.write(f"sd_accuracy = {aggregate.sd_accuracy!r}\n")
        for subject, acc in aggregate.per_fold:
            fh.write(f"fold_{subject}_accuracy = {acc!r}\n")
        if aggregate.t_statistic is not None:
            fh.write(f"t_statistic = {aggregate.t_statistic!r}\n")
            fh.write(f"p_value = {aggregate.p_value!r}\n")


def read_record(path):
    """Parse a key = value record back into a dict of strings."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def parse_float_list(raw):
    return [float(v) for v in raw.split()] if raw and raw != "none" else []


def write_curve_file(path, curve):
    with open(path, "w") as fh:
        fh.write("subject\tseconds_per_class\twindows_per_class\taccuracy\n")
        for p in curve.points:
            fh.write(f"{curve.subject}\t{p.seconds_per_class}\t"
                     f"{p.windows_per_class}\t{p.accuracy!r}\n")


def write_curve_aggregate(path, aggregate):
    with open(path, "w") as fh:
        fh.write(f"# base_mean_accuracy = {aggregate.base_mean_accuracy!r}\n")
        fh.write(f"# n_subjects = {aggregate.n_subjects}\n")
        fh.write(f"# sufficient_seconds = {aggregate.sufficient_seconds}\n")
        fh.write("seconds_per_class\tmean_accuracy\tstd_error\tsufficient\n")
        for s, m, se in zip(aggregate.seconds, aggregate.mean_accuracy,
                            aggregate.std_error):
            flag = 1 if s == aggregate.sufficient_seconds else 0
            fh.write(f"{s}\t{m!r}\t{se!r}\t{flag}\n")


def read_curve_aggregate(path):
    """Returns (rows, meta): rows of (seconds, mean, se, flag), meta dict."""
    rows = []
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, value = (p.strip() for p in line[1:].split("=", 1))
                meta[key] = value
            elif line and not line.startswith("seconds_per_class"):
                s, m, se, flag = line.split("\t")
                rows.append((int(s), float(m), float(se), int(flag)))
    return rows, meta


def read_curve_file(path):
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            subject, s, n, acc = line.strip().split("\t")
            rows.append((subject, int(s), int(n), float(acc)))
    return rows
