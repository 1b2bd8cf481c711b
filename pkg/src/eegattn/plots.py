"""Figure rendering for the report path: SVG files next to the tables."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .reports import parse_float_list  # noqa: E402

CHANCE = 0.2


def plot_fold_accuracies(fold_records, path):
    """Bar chart of best held-out accuracy per subject."""
    subjects = [r["held_out_subject"] for r in fold_records]
    accs = [float(r["best_val_accuracy"]) for r in fold_records]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(subjects) + 2), 3.2))
    ax.bar(subjects, accs, color="#4878a8")
    ax.axhline(CHANCE, color="gray", linestyle="--", linewidth=1, label="chance")
    ax.set_ylim(0, 1.0)
    ax.set_xlabel("held-out subject")
    ax.set_ylabel("validation accuracy")
    ax.set_title("Leave-one-subject-out accuracy")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_curves(fold_records, path):
    """Train/validation loss per epoch for every fold."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for record in fold_records:
        subject = record["held_out_subject"]
        val = parse_float_list(record["val_loss"])
        ax.plot(range(len(val)), val, label=f"{subject} val", linewidth=1.2)
        train = parse_float_list(record["train_loss"])
        ax.plot(range(len(train)), train, linestyle=":", linewidth=0.9)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy (dotted: train)")
    ax.set_title("Loss per epoch")
    if len(fold_records) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_personalization_curve(rows, base_accuracy, path):
    """Mean accuracy vs tuning seconds with standard-error bars.

    rows: (seconds, mean, std_error, sufficient_flag) tuples.
    """
    seconds = [r[0] for r in rows]
    means = [r[1] for r in rows]
    ses = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.errorbar(seconds, means, yerr=ses, marker="o", capsize=3,
                color="#4878a8", label="personalized")
    if base_accuracy is not None:
        ax.axhline(base_accuracy, color="#a85448", linestyle="--",
                   linewidth=1.2, label="subject-independent base")
    for s, m, _, flag in rows:
        if flag:
            ax.annotate("sufficient", (s, m), textcoords="offset points",
                        xytext=(6, -12), fontsize=8)
    ax.set_xlabel("tuning data per class (s)")
    ax.set_ylabel("accuracy on held-out evaluation set")
    ax.set_title("Personalization curve")
    ax.set_xticks(seconds)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
