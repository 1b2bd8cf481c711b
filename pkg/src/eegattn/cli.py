"""Command-line entry point.

Subcommands: synth, preprocess, train-loso, personalize, evaluate,
gradcheck, plot. Data goes to files, diagnostics to stderr; exit status
0 means the command's postconditions hold, 2 flags configuration/usage
errors, 1 flags runtime failures.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import archive, reports
from .config import ConfigError, build_run_config
from .gradcheck import format_report, run_gradcheck
from .model import load_model, save_model
from .personalize import personalization_sweep
from .preprocess import build_dataset
from .recordings import CLASS_NAMES, read_manifest, write_recordings
from .synth import generate
from .train import aggregate_folds, evaluate, loso_split, train_fold


def _log(message):
    print(message, file=sys.stderr)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _config_from(args, **extra):
    overrides = {key: getattr(args, key) for key in (
        "seed", "subjects", "profile", "seconds_per_class",
        "filter_low_hz", "filter_high_hz", "filter_order",
        "model_size", "learning_rate", "batch_size", "max_epochs",
        "plateau_patience", "early_stop_patience", "precision",
        "ft_schedule", "ft_learning_rate", "ft_epochs", "jobs",
    ) if hasattr(args, key)}
    overrides.update(extra)
    return build_run_config(getattr(args, "config", None), overrides).validate()


def cmd_synth(args):
    rc = _config_from(args)
    spec = rc.synth_spec()
    os.makedirs(args.out, exist_ok=True)
    recordings = generate(spec)
    manifest = write_recordings(args.out, recordings)
    _log(f"wrote {len(recordings)} subjects x {len(recordings[0].segments)} segments "
         f"under {args.out} (manifest: {manifest})")
    return 0


def cmd_preprocess(args):
    rc = _config_from(args)
    manifest = _require_file(args.manifest, "manifest")
    recordings = read_manifest(manifest)
    windows = build_dataset(recordings, rc.filter_spec())
    if not windows:
        raise ConfigError("preprocessing produced no windows")
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    archive.save_windows(args.out, windows)
    _log(f"wrote {len(windows)} windows from {len(recordings)} subjects to {args.out}")
    return 0


def _train_one_fold(payload):
    """Worker for fold-level parallelism: trains and saves its checkpoint."""
    fold, train_cfg, model_cfg, ckpt_path = payload
    result = train_fold(fold, train_cfg, model_cfg)
    save_model(result.best_params, ckpt_path)
    result.best_params = None
    return result


def run_loso(windows, rc, out_dir, log_fn=None):
    """Train every fold, saving checkpoints and metrics records."""
    folds = loso_split(windows)
    train_cfg = rc.train_config()
    model_cfg = rc.model_config()
    payloads = [(fold, train_cfg, model_cfg,
                 os.path.join(out_dir, f"fold_{fold[0]}.model")) for fold in folds]
    results = []
    if rc.jobs > 1:
        with ProcessPoolExecutor(max_workers=rc.jobs) as pool:
            results = list(pool.map(_train_one_fold, payloads))
    else:
        for payload in payloads:
            fold = payload[0]
            result = train_fold(fold, train_cfg, model_cfg, log_fn=log_fn)
            save_model(result.best_params, payload[3])
            result.best_params = None
            results.append(result)
            if log_fn:
                log_fn(f"fold {fold[0]}: best accuracy "
                       f"{result.best_val_accuracy:.4f} at epoch {result.best_epoch}")
    for result in results:
        reports.write_fold_record(
            os.path.join(out_dir, f"fold_{result.held_out_subject}.txt"), result)
    aggregate = aggregate_folds(results)
    reports.write_aggregate_record(os.path.join(out_dir, "aggregate.txt"), aggregate)
    return results, aggregate


def cmd_train_loso(args):
    rc = _config_from(args)
    archive_path = _require_file(args.archive, "window archive")
    windows = archive.load_windows(archive_path)
    os.makedirs(args.out, exist_ok=True)
    _, aggregate = run_loso(windows, rc, args.out,
                            log_fn=_log if args.verbose else None)
    _log(f"LOSO mean accuracy {aggregate.mean_accuracy:.4f} "
         f"(SD {aggregate.sd_accuracy:.4f}) over {len(aggregate.per_fold)} folds; "
         f"records in {args.out}")
    return 0


def cmd_personalize(args):
    rc = _config_from(args)
    archive_path = _require_file(args.archive, "window archive")
    ckpt_dir = _require_dir(args.checkpoints, "checkpoint directory")
    windows = archive.load_windows(archive_path)
    subjects = sorted({w.subject_id for w in windows})
    base_models = {}
    for subject in subjects:
        path = os.path.join(ckpt_dir, f"fold_{subject}.model")
        if not os.path.isfile(path):
            raise ConfigError(f"missing per-fold base checkpoint for subject "
                              f"{subject}: {path}")
        base_models[subject] = load_model(path)
    os.makedirs(args.out, exist_ok=True)
    curves, aggregate = personalization_sweep(
        base_models, windows, rc.finetune_config(),
        log_fn=_log if args.verbose else None)
    for curve in curves:
        reports.write_curve_file(os.path.join(args.out, f"curve_{curve.subject}.tsv"),
                                 curve)
    reports.write_curve_aggregate(os.path.join(args.out, "curve_aggregate.tsv"),
                                  aggregate)
    _log(f"personalization sweep over {aggregate.n_subjects} subjects: "
         f"base {aggregate.base_mean_accuracy:.4f}, "
         f"best point {max(aggregate.mean_accuracy):.4f}, "
         f"sufficient at {aggregate.sufficient_seconds} s/class; "
         f"tables in {args.out}")
    return 0


def cmd_evaluate(args):
    _config_from(args)  # config (incl. mandatory seed) validates before any I/O
    model_path = _require_file(args.model, "model checkpoint")
    archive_path = _require_file(args.archive, "window archive")
    params = load_model(model_path)
    windows = archive.load_windows(archive_path)
    accuracy, confusion, loss = evaluate(params, windows)
    lines = ["record = evaluation",
             f"windows = {len(windows)}",
             f"accuracy = {accuracy!r}",
             f"mean_loss = {loss!r}"]
    for i, name in enumerate(CLASS_NAMES):
        lines.append(f"confusion_{name} = " + " ".join(str(int(v)) for v in confusion[i]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        _log(f"evaluation written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args):
    rc = _config_from(args)
    results = run_gradcheck(model_config=rc.model_config(), seed=rc.seed,
                            tolerance=args.tolerance,
                            samples_per_tensor=args.samples,
                            log_fn=_log if args.verbose else None)
    print(format_report(results, tolerance=args.tolerance))
    return 0 if all(r.passed for r in results) else 1


def cmd_plot(args):
    from . import plots

    metrics_dir = _require_dir(args.metrics, "metrics directory")
    out_dir = args.out or metrics_dir
    fold_paths = sorted(glob.glob(os.path.join(metrics_dir, "fold_*.txt")))
    curve_path = os.path.join(metrics_dir, "curve_aggregate.tsv")
    if not fold_paths and not os.path.isfile(curve_path):
        raise ConfigError(f"nothing to plot in {metrics_dir} "
                          f"(no fold_*.txt records, no curve_aggregate.tsv)")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fold_paths:
        records = [reports.read_record(p) for p in fold_paths]
        acc_svg = os.path.join(out_dir, "accuracy_by_subject.svg")
        plots.plot_fold_accuracies(records, acc_svg)
        written.append(acc_svg)
        loss_svg = os.path.join(out_dir, "loss_curves.svg")
        plots.plot_loss_curves(records, loss_svg)
        written.append(loss_svg)
        table = os.path.join(out_dir, "accuracy_by_subject.tsv")
        with open(table, "w") as fh:
            fh.write("subject\tbest_val_accuracy\n")
            for r in records:
                fh.write(f"{r['held_out_subject']}\t{r['best_val_accuracy']}\n")
        written.append(table)
    if os.path.isfile(curve_path):
        rows, meta = reports.read_curve_aggregate(curve_path)
        base = float(meta["base_mean_accuracy"]) if "base_mean_accuracy" in meta else None
        curve_svg = os.path.join(out_dir, "personalization_curve.svg")
        plots.plot_personalization_curve(rows, base, curve_svg)
        written.append(curve_svg)
    _log("wrote " + ", ".join(written))
    return 0


def _add_config_flags(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="run seed (mandatory here or in the file)")


def _add_train_flags(parser):
    parser.add_argument("--model-size", dest="model_size", choices=("tiny", "full"))
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--plateau-patience", dest="plateau_patience", type=int)
    parser.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    parser.add_argument("--precision", choices=("float64", "float32"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eegattn",
        description="EEG attention-state pipeline: synthesize, preprocess, "
                    "train, personalize, verify, plot.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic recordings + manifest")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int)
    p.add_argument("--profile", choices=("easy", "shifted"))
    p.add_argument("--seconds-per-class", dest="seconds_per_class", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="manifest -> binary window archive")
    _add_config_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="archive file to write")
    p.add_argument("--filter-low-hz", dest="filter_low_hz", type=float)
    p.add_argument("--filter-high-hz", dest="filter_high_hz", type=float)
    p.add_argument("--filter-order", dest="filter_order", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-loso", help="leave-one-subject-out training")
    _add_config_flags(p)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--jobs", type=int, help="parallel folds (default 1)")
    p.add_argument("--verbose", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_loso)

    p = sub.add_parser("personalize", help="fine-tuning sweep per held-out subject")
    _add_config_flags(p)
    p.add_argument("--archive", required=True)
    p.add_argument("--checkpoints", required=True, help="train-loso output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--ft-schedule", dest="ft_schedule",
                   help="comma-separated seconds per class, e.g. 10,20,30")
    p.add_argument("--ft-learning-rate", dest="ft_learning_rate", type=float)
    p.add_argument("--ft-epochs", dest="ft_epochs", type=int)
    p.add_argument("--precision", choices=("float64", "float32"))
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("evaluate", help="score a checkpoint against an archive")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", help="write the record here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check per model block")
    _add_config_flags(p)
    p.add_argument("--model-size", dest="model_size", choices=("tiny", "full"))
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=8,
                   help="elements checked per parameter tensor")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render SVG figures from metrics records")
    p.add_argument("--metrics", required=True, help="directory of records/tables")
    p.add_argument("--out", help="figure directory (default: metrics directory)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
