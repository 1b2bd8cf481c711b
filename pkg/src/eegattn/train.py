"""Training loop, optimizer, scheduler, and leave-one-subject-out harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .autodiff import Tensor, clip_min, gather_rows, log, no_grad
from .model import ModelConfig, init_params, model_forward
from .recordings import NUM_CLASSES


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    decay_factor: float = 10.0
    lr_floor: float = 1e-5
    max_decays: int = 2
    early_stop_patience: int = 15
    seed: int = 0
    precision: str = "float64"

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decay_factor <= 1:
            raise ValueError("decay_factor must be > 1")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def cross_entropy(probabilities, labels):
    """Mean negative log probability of the true class.

    probabilities: Tensor [B, 5] of rows summing to 1; labels: ints 0-4.
    Probabilities are clamped to >= 1e-12 before the log.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probabilities.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match batch "
                         f"{probabilities.shape[0]}")
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ValueError(f"labels must be in 0..{NUM_CLASSES - 1}, "
                         f"got range [{labels.min()}, {labels.max()}]")
    picked = gather_rows(probabilities, labels)
    return -log(clip_min(picked, 1e-12)).mean()


@dataclass
class AdamState:
    """First/second moment estimates per named parameter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(named_params, state, lr):
    """One Adam update with bias correction over name -> Tensor params.

    Tensors whose .grad is unset are treated as zero-gradient (unchanged).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for name, param in named_params.items():
        if param.grad is None:
            continue
        g = param.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


class PlateauTracker:
    """Divide the learning rate by `factor` after `patience` epochs without
    a validation-loss improvement greater than min_delta; at most
    max_decays decays, never below the floor."""

    def __init__(self, initial_lr, patience=5, min_delta=1e-4, factor=10.0,
                 floor=1e-5, max_decays=2):
        self.lr = initial_lr
        self.patience = patience
        self.min_delta = min_delta
        self.factor = factor
        self.floor = floor
        self.max_decays = max_decays
        self.best = np.inf
        self.wait = 0
        self.decays = 0
        self.events = []

    def step(self, val_loss, epoch=None):
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience and self.decays < self.max_decays:
                self.lr = max(self.lr / self.factor, self.floor)
                self.decays += 1
                self.wait = 0
                self.events.append((epoch if epoch is not None else -1, self.lr))
        return self.lr


def plateau_scheduler(val_loss_history, patience, min_delta, current_lr,
                      factor=10.0, floor=1e-5, max_decays=2):
    """Replay a validation-loss history through the plateau rule.

    current_lr is the rate in effect at the start of the history; the
    returned rate reflects every decay the history justifies (the wait
    counter resets after each decay).
    """
    if not len(val_loss_history):
        raise ValueError("validation-loss history is empty")
    tracker = PlateauTracker(current_lr, patience=patience, min_delta=min_delta,
                             factor=factor, floor=floor, max_decays=max_decays)
    for loss in val_loss_history:
        tracker.step(loss)
    return tracker.lr


@dataclass
class FoldResult:
    """Per-fold metrics of one LOSO (or fine-tuning) run."""

    held_out_subject: str
    train_loss: list
    train_accuracy: list
    val_loss: list
    val_accuracy: list
    best_epoch: int
    best_val_accuracy: float
    confusion: np.ndarray
    lr_events: list
    best_params: object = None


def loso_split(windows):
    """One (train, validation) fold per subject, validation = that subject."""
    subjects = sorted({w.subject_id for w in windows})
    if len(subjects) < 2:
        raise ValueError(f"leave-one-subject-out needs >= 2 subjects, got {len(subjects)}")
    folds = []
    for held_out in subjects:
        train = [w for w in windows if w.subject_id != held_out]
        val = [w for w in windows if w.subject_id == held_out]
        folds.append((held_out, train, val))
    return folds


def _stack(windows, dtype):
    x = np.stack([w.data for w in windows]).astype(dtype)
    y = np.array([int(w.label) for w in windows], dtype=np.int64)
    return x, y


def evaluate(params, windows, batch_size=256, dtype=None):
    """Eval-mode accuracy, 5x5 confusion matrix (rows = true class), mean loss.

    Predictions break argmax ties toward the lowest class index.
    """
    dtype = dtype or params.classifier.weight.data.dtype
    x, y = _stack(windows, dtype)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    total_loss = 0.0
    with no_grad():
        for lo in range(0, len(windows), batch_size):
            xb = Tensor(x[lo:lo + batch_size])
            yb = y[lo:lo + batch_size]
            probs = model_forward(xb, params, training=False).probabilities
            total_loss += float(cross_entropy(probs, yb).data) * len(yb)
            pred = probs.data.argmax(axis=1)
            np.add.at(confusion, (yb, pred), 1)
    accuracy = float(np.trace(confusion)) / max(len(windows), 1)
    return accuracy, confusion, total_loss / max(len(windows), 1)


def train_fold(fold, config, model_config=None, initial_params=None, log_fn=None):
    """Train on one fold and return metrics plus the best-accuracy checkpoint.

    fold: (held_out_subject, train windows, validation windows).
    Deterministic under config.seed and precision: seeded per-epoch
    shuffling, single-threaded updates, lowest-index argmax tie-break.
    """
    held_out, train_windows, val_windows = fold
    if not train_windows or not val_windows:
        raise ValueError(f"fold {held_out!r} has an empty side "
                         f"(train={len(train_windows)}, val={len(val_windows)})")
    assert all(w.subject_id != held_out for w in train_windows), \
        f"fold {held_out!r}: training set contains the held-out subject"
    config.validate()
    model_config = model_config or ModelConfig.tiny()
    dtype = config.dtype
    if initial_params is None:
        params = init_params(config.seed, model_config, dtype=dtype)
    else:
        params = initial_params.copy().astype(dtype)
    named = params.named_parameters()
    adam = AdamState()
    tracker = PlateauTracker(config.learning_rate, patience=config.plateau_patience,
                             min_delta=config.plateau_min_delta,
                             factor=config.decay_factor, floor=config.lr_floor,
                             max_decays=config.max_decays)
    x_train, y_train = _stack(train_windows, dtype)
    rng = np.random.default_rng(config.seed)
    n = len(train_windows)
    lr = config.learning_rate

    history = {"train_loss": [], "train_accuracy": [], "val_loss": [], "val_accuracy": []}
    best_epoch = -1
    best_acc = -1.0
    best_params = None
    best_confusion = None
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = Tensor(x_train[idx])
            yb = y_train[idx]
            try:
                cache = model_forward(xb, params, training=True)
                loss = cross_entropy(cache.probabilities, yb)
                loss.backward()
            except (ValueError, FloatingPointError) as exc:
                raise RuntimeError(f"fold {held_out}: epoch {epoch} batch "
                                   f"{lo // config.batch_size}: {exc}") from exc
            adam_step(named, adam, lr)
            epoch_loss += float(loss.data) * len(idx)
            epoch_correct += int((cache.probabilities.data.argmax(axis=1) == yb).sum())
        val_acc, confusion, val_loss = evaluate(params, val_windows, dtype=dtype)
        history["train_loss"].append(epoch_loss / n)
        history["train_accuracy"].append(epoch_correct / n)
        history["val_loss"].append(val_loss)
        history["val_accuracy"].append(val_acc)
        lr = tracker.step(val_loss, epoch=epoch)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = params.copy()
            best_confusion = confusion
        if log_fn:
            log_fn(f"fold {held_out} epoch {epoch}: train_loss={epoch_loss / n:.4f} "
                   f"val_acc={val_acc:.4f} lr={lr:g}")
        if epoch - best_epoch >= config.early_stop_patience:
            break
    return FoldResult(
        held_out_subject=held_out,
        train_loss=history["train_loss"],
        train_accuracy=history["train_accuracy"],
        val_loss=history["val_loss"],
        val_accuracy=history["val_accuracy"],
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        confusion=best_confusion,
        lr_events=list(tracker.events),
        best_params=best_params,
    )


def welch_t_test(xs, ys):
    """Two-sample Welch t statistic and two-sided p-value."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    nx, ny = len(xs), len(ys)
    vx = xs.var(ddof=1) / nx
    vy = ys.var(ddof=1) / ny
    denom = np.sqrt(vx + vy)
    if denom == 0:
        return 0.0, 1.0
    t = (xs.mean() - ys.mean()) / denom
    df = (vx + vy) ** 2 / (vx ** 2 / (nx - 1) + vy ** 2 / (ny - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(p)


@dataclass
class FoldAggregate:
    mean_accuracy: float
    sd_accuracy: float
    per_fold: list           # (subject, accuracy) rows
    t_statistic: float = None
    p_value: float = None


def aggregate_folds(results, baseline=None):
    """Mean and Bessel-corrected SD of fold accuracies, plus an optional
    Welch t test against a second result set."""
    if len(results) < 2:
        raise ValueError("aggregation needs at least 2 folds")
    accs = np.array([r.best_val_accuracy for r in results], dtype=np.float64)
    per_fold = [(r.held_out_subject, float(r.best_val_accuracy)) for r in results]
    agg = FoldAggregate(mean_accuracy=float(accs.mean()),
                        sd_accuracy=float(accs.std(ddof=1)),
                        per_fold=per_fold)
    if baseline is not None:
        base = np.array([r.best_val_accuracy for r in baseline], dtype=np.float64)
        agg.t_statistic, agg.p_value = welch_t_test(accs, base)
    return agg
