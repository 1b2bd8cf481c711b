"""EEG attention-state classification pipeline.

A self-contained library and CLI: synthetic 14-channel EEG generation,
zero-phase bandpass preprocessing into 1-second windows, a channel- and
temporal-attention 1-D CNN over a hand-rolled reverse-mode autodiff core,
leave-one-subject-out training, and transfer-learning personalization.
"""

from .autodiff import BatchNormState, Tensor, backward, no_grad
from .model import (
    ActivationCache,
    ModelConfig,
    ModelParams,
    channel_attention_forward,
    classify,
    hfe_forward,
    init_params,
    lfe_forward,
    load_model,
    model_forward,
    nta_forward,
    save_model,
)
from .personalize import (
    FinetuneConfig,
    PersonalizationCurve,
    fine_tune,
    personalization_sweep,
    select_tuning_slice,
)
from .preprocess import (
    FilterSpec,
    bandpass_filter,
    build_dataset,
    epoch_segment,
    normalize_window,
)
from .recordings import (
    CHANNEL_NAMES,
    SAMPLE_RATE,
    AttentionClass,
    EegRecording,
    LabeledWindow,
    Segment,
)
from .synth import ClassBand, SynthSpec, default_spec, generate
from .train import (
    AdamState,
    FoldResult,
    TrainConfig,
    adam_step,
    aggregate_folds,
    cross_entropy,
    evaluate,
    loso_split,
    plateau_scheduler,
    train_fold,
    welch_t_test,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationCache", "AdamState", "AttentionClass", "BatchNormState",
    "CHANNEL_NAMES", "ClassBand", "EegRecording", "FilterSpec", "FinetuneConfig",
    "FoldResult", "LabeledWindow", "ModelConfig", "ModelParams",
    "PersonalizationCurve", "SAMPLE_RATE", "Segment", "SynthSpec", "TrainConfig",
    "Tensor", "adam_step", "aggregate_folds", "backward", "bandpass_filter",
    "build_dataset", "channel_attention_forward", "classify", "cross_entropy",
    "default_spec", "epoch_segment", "evaluate", "fine_tune", "generate",
    "hfe_forward", "init_params", "lfe_forward", "load_model", "loso_split",
    "model_forward", "no_grad", "normalize_window", "nta_forward",
    "personalization_sweep", "plateau_scheduler", "save_model",
    "select_tuning_slice", "train_fold", "welch_t_test",
]
