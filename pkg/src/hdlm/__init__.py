"""Hierarchical report generation with a dual word decoder.

The package is self-contained: a reverse-mode autodiff tensor core, the
attention/LSTM model, Adam training with binary checkpoints, greedy
inference, MT-style evaluation metrics, and distinctness-gated checkpoint
selection, exercised end to end on a synthetic long-tail corpus.
"""

from .tensor import (
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    finite_difference_check,
    finite_difference_report,
    gradient_audit,
    seeded_rng,
)
from .data import (
    BOS_ID,
    ConfigError,
    CorpusFormatError,
    EOS_ID,
    PAD_ID,
    ReportRecord,
    SynthConfig,
    SynthResult,
    UNK_ID,
    Vocabulary,
    auto_annotate_abnormal,
    build_vocab,
    count_below,
    load_corpus,
    load_embeddings,
    load_features,
    load_vocab,
    save_corpus,
    save_features,
    save_vocab,
    sentence_frequency_table,
    split_corpus,
    synth_corpus,
    tokenize,
)
from .model import (
    LossBundle,
    ModelConfig,
    ModelParams,
    compute_losses,
    encode_image,
    mti_predict,
    sentence_step,
    word_forward,
)
from .training import (
    AdamState,
    CheckpointError,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    adam_step,
    clip_gradients,
    load_checkpoint,
    load_training_log,
    save_checkpoint,
    train,
)
from .inference import (
    GeneratedReport,
    GenerationLimits,
    generate_corpus,
    generate_report,
    load_generated,
    save_generated,
)
from .metrics import (
    EvalPair,
    MetricsReport,
    bleu,
    build_eval_pairs,
    cider_d,
    compute_metrics,
    distinct_per_index,
    lcs_length,
    load_metrics,
    meteor_lite,
    render_table,
    rouge_l,
    save_metrics,
)
from .selection import (
    CheckpointRecord,
    SelectionResult,
    load_history,
    mode_baseline,
    render_analysis,
    save_history,
    select_model,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BOS_ID",
    "CheckpointError",
    "CheckpointRecord",
    "ConfigError",
    "CorpusFormatError",
    "DomainError",
    "EOS_ID",
    "EvalPair",
    "GeneratedReport",
    "GenerationLimits",
    "LossBundle",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "PAD_ID",
    "ReportRecord",
    "SelectionResult",
    "ShapeError",
    "SynthConfig",
    "SynthResult",
    "Tape",
    "TapeError",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "UNK_ID",
    "Vocabulary",
    "adam_step",
    "auto_annotate_abnormal",
    "backward",
    "bleu",
    "build_eval_pairs",
    "build_vocab",
    "cider_d",
    "clip_gradients",
    "compute_losses",
    "compute_metrics",
    "count_below",
    "distinct_per_index",
    "encode_image",
    "finite_difference_check",
    "finite_difference_report",
    "generate_corpus",
    "generate_report",
    "gradient_audit",
    "lcs_length",
    "load_checkpoint",
    "load_corpus",
    "load_embeddings",
    "load_features",
    "load_generated",
    "load_history",
    "load_metrics",
    "load_training_log",
    "load_vocab",
    "meteor_lite",
    "mode_baseline",
    "mti_predict",
    "render_analysis",
    "render_table",
    "rouge_l",
    "save_checkpoint",
    "save_corpus",
    "save_features",
    "save_generated",
    "save_history",
    "save_metrics",
    "save_vocab",
    "seeded_rng",
    "select_model",
    "sentence_frequency_table",
    "sentence_step",
    "split_corpus",
    "synth_corpus",
    "tokenize",
    "train",
    "word_forward",
]
