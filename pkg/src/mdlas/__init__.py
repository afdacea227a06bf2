"""mdlas: a multi-dialect attention seq2seq speech recognition toolkit.

Everything runs at desk scale on a synthetic corpus: a minimal autodiff
tensor core, LSTM/attention layers, three dialect-conditioning mechanisms
(output tokens, per-layer vectors, cluster-adapted encoder), SGD training
with dev-WER early stopping, and WER-based analysis tooling.
"""

from .dialects import (
    ConditioningMode,
    DialectInventory,
    GraphemeVocab,
    SYSTEM_PRESETS,
    augment_targets,
    dialect_vector,
    strip_dialect_tokens,
    system_mode,
)
from .data import (
    Manifest,
    SyntheticSpec,
    Utterance,
    default_spec,
    generate_corpus,
    make_batches,
    model_inputs,
    stack_and_downsample,
)
from .evaluation import (
    EvalReport,
    MismatchMatrix,
    edit_distance_alignment,
    evaluate,
    lexical_switch_analysis,
    mismatch_matrix,
)
from .model import (
    CatConfig,
    Checkpoint,
    LasModel,
    ModelConfig,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Precision, Tensor, grad_check, no_grad
from .training import TrainConfig, TrainReport, fine_tune, sgd_update, train

__all__ = [
    "CatConfig",
    "Checkpoint",
    "ConditioningMode",
    "DialectInventory",
    "EvalReport",
    "GraphemeVocab",
    "LasModel",
    "Manifest",
    "MismatchMatrix",
    "ModelConfig",
    "Precision",
    "SYSTEM_PRESETS",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "Utterance",
    "augment_targets",
    "count_parameters",
    "default_spec",
    "dialect_vector",
    "edit_distance_alignment",
    "evaluate",
    "fine_tune",
    "generate_corpus",
    "grad_check",
    "lexical_switch_analysis",
    "load_checkpoint",
    "make_batches",
    "mismatch_matrix",
    "model_inputs",
    "no_grad",
    "save_checkpoint",
    "sgd_update",
    "stack_and_downsample",
    "strip_dialect_tokens",
    "system_mode",
    "train",
]

__version__ = "0.1.0"
