"""Desk-scale laboratory for sliding-window attention training.

The package trains small byte-level language models whose attention is
sigmoid-activated, biased by balanced linear position slopes, and rotated by
rotary embeddings, all inside a banded causal window. It ships the matching
inference path (a rolling key/value ring), a perplexity harness over
(window x length) grids, and the diagnostics that make the design legible:
attention-sink reports, sparsity and extreme-value demos, and a linear cost
model with measured overheads.
"""
from .attention import (
    BandMask,
    RopeParams,
    SlopeSchedule,
    alibi_bias,
    banded_attention,
    rope_angles,
    rope_rotate,
    sigmoid_attention,
    slope_schedule,
    softmax_attention,
    swat_attention,
)
from .checkpoint import load_checkpoint, model_content_hash, save_checkpoint
from .config import ExperimentConfig, load_config, save_config
from .data import (
    BatchSpec,
    Corpus,
    corpus_from_bytes,
    detokenize,
    load_corpus,
    make_batches,
    synthetic_text,
    tokenize_bytes,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    IntegrityError,
    NumericsError,
    ProtocolError,
    SwatError,
)
from .evaluation import (
    EvalGrid,
    KVCacheRing,
    RegimeSpec,
    compare_training_regimes,
    eval_grid,
    incremental_forward,
    perplexity,
)
from .model import (
    Model,
    ModelConfig,
    build_model,
    forward,
    next_token_loss,
    parameter_count,
    receptive_field,
)
from .tensor import Tape, Tensor, gradcheck
from .train import TrainConfig, TrainLog, adamw_step, train

__version__ = "0.1.0"

__all__ = [
    "BandMask",
    "BatchSpec",
    "ConfigError",
    "ContractError",
    "Corpus",
    "DataError",
    "DimensionError",
    "EvalGrid",
    "ExperimentConfig",
    "IntegrityError",
    "KVCacheRing",
    "Model",
    "ModelConfig",
    "NumericsError",
    "ProtocolError",
    "RegimeSpec",
    "RopeParams",
    "SlopeSchedule",
    "SwatError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainLog",
    "adamw_step",
    "alibi_bias",
    "banded_attention",
    "build_model",
    "compare_training_regimes",
    "corpus_from_bytes",
    "detokenize",
    "eval_grid",
    "forward",
    "gradcheck",
    "incremental_forward",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "make_batches",
    "model_content_hash",
    "next_token_loss",
    "parameter_count",
    "perplexity",
    "receptive_field",
    "rope_angles",
    "rope_rotate",
    "save_checkpoint",
    "save_config",
    "sigmoid_attention",
    "slope_schedule",
    "softmax_attention",
    "swat_attention",
    "synthetic_text",
    "tokenize_bytes",
    "train",
]
