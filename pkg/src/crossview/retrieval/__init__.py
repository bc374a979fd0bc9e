"""Cross-view retrieval: encoders, view-aware contrastive loss, index."""

from .loss import LossConfig, PositiveMask, build_positive_mask, egoexo_nce, nce_from_similarities
from .encoder import (
    CrossViewEncoder,
    EncoderConfig,
    TextEncoderAdapter,
    TextEncoderConfig,
    subsample_frames,
)
from .train import (
    PairedSample,
    TrainConfig,
    TrainingResult,
    build_training_samples,
    load_retrieval_checkpoint,
    save_retrieval_checkpoint,
    train_retrieval,
)
from .index import RetrievalIndex, build_index, load_index, retrieve_topk, save_index

__all__ = [
    "LossConfig",
    "PositiveMask",
    "build_positive_mask",
    "egoexo_nce",
    "nce_from_similarities",
    "CrossViewEncoder",
    "EncoderConfig",
    "TextEncoderAdapter",
    "TextEncoderConfig",
    "subsample_frames",
    "PairedSample",
    "TrainConfig",
    "TrainingResult",
    "build_training_samples",
    "train_retrieval",
    "save_retrieval_checkpoint",
    "load_retrieval_checkpoint",
    "RetrievalIndex",
    "build_index",
    "save_index",
    "load_index",
    "retrieve_topk",
]
