"""Retrieval-augmented egocentric caption generation.

Pipeline: a frozen patch-feature provider turns per-clip frame features
into patch grids, a learned-query resampler compresses each clip to a
fixed number of visual tokens, and a small causal decoder with
tanh-gated cross-attention blocks generates the egocentric caption from
a prompt that interleaves retrieved exocentric captions with media
placeholder tokens.
"""

from crossview.captioning.decoder import (
    CaptionDecoder,
    DecoderConfig,
    caption_loss,
    forward_decoder,
)
from crossview.captioning.prompt import (
    PromptSequence,
    build_prompt,
    build_training_sequence,
)
from crossview.captioning.tokenizer import (
    EOC_TOKEN,
    PAD_TOKEN,
    RESERVED_TOKENS,
    UNK_TOKEN,
    VIDEO_TOKEN,
    Vocabulary,
    tokenize_caption,
)
from crossview.captioning.train import (
    CaptionSample,
    CaptionTrainConfig,
    GenerationConfig,
    build_caption_samples,
    generate_caption,
    load_captioner_checkpoint,
    save_captioner_checkpoint,
    train_captioner,
)
from crossview.captioning.visual import (
    PatchFeatureGrid,
    PerceiverResampler,
    RandomProjectionPatches,
    ResamplerConfig,
    build_patch_grid,
)

__all__ = [
    "CaptionDecoder",
    "CaptionSample",
    "CaptionTrainConfig",
    "DecoderConfig",
    "EOC_TOKEN",
    "GenerationConfig",
    "PAD_TOKEN",
    "PatchFeatureGrid",
    "PerceiverResampler",
    "PromptSequence",
    "RESERVED_TOKENS",
    "RandomProjectionPatches",
    "ResamplerConfig",
    "UNK_TOKEN",
    "VIDEO_TOKEN",
    "Vocabulary",
    "build_caption_samples",
    "build_patch_grid",
    "build_prompt",
    "build_training_sequence",
    "caption_loss",
    "forward_decoder",
    "generate_caption",
    "load_captioner_checkpoint",
    "save_captioner_checkpoint",
    "tokenize_caption",
    "train_captioner",
]
