"""Media-token prompt assembly.

A K-shot prompt stacks the retrieved exocentric captions, each preceded
by a ``<video>`` placeholder and closed with ``<eoc>``, then ends with a
final ``<video>`` for the egocentric clip::

    <video> exo caption 1 <eoc> ... <video> exo caption K <eoc> <video>

The chunk map records, for every position, which clip's resampled
features that token may cross-attend to: caption-``j`` tokens map to
clip ``j`` and everything from the final ``<video>`` onwards maps to
clip ``K`` (the egocentric clip).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from crossview.captioning.tokenizer import (
    RESERVED_TOKENS,
    Vocabulary,
    tokenize_caption,
)
from crossview.exceptions import ValidationError


@dataclass(frozen=True)
class PromptSequence:
    """Token ids plus the per-position attention/loss bookkeeping."""

    token_ids: np.ndarray  # (S,) int64
    chunk_map: np.ndarray  # (S,) int64, values in [0, num_videos)
    loss_mask: np.ndarray  # (S,) bool, True on ego-target positions
    media_positions: tuple[int, ...]  # indices of <video> tokens

    def __post_init__(self):
        s = self.token_ids.shape[0]
        if self.token_ids.ndim != 1 or s == 0:
            raise ValidationError("token_ids must be a non-empty 1-D array")
        if self.chunk_map.shape != (s,) or self.loss_mask.shape != (s,):
            raise ValidationError("chunk_map/loss_mask length mismatch")
        if not self.media_positions:
            raise ValidationError("prompt needs at least one <video> token")
        if list(self.media_positions) != sorted(set(self.media_positions)):
            raise ValidationError("media_positions must be strictly increasing")
        if self.media_positions[-1] >= s or self.media_positions[0] < 0:
            raise ValidationError("media position out of range")
        k = len(self.media_positions)
        if self.chunk_map.min() < 0 or self.chunk_map.max() >= k:
            raise ValidationError("chunk_map index outside [0, num_videos)")

    @property
    def num_videos(self) -> int:
        return len(self.media_positions)

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])


def _encode_checked(caption: str, vocab: Vocabulary, what: str) -> list[int]:
    tokens = tokenize_caption(caption)
    for tok in tokens:
        if tok in RESERVED_TOKENS:
            raise ValidationError(f"{what} contains reserved token {tok!r}")
    return [vocab.id_of(tok) for tok in tokens]


def build_prompt(exo_captions: Sequence[str], vocab: Vocabulary) -> PromptSequence:
    """Assemble the K-shot generation prompt (loss mask all False).

    Raises ValidationError if a caption contains a reserved marker token.
    """
    ids: list[int] = []
    chunks: list[int] = []
    media: list[int] = []
    for j, caption in enumerate(exo_captions):
        body = _encode_checked(caption, vocab, f"exo caption {j}")
        media.append(len(ids))
        ids.append(vocab.video_id)
        ids.extend(body)
        ids.append(vocab.eoc_id)
        chunks.extend([j] * (len(body) + 2))
    media.append(len(ids))
    ids.append(vocab.video_id)
    chunks.append(len(exo_captions))
    return PromptSequence(
        token_ids=np.asarray(ids, dtype=np.int64),
        chunk_map=np.asarray(chunks, dtype=np.int64),
        loss_mask=np.zeros(len(ids), dtype=bool),
        media_positions=tuple(media),
    )


def build_training_sequence(
    exo_captions: Sequence[str], ego_caption: str, vocab: Vocabulary
) -> PromptSequence:
    """Prompt plus the ego target caption and a closing ``<eoc>``.

    Only the target tokens (including that final ``<eoc>``) carry a True
    loss mask; they map to the egocentric clip's features.
    """
    prompt = build_prompt(exo_captions, vocab)
    target = _encode_checked(ego_caption, vocab, "ego caption") + [vocab.eoc_id]
    k = len(exo_captions)
    return PromptSequence(
        token_ids=np.concatenate([prompt.token_ids, np.asarray(target, np.int64)]),
        chunk_map=np.concatenate(
            [prompt.chunk_map, np.full(len(target), k, dtype=np.int64)]
        ),
        loss_mask=np.concatenate([prompt.loss_mask, np.ones(len(target), bool)]),
        media_positions=prompt.media_positions,
    )
