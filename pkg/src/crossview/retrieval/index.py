"""Exo-side retrieval index: candidate embeddings plus scoring.

A query ego embedding is scored against each candidate's visual and
text embeddings.  The default score averages the two exponentiated
scaled similarities ``(exp(q.z/tau) + exp(q.u/tau)) / 2``; the
"cosine" mode averages the raw similarities instead (the two modes can
rank differently because exp reweights before the average).

On disk (``CVIX``, little-endian): magic, version u32, count u64,
dim u32, temperature f64, then the id table and the two float32
embedding matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import DatasetManifest
from ..exceptions import (
    StoreCorruptionError,
    StoreFormatError,
    ValidationError,
)
from .encoder import CrossViewEncoder, TextEncoderAdapter, subsample_frames

_INDEX_MAGIC = b"CVIX"
_INDEX_VERSION = 1

SCORE_MODES = ("paper_exp", "cosine")


@dataclass
class RetrievalIndex:
    clip_ids: list[str]
    visual: np.ndarray  # (N, d) float32 unit rows
    text: np.ndarray  # (N, d) float32 unit rows
    temperature: float

    def __post_init__(self):
        n = len(self.clip_ids)
        if len(set(self.clip_ids)) != n:
            raise ValidationError("index clip ids must be unique")
        if self.visual.shape != self.text.shape or self.visual.shape[0] != n:
            raise ValidationError(
                f"embedding shapes {self.visual.shape}/{self.text.shape} "
                f"do not match {n} ids"
            )

    def __len__(self) -> int:
        return len(self.clip_ids)

    @property
    def dim(self) -> int:
        return self.visual.shape[1]


def build_index(
    manifest: DatasetManifest,
    store: dict[str, np.ndarray],
    encoder: CrossViewEncoder,
    adapter: TextEncoderAdapter,
    frames: int = 4,
    temperature: float = 0.05,
) -> RetrievalIndex:
    """Embed every manifest clip (evenly spaced frames) and its caption."""
    if not manifest.records:
        raise ValidationError("cannot build an index from an empty manifest")
    clip_ids = [rec.clip_id for rec in manifest.records]
    stacked = []
    for rec in manifest.records:
        feats = store.get(rec.clip_id)
        if feats is None:
            raise ValidationError(f"no features for clip {rec.clip_id!r}")
        stacked.append(subsample_frames(feats, frames))
    visual = encoder.encode(np.stack(stacked).astype(np.float64))
    text = adapter.encode([rec.caption for rec in manifest.records])
    return RetrievalIndex(
        clip_ids=clip_ids,
        visual=visual.astype(np.float32),
        text=text.astype(np.float32),
        temperature=temperature,
    )


def retrieve_topk(
    index: RetrievalIndex,
    query: np.ndarray,
    k: int = 1,
    mode: str = "paper_exp",
) -> list[tuple[str, float]]:
    """Top-k candidates for one unit-norm query embedding.

    Ordering is deterministic: score descending, then clip id
    ascending.  ``k`` larger than the index is clamped.
    """
    if mode not in SCORE_MODES:
        raise ValidationError(f"mode must be one of {SCORE_MODES}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dim:
        raise ValidationError(f"query dim {query.shape[0]} != index dim {index.dim}")
    sim_v = index.visual.astype(np.float64) @ query
    sim_t = index.text.astype(np.float64) @ query
    if mode == "paper_exp":
        scores = 0.5 * (
            np.exp(sim_v / index.temperature) + np.exp(sim_t / index.temperature)
        )
    else:
        scores = 0.5 * (sim_v + sim_t)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.clip_ids[i]))
    return [(index.clip_ids[i], float(scores[i])) for i in order[: min(k, len(index))]]


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(
            struct.pack(
                "<IQId", _INDEX_VERSION, len(index), index.dim, index.temperature
            )
        )
        for clip_id in index.clip_ids:
            ident = clip_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
        fh.write(np.ascontiguousarray(index.visual, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(index.text, dtype="<f4").tobytes())


def load_index(path: str | Path) -> RetrievalIndex:
    path = Path(path)
    if not path.is_file():
        raise StoreFormatError(f"{path}: no such index file")
    blob = path.read_bytes()

    def need(offset: int, count: int, what: str) -> None:
        if offset + count > len(blob):
            raise StoreCorruptionError(str(path), offset, f"truncated {what}")

    if blob[:4] != _INDEX_MAGIC:
        raise StoreFormatError(f"{path}: bad magic {blob[:4]!r}")
    need(4, 24, "header")
    version, count, dim, temperature = struct.unpack_from("<IQId", blob, 4)
    if version != _INDEX_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    offset = 28
    clip_ids: list[str] = []
    for _ in range(count):
        need(offset, 2, "id length")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(offset, id_len, "clip id")
        clip_ids.append(blob[offset : offset + id_len].decode("utf-8"))
        offset += id_len
    matrix_bytes = count * dim * 4
    need(offset, 2 * matrix_bytes, "embedding matrices")
    visual = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
    offset += matrix_bytes
    text = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
    offset += matrix_bytes
    if offset != len(blob):
        raise StoreCorruptionError(
            str(path), offset, f"{len(blob) - offset} trailing bytes"
        )
    return RetrievalIndex(
        clip_ids=clip_ids,
        visual=visual.reshape(count, dim).copy(),
        text=text.reshape(count, dim).copy(),
        temperature=temperature,
    )
