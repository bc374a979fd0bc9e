"""Clip records, manifests, feature stores and checkpoints.

On-disk formats (all little-endian, UTF-8):

* Manifest: JSONL, one clip record per non-blank line, fixed key order
  (clip_id, video_id, view, scenario, start, end, text, refined_text).
* Feature store: magic ``CVFS``, version u32, dim u32, count u64, then
  per clip: id length u16, id bytes, frame count u32, frames*dim
  float32 payload.
* Checkpoint: magic ``CVCK``, version u32, canonical-JSON config echo,
  then a named float32 array table.

Readers never trust lengths blindly: truncation surfaces as
:class:`~crossview.exceptions.StoreCorruptionError` with a byte offset.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ManifestParseError,
    StoreCorruptionError,
    StoreFormatError,
    ValidationError,
)

VIEW_EGO = "ego"
VIEW_EXO = "exo"
VIEWS = (VIEW_EGO, VIEW_EXO)

_MANIFEST_KEYS = (
    "clip_id",
    "video_id",
    "view",
    "scenario",
    "start",
    "end",
    "text",
    "refined_text",
)

_STORE_MAGIC = b"CVFS"
_STORE_VERSION = 1
_CKPT_MAGIC = b"CVCK"
_CKPT_VERSION = 1


@dataclass
class ClipRecord:
    """One captioned clip from either viewpoint."""

    clip_id: str
    video_id: str
    view: str  # "ego" | "exo"
    scenario: str  # shared activity label used to restrict pair mining
    start: float  # seconds within the source video
    end: float
    text: str  # raw narration or ASR sentence
    refined_text: str | None = None  # refined caption, once produced

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValidationError(f"clip {self.clip_id!r}: bad view {self.view!r}")
        if not self.clip_id or not self.video_id:
            raise ValidationError("clip_id and video_id must be non-empty")
        if not (float(self.end) > float(self.start)):
            raise ValidationError(
                f"clip {self.clip_id!r}: end={self.end} must exceed start={self.start}"
            )
        self.start = float(self.start)
        self.end = float(self.end)

    @property
    def caption(self) -> str:
        """Refined text when available, raw text otherwise."""
        return self.refined_text if self.refined_text is not None else self.text


@dataclass
class DatasetManifest:
    """An ordered collection of clip records sharing one view."""

    view: str | None  # None only for an empty manifest
    records: list[ClipRecord] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if rec.clip_id in seen:
                raise ValidationError(f"duplicate clip_id {rec.clip_id!r}")
            seen.add(rec.clip_id)
            if self.view is not None and rec.view != self.view:
                raise ValidationError(
                    f"clip {rec.clip_id!r} has view {rec.view!r}, "
                    f"manifest is {self.view!r}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, ClipRecord]:
        return {rec.clip_id: rec for rec in self.records}


def record_to_json(rec: ClipRecord) -> str:
    payload = {key: getattr(rec, key) for key in _MANIFEST_KEYS}
    return json.dumps(payload, ensure_ascii=False)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a JSONL manifest; failures name the offending line."""
    path = Path(path)
    if not path.is_file():
        raise ManifestParseError(str(path), 0, "no such manifest file")
    records: list[ClipRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(str(path), line_no, f"bad JSON: {exc.msg}")
            if not isinstance(raw, dict):
                raise ManifestParseError(str(path), line_no, "record is not an object")
            missing = [k for k in _MANIFEST_KEYS if k not in raw]
            extra = [k for k in raw if k not in _MANIFEST_KEYS]
            if missing or extra:
                raise ManifestParseError(
                    str(path),
                    line_no,
                    f"missing fields {missing}, unknown fields {extra}",
                )
            try:
                records.append(ClipRecord(**raw))
            except (ValidationError, TypeError, ValueError) as exc:
                raise ManifestParseError(str(path), line_no, str(exc))
    view = records[0].view if records else None
    try:
        return DatasetManifest(view=view, records=records)
    except ValidationError as exc:
        raise ManifestParseError(str(path), 0, str(exc))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write one record per line; an empty manifest is an empty file."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(record_to_json(rec) + "\n")


# ---------------------------------------------------------------------------
# feature stores
# ---------------------------------------------------------------------------

def write_feature_store(
    entries: dict[str, np.ndarray], dim: int, path: str | Path
) -> None:
    """Serialize per-clip (T, dim) float32 feature matrices.

    Entries are written in the mapping's iteration order.  Wrong
    widths, empty matrices or non-finite values are rejected with the
    offending clip_id named.
    """
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_STORE_MAGIC)
        fh.write(struct.pack("<IIQ", _STORE_VERSION, dim, len(entries)))
        for clip_id, mat in entries.items():
            mat = np.asarray(mat)
            if mat.ndim != 2 or mat.shape[1] != dim:
                raise ValidationError(
                    f"clip {clip_id!r}: expected (T, {dim}) features, "
                    f"got shape {mat.shape}"
                )
            if mat.shape[0] == 0:
                raise ValidationError(f"clip {clip_id!r}: empty feature matrix")
            if not np.isfinite(mat).all():
                raise ValidationError(f"clip {clip_id!r}: non-finite features")
            ident = clip_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ValidationError(f"clip id too long: {clip_id[:32]!r}...")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def read_feature_store(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    """Read a feature store back into {clip_id: (T, dim) float32}.

    Returns (mapping, dim).  Absent ids are a caller concern: use
    ``mapping.get(clip_id)`` for an explicit not-found signal.
    """
    path = Path(path)
    if not path.is_file():
        raise StoreFormatError(f"{path}: no such feature store")
    blob = path.read_bytes()

    def need(offset: int, count: int, what: str) -> None:
        if offset + count > len(blob):
            raise StoreCorruptionError(str(path), offset, f"truncated {what}")

    if blob[:4] != _STORE_MAGIC:
        raise StoreFormatError(f"{path}: bad magic {blob[:4]!r}")
    need(4, 16, "header")
    version, dim, count = struct.unpack_from("<IIQ", blob, 4)
    if version != _STORE_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    offset = 20
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(offset, 2, "id length")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(offset, id_len, "clip id")
        clip_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        need(offset, 4, "frame count")
        (frames,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        payload = frames * dim * 4
        need(offset, payload, f"features of {clip_id!r}")
        mat = np.frombuffer(blob, dtype="<f4", count=frames * dim, offset=offset)
        out[clip_id] = mat.reshape(frames, dim).copy()
        offset += payload
    if offset != len(blob):
        raise StoreCorruptionError(
            str(path), offset, f"{len(blob) - offset} trailing bytes"
        )
    return out, dim


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    state: dict[str, np.ndarray], config: dict, path: str | Path
) -> None:
    """Write a named float32 parameter table plus a config echo.

    The config is serialized as canonical JSON (sorted keys, no
    whitespace) so identical runs produce identical bytes.
    """
    path = Path(path)
    cfg_blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            # note: asarray, not ascontiguousarray — the latter promotes
            # 0-d arrays (scalar gates) to 1-d and breaks round-trips
            arr = np.asarray(state[name], dtype="<f4")
            ident = name.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`: (state, config)."""
    path = Path(path)
    if not path.is_file():
        raise StoreFormatError(f"{path}: no such checkpoint")
    blob = path.read_bytes()

    def need(offset: int, count: int, what: str) -> None:
        if offset + count > len(blob):
            raise StoreCorruptionError(str(path), offset, f"truncated {what}")

    if blob[:4] != _CKPT_MAGIC:
        raise StoreFormatError(f"{path}: bad magic {blob[:4]!r}")
    need(4, 8, "header")
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != _CKPT_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    offset = 12
    need(offset, cfg_len, "config")
    config = json.loads(blob[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    need(offset, 4, "array count")
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(offset, 2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(offset, name_len + 1, "name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = blob[offset]
        offset += 1
        need(offset, 4 * ndim, "shape")
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        need(offset, size * 4, f"array {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        state[name] = arr.reshape(shape).copy()
        offset += size * 4
    if offset != len(blob):
        raise StoreCorruptionError(
            str(path), offset, f"{len(blob) - offset} trailing bytes"
        )
    return state, config
