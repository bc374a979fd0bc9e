"""Video and text encoders producing unit-norm shared-space embeddings.

The video encoder is a small temporal transformer over per-frame
feature vectors (frames in, one embedding out).  The text side is an
adapter: either a self-contained token-hash encoder, or a lookup over
externally supplied sentence vectors; both end in a trainable
projection into the shared space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeError, ValidationError
from ..nn import no_grad, ops
from ..nn.autograd import Tensor, as_tensor
from ..nn.layers import (
    ParamBag,
    add_attention,
    add_ffn,
    add_layer_norm,
    add_linear,
    apply_layer_norm,
    attention_block,
    ffn,
    linear,
    xavier_uniform,
)
from ..text import tokenize


@dataclass
class EncoderConfig:
    feature_dim: int  # width of raw per-frame features
    model_dim: int = 768
    layers: int = 4
    heads: int = 8
    max_frames: int = 32
    ffn_mult: int = 4
    output_dim: int | None = None  # shared-space width; model_dim if None

    def __post_init__(self):
        if self.output_dim is None:
            self.output_dim = self.model_dim
        if self.model_dim % self.heads:
            raise ValidationError(
                f"heads={self.heads} must divide model_dim={self.model_dim}"
            )


class CrossViewEncoder:
    """Temporal transformer: (B, T, feature_dim) -> (B, output_dim) unit rows."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamBag()
        rng = np.random.default_rng(seed)
        bag = self.params
        add_linear(bag, "input", rng, cfg.feature_dim, cfg.model_dim)
        bag.add("pos", rng.normal(0.0, 0.02, size=(cfg.max_frames, cfg.model_dim)))
        for i in range(cfg.layers):
            add_layer_norm(bag, f"block{i}.ln1", cfg.model_dim)
            add_attention(bag, f"block{i}.attn", rng, cfg.model_dim, cfg.heads)
            add_layer_norm(bag, f"block{i}.ln2", cfg.model_dim)
            add_ffn(bag, f"block{i}.ffn", rng, cfg.model_dim, cfg.ffn_mult)
        add_layer_norm(bag, "final_ln", cfg.model_dim)
        add_linear(bag, "proj", rng, cfg.model_dim, cfg.output_dim)

    def forward(self, frames: Tensor | np.ndarray) -> Tensor:
        """Differentiable path; accepts (B, T, d_f) or a single (T, d_f)."""
        frames = as_tensor(frames)
        squeeze = frames.data.ndim == 2
        if squeeze:
            frames = ops.reshape(frames, (1, *frames.data.shape))
        if frames.data.ndim != 3 or frames.data.shape[-1] != self.cfg.feature_dim:
            raise ShapeError(
                f"expected (B, T, {self.cfg.feature_dim}) frames, "
                f"got {frames.data.shape}"
            )
        t = frames.data.shape[1]
        if t > self.cfg.max_frames:
            raise ShapeError(f"{t} frames exceed max_frames={self.cfg.max_frames}")
        bag = self.params
        x = linear(bag, "input", frames)
        x = ops.add(x, ops.getitem(bag["pos"], slice(0, t)))
        for i in range(self.cfg.layers):
            h = apply_layer_norm(bag, f"block{i}.ln1", x)
            x = ops.add(x, attention_block(bag, f"block{i}.attn", h, h, self.cfg.heads))
            h = apply_layer_norm(bag, f"block{i}.ln2", x)
            x = ops.add(x, ffn(bag, f"block{i}.ffn", h))
        x = apply_layer_norm(bag, "final_ln", x)
        pooled = ops.mean(x, axis=1)
        z = ops.l2_normalize(linear(bag, "proj", pooled))
        if squeeze:
            z = ops.reshape(z, (self.cfg.output_dim,))
        return z

    def encode(self, frames: np.ndarray) -> np.ndarray:
        """Inference-only embedding (no graph)."""
        with no_grad():
            return self.forward(np.asarray(frames, dtype=np.float64)).data


def subsample_frames(
    features: np.ndarray, count: int, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Pick ``count`` frames preserving temporal order.

    With ``rng`` set, frames are sampled randomly without replacement
    (with replacement when fewer than ``count`` exist) and sorted;
    without it, evenly spaced indices are used — the deterministic
    evaluation path.
    """
    features = np.asarray(features)
    total = features.shape[0]
    if total == 0:
        raise ShapeError("cannot subsample an empty feature matrix")
    if rng is None:
        idx = np.linspace(0, total - 1, count).round().astype(np.int64)
    else:
        replace = total < count
        idx = np.sort(rng.choice(total, size=count, replace=replace))
    return features[idx]


# ---------------------------------------------------------------------------
# text adapter
# ---------------------------------------------------------------------------

@dataclass
class TextEncoderConfig:
    backend: str = "hash"  # "hash" (self-contained) | "lookup" (external vectors)
    model_dim: int = 768  # token-embedding / external-vector width
    buckets: int = 4096  # hash-backend vocabulary size
    output_dim: int | None = None
    trainable_projection: bool = True

    def __post_init__(self):
        if self.backend not in ("hash", "lookup"):
            raise ValidationError(f"unknown text backend {self.backend!r}")
        if self.output_dim is None:
            self.output_dim = self.model_dim


def _token_bucket(token: str, buckets: int) -> int:
    """Stable across processes (unlike built-in str hashing)."""
    digest = hashlib.blake2s(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


class TextEncoderAdapter:
    """Caption -> unit vector in the shared space.

    hash backend: mean of hashed-token embeddings, then projection.
    lookup backend: externally computed sentence vectors (keyed by the
    exact caption string), then projection.
    """

    def __init__(
        self,
        cfg: TextEncoderConfig,
        seed: int = 0,
        lookup_table: dict[str, np.ndarray] | None = None,
    ):
        self.cfg = cfg
        self.params = ParamBag()
        rng = np.random.default_rng(seed)
        if cfg.backend == "hash":
            self.params.add(
                "token_table", rng.normal(0.0, 0.02, size=(cfg.buckets, cfg.model_dim))
            )
            self.lookup_table = None
        else:
            if lookup_table is None:
                raise ValidationError("lookup backend requires a lookup_table")
            self.lookup_table = {
                text: np.asarray(vec, dtype=np.float64) for text, vec in lookup_table.items()
            }
            for text, vec in self.lookup_table.items():
                if vec.shape != (cfg.model_dim,):
                    raise ShapeError(
                        f"lookup vector for {text!r} has shape {vec.shape}, "
                        f"expected ({cfg.model_dim},)"
                    )
        if cfg.trainable_projection:
            self.params.add("proj.w", xavier_uniform(rng, cfg.model_dim, cfg.output_dim))
            self.params.add("proj.b", np.zeros(cfg.output_dim))

    def _pooled(self, texts: list[str]) -> Tensor:
        if self.cfg.backend == "lookup":
            rows = []
            for text in texts:
                vec = self.lookup_table.get(text)
                if vec is None:
                    raise ValidationError(f"no lookup vector for caption {text!r}")
                rows.append(vec)
            return Tensor(np.stack(rows))
        pooled = []
        table = self.params["token_table"]
        for text in texts:
            tokens = tokenize(text) or [""]
            ids = np.array(
                [_token_bucket(tok, self.cfg.buckets) for tok in tokens], dtype=np.int64
            )
            pooled.append(ops.mean(ops.embedding(table, ids), axis=0))
        return ops.stack(pooled, axis=0)

    def forward(self, texts: list[str]) -> Tensor:
        """Differentiable path: list of captions -> (B, output_dim)."""
        if not texts:
            raise ShapeError("texts must be non-empty")
        x = self._pooled(list(texts))
        if self.cfg.trainable_projection:
            x = ops.add(ops.matmul(x, self.params["proj.w"]), self.params["proj.b"])
        return ops.l2_normalize(x)

    def encode(self, texts: list[str]) -> np.ndarray:
        with no_grad():
            return self.forward(texts).data
