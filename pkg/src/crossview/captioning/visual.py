"""Patch-feature provider and the learned-query resampler.

The resampler compresses a clip's ``T x N`` patch tokens to a fixed
``L`` outputs: at every layer the ``L`` learnable queries attend over
the temporally position-encoded patch tokens concatenated with the
queries themselves, followed by a feed-forward update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossview.exceptions import ShapeError, ValidationError
from crossview.nn import Tensor, no_grad, ops
from crossview.nn.layers import (
    ParamBag,
    add_attention,
    add_ffn,
    add_layer_norm,
    add_linear,
    apply_layer_norm,
    attention_block,
    ffn,
    linear,
)
from crossview.retrieval.encoder import subsample_frames


@dataclass(frozen=True)
class PatchFeatureGrid:
    """(K+1, T, N, d) patch features: K exo clips, then the ego clip."""

    features: np.ndarray

    def __post_init__(self):
        f = self.features
        if f.ndim != 4 or min(f.shape) < 1:
            raise ShapeError(f"patch grid must be (clips, T, N, d), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError("patch grid contains non-finite values")

    @property
    def num_clips(self) -> int:
        return self.features.shape[0]

    @property
    def shots(self) -> int:
        return self.features.shape[0] - 1


class RandomProjectionPatches:
    """Frozen random projection from frame features to patch tokens.

    Stands in for a real patch encoder: each frame's feature vector is
    mapped to ``patches`` tokens of size ``dim`` by a fixed seeded
    matrix, so tests and the desk pipeline stay hermetic.
    """

    def __init__(self, feature_dim: int, patches: int = 4, dim: int = 16, seed: int = 0):
        if feature_dim < 1 or patches < 1 or dim < 1:
            raise ValidationError("feature_dim, patches and dim must be positive")
        self.feature_dim = feature_dim
        self.num_patches = patches
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        scale = feature_dim**-0.5
        self.weight = rng.normal(0.0, scale, size=(feature_dim, patches * dim))

    def patches(self, frames: np.ndarray) -> np.ndarray:
        """(T, feature_dim) frame features -> (T, patches, dim) tokens."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.feature_dim:
            raise ShapeError(
                f"expected (T, {self.feature_dim}) frames, got {frames.shape}"
            )
        return (frames @ self.weight).reshape(frames.shape[0], self.num_patches, self.dim)


def build_patch_grid(
    provider: RandomProjectionPatches,
    clip_features: list[np.ndarray],
    frames: int,
    rng: np.random.Generator | None = None,
) -> PatchFeatureGrid:
    """Subsample each clip to ``frames`` frames and stack patch tokens.

    ``clip_features`` lists the exo clips first and the ego clip last.
    """
    if not clip_features:
        raise ValidationError("need at least one clip (the ego clip)")
    grids = [provider.patches(subsample_frames(f, frames, rng)) for f in clip_features]
    return PatchFeatureGrid(np.stack(grids))


@dataclass(frozen=True)
class ResamplerConfig:
    input_dim: int
    model_dim: int = 64
    query_count: int = 64
    depth: int = 6
    heads: int = 4
    ffn_mult: int = 4
    max_frames: int = 32

    def __post_init__(self):
        if self.query_count < 1 or self.depth < 1:
            raise ValidationError("query_count and depth must be >= 1")
        if self.model_dim % self.heads:
            raise ValidationError("heads must divide model_dim")
        if self.input_dim < 1 or self.max_frames < 1:
            raise ValidationError("input_dim and max_frames must be >= 1")


class PerceiverResampler:
    """Compress (clips, T, N, d_in) patch grids to (clips, L, d) tokens."""

    def __init__(self, cfg: ResamplerConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        bag = ParamBag()
        d = cfg.model_dim
        bag.add("queries", rng.normal(0.0, 0.02, size=(cfg.query_count, d)))
        bag.add("pe", rng.normal(0.0, 0.02, size=(cfg.max_frames, d)))
        add_linear(bag, "input_proj", rng, cfg.input_dim, d)
        for i in range(cfg.depth):
            p = f"block{i}"
            add_layer_norm(bag, f"{p}.ln_q", d)
            add_layer_norm(bag, f"{p}.ln_kv", d)
            add_attention(bag, f"{p}.attn", rng, d, cfg.heads)
            add_layer_norm(bag, f"{p}.ln_ffn", d)
            add_ffn(bag, f"{p}.ffn", rng, d, cfg.ffn_mult)
        add_layer_norm(bag, "final_ln", d)
        self.params = bag

    def forward(self, features: np.ndarray) -> Tensor:
        """(clips, T, N, d_in) -> (clips, L, model_dim), tracking gradients."""
        cfg = self.cfg
        if features.ndim != 4 or features.shape[3] != cfg.input_dim:
            raise ShapeError(
                f"expected (clips, T, N, {cfg.input_dim}) patches, got {features.shape}"
            )
        clips, t, n, _ = features.shape
        if t > cfg.max_frames:
            raise ShapeError(f"{t} frames exceeds max_frames={cfg.max_frames}")
        bag = self.params
        flat = features.reshape(clips, t * n, cfg.input_dim)
        x = linear(bag, "input_proj", Tensor(flat))
        frame_idx = np.repeat(np.arange(t), n)
        x = ops.add(x, ops.embedding(bag["pe"], frame_idx))
        q = ops.expand(bag["queries"], (clips, cfg.query_count, cfg.model_dim))
        for i in range(cfg.depth):
            p = f"block{i}"
            qn = apply_layer_norm(bag, f"{p}.ln_q", q)
            kv = ops.concat([apply_layer_norm(bag, f"{p}.ln_kv", x), qn], axis=1)
            q = ops.add(q, attention_block(bag, f"{p}.attn", qn, kv, cfg.heads))
            q = ops.add(q, ffn(bag, f"{p}.ffn", apply_layer_norm(bag, f"{p}.ln_ffn", q)))
        return apply_layer_norm(bag, "final_ln", q)

    def resample(self, grid: PatchFeatureGrid) -> np.ndarray:
        """Inference path: (K+1, L, model_dim) array, no gradient tracking."""
        with no_grad():
            return self.forward(grid.features).data.copy()
