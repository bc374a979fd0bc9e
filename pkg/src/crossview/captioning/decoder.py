"""Causal decoder with tanh-gated cross-attention inserts.

Base blocks are standard pre-LN causal transformer blocks.  After every
``gate_interval``-th base block a gated insert runs: each text position
cross-attends to the L resampled tokens of the clip its chunk map names,
then a gated feed-forward follows.  Both contributions are scaled by
``tanh`` of a zero-initialized scalar, so a fresh decoder computes
exactly the base decoder's logits.

Parameter initialization draws the base weights before any gated-block
weights, so a decoder built with ``gate_interval=0`` (no inserts) from
the same seed shares the base weights bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossview.captioning.prompt import PromptSequence
from crossview.exceptions import ShapeError, ValidationError
from crossview.nn import Tensor, as_tensor, no_grad, ops
from crossview.nn.layers import (
    ParamBag,
    add_attention,
    add_ffn,
    add_layer_norm,
    add_linear,
    apply_layer_norm,
    attention_block,
    causal_bias,
    ffn,
    linear,
)


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    model_dim: int = 64
    layers: int = 2
    heads: int = 2
    visual_dim: int = 64
    max_seq: int = 128
    ffn_mult: int = 4
    gate_interval: int = 1  # 0 disables gated blocks entirely

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValidationError("vocab_size must cover the reserved tokens")
        if self.layers < 1 or self.max_seq < 2:
            raise ValidationError("layers must be >= 1 and max_seq >= 2")
        if self.model_dim % self.heads:
            raise ValidationError("heads must divide model_dim")
        if self.gate_interval < 0:
            raise ValidationError("gate_interval must be >= 0")

    @property
    def gated_layers(self) -> tuple[int, ...]:
        if self.gate_interval == 0:
            return ()
        return tuple(
            i for i in range(self.layers) if (i + 1) % self.gate_interval == 0
        )


class CaptionDecoder:
    def __init__(self, cfg: DecoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        bag = ParamBag()
        d = cfg.model_dim
        bag.add("tok_emb", rng.normal(0.0, 0.02, size=(cfg.vocab_size, d)))
        bag.add("pos_emb", rng.normal(0.0, 0.02, size=(cfg.max_seq, d)))
        for i in range(cfg.layers):
            p = f"base{i}"
            add_layer_norm(bag, f"{p}.ln1", d)
            add_attention(bag, f"{p}.attn", rng, d, cfg.heads)
            add_layer_norm(bag, f"{p}.ln2", d)
            add_ffn(bag, f"{p}.ffn", rng, d, cfg.ffn_mult)
        add_layer_norm(bag, "ln_f", d)
        add_linear(bag, "head", rng, d, cfg.vocab_size)
        for i in cfg.gated_layers:
            p = f"gated{i}"
            add_layer_norm(bag, f"{p}.ln_q", d)
            add_attention(bag, f"{p}.cross", rng, d, cfg.heads, d_kv=cfg.visual_dim)
            bag.add(f"{p}.g_attn", np.zeros(()))
            add_layer_norm(bag, f"{p}.ln_ffn", d)
            add_ffn(bag, f"{p}.ffn", rng, d, cfg.ffn_mult)
            bag.add(f"{p}.g_ffn", np.zeros(()))
        self.params = bag

    def gated_param_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("gated")]

    def forward_batch(self, token_ids, chunk_maps, visual) -> Tensor:
        """Logits for a padded batch.

        Args:
            token_ids: (B, S) int token ids.
            chunk_maps: (B, S) int clip index each position attends to.
            visual: (B, C, L, visual_dim) resampled features, Tensor or array.

        Returns:
            (B, S, vocab_size) logits Tensor.
        """
        cfg = self.cfg
        bag = self.params
        token_ids = np.asarray(token_ids, dtype=np.int64)
        chunk_maps = np.asarray(chunk_maps, dtype=np.int64)
        visual = as_tensor(visual)
        if token_ids.ndim != 2:
            raise ShapeError(f"token_ids must be (B, S), got {token_ids.shape}")
        b, s = token_ids.shape
        if s > cfg.max_seq:
            raise ShapeError(f"sequence length {s} exceeds max_seq={cfg.max_seq}")
        if chunk_maps.shape != (b, s):
            raise ShapeError("chunk_maps shape must match token_ids")
        if token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size:
            raise ValidationError("token id out of vocabulary range")
        if visual.data.ndim != 4 or visual.data.shape[3] != cfg.visual_dim:
            raise ShapeError(
                f"visual must be (B, clips, L, {cfg.visual_dim}),"
                f" got {visual.data.shape}"
            )
        if visual.data.shape[0] != b:
            raise ShapeError("visual batch size must match token batch")
        clips = visual.data.shape[1]
        if chunk_maps.min() < 0 or chunk_maps.max() >= clips:
            raise ValidationError(
                f"chunk map index out of range for {clips} clips"
            )

        x = ops.add(
            ops.embedding(bag["tok_emb"], token_ids),
            ops.embedding(bag["pos_emb"], np.arange(s)),
        )
        bias = causal_bias(s)
        n_queries = visual.data.shape[2]
        flat_visual = ops.reshape(visual, (b * clips, n_queries, cfg.visual_dim))
        flat_idx = np.arange(b)[:, None] * clips + chunk_maps
        gated = set(cfg.gated_layers)
        for i in range(cfg.layers):
            p = f"base{i}"
            xn = apply_layer_norm(bag, f"{p}.ln1", x)
            x = ops.add(x, attention_block(bag, f"{p}.attn", xn, xn, cfg.heads, bias))
            x = ops.add(x, ffn(bag, f"{p}.ffn", apply_layer_norm(bag, f"{p}.ln2", x)))
            if i in gated:
                g = f"gated{i}"
                # every position attends only to its own clip's L tokens
                kv = ops.embedding(flat_visual, flat_idx)  # (B, S, L, d_v)
                qx = apply_layer_norm(bag, f"{g}.ln_q", x)
                ctx = attention_block(
                    bag,
                    f"{g}.cross",
                    ops.reshape(qx, (b * s, 1, cfg.model_dim)),
                    ops.reshape(kv, (b * s, n_queries, cfg.visual_dim)),
                    cfg.heads,
                )
                ctx = ops.reshape(ctx, (b, s, cfg.model_dim))
                x = ops.add(x, ops.mul(ops.tanh(bag[f"{g}.g_attn"]), ctx))
                hidden = ffn(bag, f"{g}.ffn", apply_layer_norm(bag, f"{g}.ln_ffn", x))
                x = ops.add(x, ops.mul(ops.tanh(bag[f"{g}.g_ffn"]), hidden))
        x = apply_layer_norm(bag, "ln_f", x)
        return linear(bag, "head", x)


def forward_decoder(
    decoder: CaptionDecoder, prompt: PromptSequence, visual: np.ndarray
) -> np.ndarray:
    """(S, vocab) logits for a single sequence, no gradient tracking."""
    if visual.ndim != 3:
        raise ShapeError(f"visual must be (clips, L, d), got {visual.shape}")
    with no_grad():
        logits = decoder.forward_batch(
            prompt.token_ids[None, :], prompt.chunk_map[None, :], visual[None]
        )
    return logits.data[0]


def caption_loss(decoder, token_ids, chunk_maps, loss_mask, visual):
    """Teacher-forced masked cross-entropy for a padded batch.

    Position ``p`` predicts token ``p+1``; a target counts toward the
    loss only where the loss mask marks it (ego target tokens).  Returns
    ``(loss, logits)`` so callers can inspect the pre-loss activations.
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    chunk_maps = np.asarray(chunk_maps, dtype=np.int64)
    if token_ids.ndim != 2 or token_ids.shape[1] < 2:
        raise ValidationError("need (B, S>=2) token ids for teacher forcing")
    logits = decoder.forward_batch(token_ids[:, :-1], chunk_maps[:, :-1], visual)
    loss = ops.cross_entropy_logits(logits, token_ids[:, 1:], loss_mask[:, 1:])
    return loss, logits
