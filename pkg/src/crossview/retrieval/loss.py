"""View-aware contrastive loss over paired ego/exo batches.

Conventions for a batch of B pairs: video embeddings are stacked
``[z_ego; z_exo]`` (2B rows), text embeddings ``[u_ego; u_exo]``
(2B rows), and the positive mask is (2B, 2B) over (video row, text
column).  Columns 0..B-1 are ego texts, B..2B-1 exo texts.

For anchor pair i, positives cover: its own texts in both views, and
both texts of any same-batch pair whose same-view caption shares
entities with pair i's caption.  Both views of a video use the same
positive set, so mask rows i and i+B are identical by construction.

The per-anchor loss is
``-log( sum_pos exp(s/tau) / sum_all exp(s/tau) )`` where the sums run
over both of the anchor's view rows and all 2B text columns, computed
in each direction (video->text and text->video) and averaged over the
batch.  The denominator always spans both views' texts: rather than
normalizing intra- and inter-view scores separately, both are folded
into one normalizer, which keeps the loss a proper softmax
cross-entropy over the doubled batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..exceptions import NumericError, ShapeError, ValidationError
from ..nn.autograd import Tensor, as_tensor, custom_op
from ..text import EntityProfile

_ENTITY_RULES = ("and", "or")


@dataclass
class LossConfig:
    temperature: float = 0.05
    entity_rule: str = "and"  # "and": shared noun AND verb; "or": either

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.entity_rule not in _ENTITY_RULES:
            raise ValidationError(f"entity_rule must be one of {_ENTITY_RULES}")


@dataclass
class PositiveMask:
    """Boolean (2B, 2B) video-text positive indicator."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=bool)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise ShapeError(f"mask must be (2B, 2B), got {m.shape}")
        self.matrix = m

    @property
    def pairs(self) -> int:
        return self.matrix.shape[0] // 2


def _entity_positive(a: EntityProfile, b: EntityProfile, rule: str) -> bool:
    nouns = a.noun_overlap(b) > 0
    verbs = a.verb_overlap(b) > 0
    return (nouns and verbs) if rule == "and" else (nouns or verbs)


def build_positive_mask(
    ego_profiles: Sequence[EntityProfile],
    exo_profiles: Sequence[EntityProfile],
    cfg: LossConfig | None = None,
) -> PositiveMask:
    """Mark positives for a batch of B (ego, exo) caption profiles.

    Block layout ``[[A, C], [A, C]]`` where ``A[i, j]`` covers ego-text
    columns (self or ego-caption entity match) and ``C[i, j]`` exo-text
    columns; rows i and i+B are identical because both views of a pair
    share one positive set.
    """
    cfg = cfg or LossConfig()
    if len(ego_profiles) != len(exo_profiles):
        raise ShapeError("profile lists must have equal length")
    b = len(ego_profiles)
    if b == 0:
        raise ShapeError("batch must contain at least one pair")
    ego_block = np.zeros((b, b), dtype=bool)
    exo_block = np.zeros((b, b), dtype=bool)
    for i in range(b):
        ego_block[i, i] = True
        exo_block[i, i] = True
        for j in range(i + 1, b):
            if _entity_positive(ego_profiles[i], ego_profiles[j], cfg.entity_rule):
                ego_block[i, j] = ego_block[j, i] = True
            if _entity_positive(exo_profiles[i], exo_profiles[j], cfg.entity_rule):
                exo_block[i, j] = exo_block[j, i] = True
    half = np.concatenate([ego_block, exo_block], axis=1)
    return PositiveMask(np.concatenate([half, half], axis=0))


def _nce_direction_stats(scaled: np.ndarray, maskf: np.ndarray):
    """Per-direction folded numerators/denominators with max-shift.

    Returns (loss_value, E, num, den, shift) for the video->text
    direction on ``scaled``; the text->video direction reuses this on
    the transpose.  Rows r and r+B fold into anchor group r; the shift
    is constant per group so the num/den ratio is unchanged.
    """
    b = scaled.shape[0] // 2
    shift = np.maximum(scaled[:b].max(axis=1), scaled[b:].max(axis=1))
    e = np.exp(scaled - np.concatenate([shift, shift])[:, None])
    masked = maskf * e
    num = masked[:b].sum(axis=1) + masked[b:].sum(axis=1)
    den = e[:b].sum(axis=1) + e[b:].sum(axis=1)
    if np.any(num <= 0.0):
        raise NumericError("a batch row has no positive entries in the mask")
    value = float((np.log(den) - np.log(num)).mean())
    return value, e, num, den


def nce_from_similarities(
    sim: np.ndarray, mask: PositiveMask | np.ndarray, temperature: float
) -> float:
    """Loss value from a raw (2B, 2B) video-text cosine matrix.

    Pure value path shared with the differentiable op; also convenient
    for property tests that manipulate similarities directly.
    """
    matrix = mask.matrix if isinstance(mask, PositiveMask) else np.asarray(mask, bool)
    sim = np.asarray(sim, dtype=np.float64)
    if sim.shape != matrix.shape:
        raise ShapeError(f"sim {sim.shape} vs mask {matrix.shape}")
    if not np.isfinite(sim).all():
        raise NumericError("similarities contain non-finite values")
    scaled = sim / temperature
    maskf = matrix.astype(np.float64)
    v2t, _, _, _ = _nce_direction_stats(scaled, maskf)
    t2v, _, _, _ = _nce_direction_stats(scaled.T, maskf.T)
    return v2t + t2v


def egoexo_nce(
    z_ego: Tensor,
    z_exo: Tensor,
    u_ego: Tensor,
    u_exo: Tensor,
    mask: PositiveMask,
    cfg: LossConfig | None = None,
) -> Tensor:
    """Differentiable two-direction contrastive loss (scalar tensor).

    Inputs are (B, d) embedding blocks with unit rows.  Forward and
    backward are fused: the gradient w.r.t. the similarity matrix is
    assembled in closed form and pushed through the two matmuls.
    """
    cfg = cfg or LossConfig()
    z_ego, z_exo = as_tensor(z_ego), as_tensor(z_exo)
    u_ego, u_exo = as_tensor(u_ego), as_tensor(u_exo)
    blocks = (z_ego, z_exo, u_ego, u_exo)
    b, d = z_ego.data.shape if z_ego.data.ndim == 2 else (0, 0)
    if b < 1:
        raise ShapeError("batch must contain at least one pair")
    for t in blocks:
        if t.data.ndim != 2 or t.data.shape != (b, d):
            raise ShapeError("all four embedding blocks must share shape (B, d)")
        if not np.isfinite(t.data).all():
            raise NumericError("embeddings contain non-finite values")
    if mask.matrix.shape != (2 * b, 2 * b):
        raise ShapeError(
            f"mask shape {mask.matrix.shape} does not match batch size {b}"
        )
    tau = cfg.temperature
    z_all = np.concatenate([z_ego.data, z_exo.data], axis=0)
    u_all = np.concatenate([u_ego.data, u_exo.data], axis=0)
    scaled = (z_all @ u_all.T) / tau
    maskf = mask.matrix.astype(np.float64)

    v2t, ev, numv, denv = _nce_direction_stats(scaled, maskf)
    t2v, et_t, numt, dent = _nce_direction_stats(scaled.T, maskf.T)
    value = v2t + t2v

    def sim_grad() -> np.ndarray:
        # d(loss)/d(scaled): rows fold for v2t, columns for t2v
        denv2 = np.concatenate([denv, denv])[:, None]
        numv2 = np.concatenate([numv, numv])[:, None]
        g_v2t = (ev / denv2 - maskf * ev / numv2) / b
        dent2 = np.concatenate([dent, dent])[None, :]
        numt2 = np.concatenate([numt, numt])[None, :]
        et = et_t.T
        g_t2v = (et / dent2 - maskf * et / numt2) / b
        return g_v2t + g_t2v

    state: dict = {}

    def grads():
        if "gs" not in state:
            gs = sim_grad() / tau
            state["gs"] = (gs @ u_all, gs.T @ z_all)
        return state["gs"]

    return custom_op(
        np.float64(value),
        [
            (z_ego, lambda g: g * grads()[0][:b]),
            (z_exo, lambda g: g * grads()[0][b:]),
            (u_ego, lambda g: g * grads()[1][:b]),
            (u_exo, lambda g: g * grads()[1][b:]),
        ],
    )
