"""Pseudo ego-exo pair mining over captioned corpora.

For every ego clip, exo candidates from the same scenario are scored
by shared entity lemmas; a valid pair needs at least one shared noun
AND one shared verb.  Candidates are ranked by total overlap with a
deterministic tie-break, and the top-k survive.  Long-form clips are
built separately by windowing consecutive narrations of one video.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import ClipRecord, DatasetManifest
from .exceptions import ManifestParseError, ValidationError
from .text import EntityProfile, TaggerLexicon, extract_entities, summarize_narrations


@dataclass
class MiningConfig:
    alpha_s: float = 1.0  # boundary extension in seconds, each side
    top_k: int = 1  # exo candidates kept per ego clip
    longform_min_span: float = 60.0  # seconds
    longform_max_span: float = 300.0
    narrations_per_window: int = 20
    summary_max_words: int = 24


@dataclass(frozen=True)
class PairCandidate:
    exo_clip_id: str
    noun_overlap: int
    verb_overlap: int

    @property
    def score(self) -> int:
        return self.noun_overlap + self.verb_overlap


@dataclass
class MinedPair:
    ego_clip_id: str
    candidates: list[PairCandidate]


@dataclass
class MiningResult:
    pairs: list[MinedPair]
    ego_clips: int = 0
    matched: int = 0
    skipped_missing_scenario: int = 0  # ego clips whose scenario has no exo clips


def rank_candidates(candidates: list[PairCandidate]) -> list[PairCandidate]:
    """Highest score first; ties fall to noun overlap, then id order."""
    return sorted(
        candidates,
        key=lambda c: (-c.score, -c.noun_overlap, c.exo_clip_id),
    )


def mine_pairs(
    ego_manifest: DatasetManifest,
    exo_manifest: DatasetManifest,
    lexicon: TaggerLexicon,
    cfg: MiningConfig | None = None,
) -> MiningResult:
    """Match every ego clip against same-scenario exo clips.

    Uses inverted noun/verb indexes per scenario so only clips sharing
    at least one lemma are scored; the result is identical to scoring
    every (ego, exo) pair exhaustively.
    """
    cfg = cfg or MiningConfig()
    if cfg.top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {cfg.top_k}")

    # per-scenario inverted indexes over the exo side
    noun_index: dict[str, dict[str, set[str]]] = {}
    verb_index: dict[str, dict[str, set[str]]] = {}
    exo_profiles: dict[str, EntityProfile] = {}
    scenarios_with_exo: set[str] = set()
    for rec in exo_manifest.records:
        profile = extract_entities(rec.caption, lexicon)
        exo_profiles[rec.clip_id] = profile
        scenarios_with_exo.add(rec.scenario)
        nouns = noun_index.setdefault(rec.scenario, {})
        verbs = verb_index.setdefault(rec.scenario, {})
        for lemma in profile.nouns:
            nouns.setdefault(lemma, set()).add(rec.clip_id)
        for lemma in profile.verbs:
            verbs.setdefault(lemma, set()).add(rec.clip_id)

    result = MiningResult(pairs=[], ego_clips=len(ego_manifest.records))
    for rec in ego_manifest.records:
        if rec.scenario not in scenarios_with_exo:
            result.skipped_missing_scenario += 1
            continue
        profile = extract_entities(rec.caption, lexicon)
        if profile.is_empty():
            continue
        noun_hits: dict[str, int] = {}
        for lemma in profile.nouns:
            for cid in noun_index[rec.scenario].get(lemma, ()):
                noun_hits[cid] = noun_hits.get(cid, 0) + 1
        if not noun_hits:
            continue
        verb_hits: dict[str, int] = {}
        for lemma in profile.verbs:
            for cid in verb_index[rec.scenario].get(lemma, ()):
                verb_hits[cid] = verb_hits.get(cid, 0) + 1
        shared = set(noun_hits) & set(verb_hits)
        if not shared:
            continue
        candidates = [
            PairCandidate(cid, noun_hits[cid], verb_hits[cid]) for cid in sorted(shared)
        ]
        ranked = rank_candidates(candidates)[: cfg.top_k]
        result.pairs.append(MinedPair(rec.clip_id, ranked))
        result.matched += 1
    return result


def extend_boundaries(
    start: float,
    end: float,
    alpha: float,
    video_start: float = 0.0,
    video_end: float = float("inf"),
) -> tuple[float, float]:
    """Widen a clip span by alpha seconds each side, clamped to the video."""
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    return max(video_start, start - alpha), min(video_end, end + alpha)


# ---------------------------------------------------------------------------
# long-form clips
# ---------------------------------------------------------------------------

def build_longform_clips(
    records: list[ClipRecord],
    cfg: MiningConfig | None = None,
    backend=None,
) -> list[ClipRecord]:
    """Window one video's narrations into long-form clips.

    Consecutive, non-overlapping windows of ``narrations_per_window``
    records become one clip each, provided the window span lies within
    the configured range; the clip text is the summarized narration
    sequence.  Records must belong to a single video and be ordered by
    start time.
    """
    cfg = cfg or MiningConfig()
    if not records:
        return []
    video_ids = {rec.video_id for rec in records}
    if len(video_ids) != 1:
        raise ValidationError(f"records span multiple videos: {sorted(video_ids)}")
    starts = [rec.start for rec in records]
    if starts != sorted(starts):
        raise ValidationError("records must be ordered by start time")

    out: list[ClipRecord] = []
    size = cfg.narrations_per_window
    for index, begin in enumerate(range(0, len(records) - size + 1, size)):
        window = records[begin : begin + size]
        span_start = window[0].start
        span_end = window[-1].end
        span = span_end - span_start
        if not (cfg.longform_min_span <= span <= cfg.longform_max_span):
            continue
        text = summarize_narrations(
            [rec.caption for rec in window],
            max_words=cfg.summary_max_words,
            backend=backend,
        )
        out.append(
            ClipRecord(
                clip_id=f"{window[0].video_id}:lf{index:04d}",
                video_id=window[0].video_id,
                view=window[0].view,
                scenario=window[0].scenario,
                start=span_start,
                end=span_end,
                text=text,
            )
        )
    return out


# ---------------------------------------------------------------------------
# pairs file I/O (JSONL)
# ---------------------------------------------------------------------------

def save_pairs(pairs: list[MinedPair], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {
                        "ego_clip_id": pair.ego_clip_id,
                        "exo_clip_ids": [c.exo_clip_id for c in pair.candidates],
                        "noun_overlaps": [c.noun_overlap for c in pair.candidates],
                        "verb_overlaps": [c.verb_overlap for c in pair.candidates],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_pairs(path: str | Path) -> list[MinedPair]:
    path = Path(path)
    if not path.is_file():
        raise ManifestParseError(str(path), 0, "no such pairs file")
    out: list[MinedPair] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                candidates = [
                    PairCandidate(cid, int(n), int(v))
                    for cid, n, v in zip(
                        raw["exo_clip_ids"],
                        raw["noun_overlaps"],
                        raw["verb_overlaps"],
                        strict=True,
                    )
                ]
                pair = MinedPair(raw["ego_clip_id"], candidates)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestParseError(str(path), line_no, f"bad pair record: {exc}")
            if pair.ego_clip_id in seen:
                raise ManifestParseError(
                    str(path), line_no, f"duplicate ego_clip_id {pair.ego_clip_id!r}"
                )
            seen.add(pair.ego_clip_id)
            out.append(pair)
    return out
