"""Caption text processing.

Three concerns live here:

* a small tagging lexicon (surface form -> lemma + part of speech) and
  entity-profile extraction built on it;
* caption refinement, turning first-person ASR-style narration into
  third-person captions, either through documented deterministic
  rewrite rules (:class:`FallbackRefiner`) or through a remote
  completion endpoint (:class:`RemoteRefiner`);
* narration summarization for long-form clips.

The fallback rules are intentionally modest: they exist so the whole
pipeline runs hermetically, and their behaviour is pinned by tests.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .data import ClipRecord, DatasetManifest
from .exceptions import (
    RefinementParseError,
    RefinerTransportError,
    ValidationError,
)

_POS_TAGS = ("noun", "verb", "stop", "other")
_TOKEN_RE = re.compile(r"[#a-z0-9']+")


@dataclass(frozen=True)
class LexEntry:
    lemma: str
    pos: str


class TaggerLexicon:
    """Surface-form lookup table; each surface maps to exactly one entry."""

    def __init__(self, entries: dict[str, LexEntry]):
        self._entries = entries

    @classmethod
    def from_tsv(cls, path: str | Path) -> "TaggerLexicon":
        """Load ``surface<TAB>lemma<TAB>pos`` lines; '#' starts a comment."""
        entries: dict[str, LexEntry] = {}
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValidationError(
                        f"{path}:{line_no}: expected 3 tab-separated fields"
                    )
                surface, lemma, pos = (p.strip().lower() for p in parts)
                if pos not in _POS_TAGS:
                    raise ValidationError(f"{path}:{line_no}: bad pos {pos!r}")
                if surface in entries:
                    raise ValidationError(
                        f"{path}:{line_no}: duplicate surface {surface!r}"
                    )
                entries[surface] = LexEntry(lemma=lemma, pos=pos)
        return cls(entries)

    def lookup(self, surface: str) -> LexEntry | None:
        return self._entries.get(surface.lower())

    def __len__(self) -> int:
        return len(self._entries)


def default_lexicon_path() -> Path:
    from importlib.resources import files

    return Path(str(files("crossview").joinpath("data_files/lexicon.tsv")))


def load_default_lexicon() -> TaggerLexicon:
    return TaggerLexicon.from_tsv(default_lexicon_path())


# ---------------------------------------------------------------------------
# entity profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntityProfile:
    """Noun and verb lemmas found in one caption."""

    nouns: frozenset[str] = frozenset()
    verbs: frozenset[str] = frozenset()

    def noun_overlap(self, other: "EntityProfile") -> int:
        return len(self.nouns & other.nouns)

    def verb_overlap(self, other: "EntityProfile") -> int:
        return len(self.verbs & other.verbs)

    def is_empty(self) -> bool:
        return not self.nouns and not self.verbs


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; keeps intra-word apostrophes."""
    return _TOKEN_RE.findall(text.lower())


def extract_entities(text: str, lexicon: TaggerLexicon) -> EntityProfile:
    """Collect noun and verb lemmas; unknown and stop tokens are ignored."""
    nouns: set[str] = set()
    verbs: set[str] = set()
    for token in tokenize(text):
        entry = lexicon.lookup(token)
        if entry is None:
            continue
        if entry.pos == "noun":
            nouns.add(entry.lemma)
        elif entry.pos == "verb":
            verbs.add(entry.lemma)
    return EntityProfile(nouns=frozenset(nouns), verbs=frozenset(verbs))


# ---------------------------------------------------------------------------
# fallback refinement rules
# ---------------------------------------------------------------------------

_IRREGULAR_THIRD = {"be": "is", "have": "has", "do": "does", "go": "goes"}

DEFAULT_FILLERS = (
    "so", "okay", "ok", "just", "now", "um", "uh", "yeah", "well",
    "alright", "then", "really", "basically", "actually", "hi", "hello",
    "hey", "guys", "everyone", "everybody", "welcome", "today", "please",
)

_SUBJECT_TOKENS = {"i", "i'm", "im", "i'll", "we", "we're", "we'll"}
_AUX_TOKENS = {"am", "are", "was", "were", "will", "m", "re", "ll"}


def third_person(lemma: str) -> str:
    """Present-tense third-person singular of a verb lemma."""
    if lemma in _IRREGULAR_THIRD:
        return _IRREGULAR_THIRD[lemma]
    if lemma.endswith(("s", "x", "z", "ch", "sh", "o")):
        return lemma + "es"
    if len(lemma) > 1 and lemma.endswith("y") and lemma[-2] not in "aeiou":
        return lemma[:-1] + "ies"
    return lemma + "s"


class FallbackRefiner:
    """Deterministic first-person-to-caption rewrite rules.

    Applied per line, in order:

    1. lowercase and tokenize; drop ``#``-prefixed character markers;
    2. drop filler tokens anywhere, and leading conjunctions;
    3. rewrite first-person subjects (i, i'm, we, ...) to "the person"
       and drop an auxiliary (am/are/will) that follows directly;
    4. after a rewritten subject or after "gonna"/"going to", a
       base-form lexicon verb is conjugated to third person;
    5. a lexicon verb in -ing form is conjugated to third person;
       if it starts the caption, "the person" is prepended;
    6. capitalize the first letter and close with a period.

    A line with nothing left after filtering refines to "".
    """

    def __init__(self, lexicon: TaggerLexicon, fillers: tuple[str, ...] = DEFAULT_FILLERS):
        self.lexicon = lexicon
        self.fillers = frozenset(fillers)

    def refine_line(self, text: str) -> str:
        raw = tokenize(text)
        # a character marker like "#c" names the camera wearer; the
        # matching standalone letter that follows becomes the subject
        tokens: list[str] = []
        marker: str | None = None
        for tok in raw:
            if tok.startswith("#"):
                marker = tok[1:2]
                continue
            if marker is not None and tok == marker and len(tok) == 1:
                tokens.append("i")
                marker = None
                continue
            tokens.append(tok)
        out: list[str] = []
        expect_verb = False
        prepend_subject = False
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok in self.fillers:
                i += 1
                continue
            if not out and tok in ("and", "but", "or"):
                i += 1
                continue
            if tok in _SUBJECT_TOKENS:
                out.extend(("the", "person"))
                expect_verb = True
                i += 1
                while i < len(tokens) and tokens[i] in _AUX_TOKENS:
                    i += 1
                continue
            if tok == "gonna" or (
                tok == "going" and i + 1 < len(tokens) and tokens[i + 1] == "to"
            ):
                i += 2 if tok == "going" else 1
                expect_verb = True
                continue
            entry = self.lexicon.lookup(tok)
            if entry is not None and entry.pos == "verb":
                if expect_verb and tok == entry.lemma:
                    out.append(third_person(entry.lemma))
                elif tok.endswith("ing"):
                    if not out:
                        prepend_subject = True
                    out.append(third_person(entry.lemma))
                else:
                    out.append(tok)
                expect_verb = False
            else:
                out.append(tok)
                if entry is None or entry.pos != "stop":
                    expect_verb = False
            i += 1
        if prepend_subject:
            out = ["the", "person"] + out
        if not out:
            return ""
        sentence = " ".join(out)
        sentence = sentence[0].upper() + sentence[1:]
        if not sentence.endswith((".", "!", "?")):
            sentence += "."
        return sentence

    def refine_video(self, records: list[ClipRecord]) -> list[str]:
        return [self.refine_line(rec.text) for rec in records]


# ---------------------------------------------------------------------------
# remote refinement
# ---------------------------------------------------------------------------

@dataclass
class PromptTemplate:
    """Instructions, exactly ten rewrite rules, and worked examples."""

    instructions: str
    rules: list[str]
    example_inputs: list[str] = field(default_factory=list)
    example_outputs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rules) != 10:
            raise ValidationError(
                f"prompt template must list exactly 10 rules, got {len(self.rules)}"
            )
        if len(self.example_inputs) != len(self.example_outputs):
            raise ValidationError("example inputs and outputs must pair up")


def load_prompt_template(path: str | Path) -> PromptTemplate:
    """Parse the sectioned template file ([instructions]/[rules]/...)."""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    path = Path(path)
    for raw in path.read_text(encoding="utf-8").splitlines():
        header = raw.strip()
        if header.startswith("[") and header.endswith("]"):
            current = sections.setdefault(header[1:-1], [])
            continue
        if current is not None:
            current.append(raw)
    required = {"instructions", "rules"}
    missing = required - set(sections)
    if missing:
        raise ValidationError(f"{path}: missing sections {sorted(missing)}")
    rules = []
    for line in sections["rules"]:
        if not line.strip():
            continue
        rules.append(re.sub(r"^\s*\d+\s*[.)]\s*", "", line).strip())
    return PromptTemplate(
        instructions="\n".join(sections["instructions"]).strip(),
        rules=rules,
        example_inputs=[l.strip() for l in sections.get("example input", []) if l.strip()],
        example_outputs=[l.strip() for l in sections.get("example output", []) if l.strip()],
    )


def default_prompt_path() -> Path:
    from importlib.resources import files

    return Path(str(files("crossview").joinpath("data_files/refine_prompt.txt")))


def render_refine_prompt(template: PromptTemplate, records: list[ClipRecord]) -> str:
    """Assemble the full completion prompt for one video's transcript."""
    parts = [template.instructions, "", "Rules:"]
    parts += [f"{i}. {rule}" for i, rule in enumerate(template.rules, start=1)]
    if template.example_inputs:
        parts += ["", "Example input:"]
        parts += [
            f"{i}. {line}" for i, line in enumerate(template.example_inputs, start=1)
        ]
        parts += ["Example output:"]
        parts += [
            f"{i}. {line}" for i, line in enumerate(template.example_outputs, start=1)
        ]
    parts += ["", "Input:"]
    parts += [
        f"{i}. [{rec.start:.1f}-{rec.end:.1f}] {rec.text}"
        for i, rec in enumerate(records, start=1)
    ]
    parts += ["Output:"]
    return "\n".join(parts)


def parse_refined_captions(response: str, expected: int) -> list[str]:
    """Extract captions "1. ..." .. "N. ..." from a completion.

    Raises :class:`RefinementParseError` (with the raw response kept)
    unless each index 1..expected appears exactly once.
    """
    found: dict[int, str] = {}
    for line in response.splitlines():
        match = re.match(r"^\s*(\d+)\s*[.)\]:]\s*(.*)$", line)
        if not match:
            continue
        idx = int(match.group(1))
        if idx in found:
            raise RefinementParseError(f"caption index {idx} repeated", response)
        found[idx] = match.group(2).strip()
    missing = [i for i in range(1, expected + 1) if i not in found]
    extra = [i for i in found if not 1 <= i <= expected]
    if missing or extra:
        raise RefinementParseError(
            f"expected captions 1..{expected}, missing {missing}, extra {extra}",
            response,
        )
    return [found[i] for i in range(1, expected + 1)]


class RemoteRefiner:
    """Caption refinement through an HTTP completion endpoint.

    Protocol: POST ``{base_url}{path}`` with JSON
    ``{"prompt": ..., "max_tokens": ...}``; the endpoint answers
    ``{"text": ...}``.  Connection failures and 5xx responses are
    retried up to ``retries`` times; other failures are permanent.
    """

    def __init__(
        self,
        base_url: str,
        template: PromptTemplate,
        path: str = "/v1/completions",
        timeout: float = 30.0,
        retries: int = 2,
        max_tokens: int = 512,
        backoff: float = 0.5,
    ):
        self.url = base_url.rstrip("/") + path
        self.template = template
        self.timeout = timeout
        self.retries = retries
        self.max_tokens = max_tokens
        self.backoff = backoff

    def complete(self, prompt: str) -> str:
        last_error = ""
        for attempt in range(self.retries + 1):
            if attempt and self.backoff:
                time.sleep(self.backoff * attempt)
            try:
                resp = requests.post(
                    self.url,
                    json={"prompt": prompt, "max_tokens": self.max_tokens},
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if 500 <= resp.status_code < 600:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise RefinerTransportError(
                    f"{self.url}: HTTP {resp.status_code} (permanent)"
                )
            try:
                payload = resp.json()
            except json.JSONDecodeError:
                raise RefinementParseError("response is not JSON", resp.text)
            if not isinstance(payload, dict) or "text" not in payload:
                raise RefinementParseError("response lacks 'text' field", resp.text)
            return str(payload["text"])
        raise RefinerTransportError(
            f"{self.url}: unreachable after {self.retries + 1} attempts ({last_error})"
        )

    def refine_video(self, records: list[ClipRecord]) -> list[str]:
        prompt = render_refine_prompt(self.template, records)
        return parse_refined_captions(self.complete(prompt), len(records))

    def summarize(self, texts: list[str], max_words: int) -> str:
        numbered = "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=1))
        prompt = (
            "Summarize the following sequential activity narrations into one "
            f"sentence of at most {max_words} words:\n{numbered}\nSummary:"
        )
        return self.complete(prompt).strip()


# ---------------------------------------------------------------------------
# manifest-level refinement and summarization
# ---------------------------------------------------------------------------

def refine_manifest(
    manifest: DatasetManifest,
    refiner,
    max_concurrency: int = 1,
) -> DatasetManifest:
    """Refine every record, one request per video, order preserved.

    ``refiner`` is any object with ``refine_video(records) -> list[str]``.
    With ``max_concurrency > 1`` video groups are processed by a thread
    pool (useful for remote endpoints); outputs are reassembled in
    manifest order either way.
    """
    groups: dict[str, list[ClipRecord]] = {}
    for rec in manifest.records:
        groups.setdefault(rec.video_id, []).append(rec)
    video_ids = list(groups)
    if max_concurrency > 1 and len(video_ids) > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            refined_lists = list(
                pool.map(lambda vid: refiner.refine_video(groups[vid]), video_ids)
            )
    else:
        refined_lists = [refiner.refine_video(groups[vid]) for vid in video_ids]
    refined_by_clip: dict[str, str] = {}
    for vid, refined in zip(video_ids, refined_lists):
        if len(refined) != len(groups[vid]):
            raise ValidationError(
                f"video {vid!r}: {len(refined)} captions for {len(groups[vid])} clips"
            )
        for rec, caption in zip(groups[vid], refined):
            refined_by_clip[rec.clip_id] = caption
    new_records = [
        ClipRecord(
            clip_id=rec.clip_id,
            video_id=rec.video_id,
            view=rec.view,
            scenario=rec.scenario,
            start=rec.start,
            end=rec.end,
            text=rec.text,
            refined_text=refined_by_clip[rec.clip_id],
        )
        for rec in manifest.records
    ]
    return DatasetManifest(view=manifest.view, records=new_records)


def summarize_narrations(texts: list[str], max_words: int = 24, backend=None) -> str:
    """Collapse consecutive narrations into one caption.

    Deterministic fallback: a single narration passes through
    verbatim; otherwise drop empties, strip trailing periods,
    deduplicate case-insensitively preserving first occurrence, join
    with "; ", truncate to ``max_words`` tokens and close with a
    period.  With ``backend`` set, defer to its ``summarize`` method.
    """
    cleaned = [t.strip() for t in texts]
    cleaned = [t for t in cleaned if t]
    if not cleaned:
        return ""
    if len(cleaned) == 1:
        return cleaned[0]
    if backend is not None:
        return backend.summarize(cleaned, max_words)
    stripped = [t[:-1].rstrip() if t.endswith(".") else t for t in cleaned]
    seen: set[str] = set()
    kept: list[str] = []
    for t in stripped:
        key = t.lower()
        if key not in seen:
            seen.add(key)
            kept.append(t)
    joined = "; ".join(kept)
    words = joined.split()
    if len(words) > max_words:
        joined = " ".join(words[:max_words])
    if not joined.endswith((".", "!", "?")):
        joined += "."
    return joined
