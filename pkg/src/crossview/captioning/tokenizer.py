"""Whitespace tokenizer and vocabulary for the desk-scale decoder."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

from crossview.exceptions import ValidationError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
VIDEO_TOKEN = "<video>"
EOC_TOKEN = "<eoc>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, VIDEO_TOKEN, EOC_TOKEN)

_STRIP_CHARS = ".,!?;:\"'()[]"


def tokenize_caption(text: str) -> list[str]:
    """Split on whitespace, lowercase, strip surrounding punctuation.

    Reserved marker tokens pass through verbatim so a detokenized prompt
    re-tokenizes to the same id sequence.
    """
    out = []
    for raw in text.split():
        if raw in RESERVED_TOKENS:
            out.append(raw)
            continue
        word = raw.lower().strip(_STRIP_CHARS)
        if word:
            out.append(word)
    return out


class Vocabulary:
    """Fixed token table with the four reserved markers at ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        for tok in tokens:
            if tok in RESERVED_TOKENS:
                raise ValidationError(f"reserved token {tok!r} in vocabulary input")
            if not tok or tok != tok.lower() or " " in tok:
                raise ValidationError(f"bad vocabulary token {tok!r}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("duplicate tokens in vocabulary input")
        self._id_to_token: list[str] = list(RESERVED_TOKENS) + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        words = set()
        for text in texts:
            for tok in tokenize_caption(text):
                if tok not in RESERVED_TOKENS:
                    words.add(tok)
        return cls(sorted(words))

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def video_id(self) -> int:
        return 2

    @property
    def eoc_id(self) -> int:
        return 3

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order (for persistence)."""
        return self._id_to_token[len(RESERVED_TOKENS):]

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def encode(self, text: str) -> list[int]:
        return [self.id_of(tok) for tok in tokenize_caption(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = False) -> str:
        parts = []
        for idx in ids:
            if idx < 0 or idx >= len(self._id_to_token):
                raise ValidationError(f"token id {idx} out of range")
            if skip_special and idx < len(RESERVED_TOKENS):
                continue
            parts.append(self._id_to_token[idx])
        return " ".join(parts)
