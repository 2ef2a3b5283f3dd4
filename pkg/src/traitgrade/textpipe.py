"""Essay text to token ids: sentence splitting, tokenisation, vocabulary.

The splitter and tokenizer are deterministic rule machines, lowercasing
everywhere (the pretrained embeddings are uncased). ASAP anonymisation
placeholders such as ``@PERSON1`` survive as single tokens. The vocabulary
keeps the most frequent 4000 content words; everything else maps to UNK.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MAX_CONTENT_WORDS = 4000


class EmptyEssayError(ValueError):
    """The essay contains no usable sentence."""


# words that end with a period without ending the sentence
_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "etc", "vs",
    "inc", "ltd", "co", "dept", "approx", "apt", "est", "min", "max",
    "e.g", "i.e", "a.m", "p.m", "u.s", "u.k", "ph.d",
}

_SENTENCE_BREAK = re.compile(r'(?<=[.!?])["\')\]]*\s+')
_LAST_WORD = re.compile(r"(\S+)\s*$")

_CONTRACTION_NT = re.compile(r"(\w)n't\b")
_CONTRACTION_SUFFIX = re.compile(r"'(s|re|ve|ll|d|m)\b")
_TOKEN = re.compile(r"@\w+|n't|'(?:s|re|ve|ll|d|m)|\w+|[^\w\s]")


def _ends_with_abbreviation(fragment: str) -> bool:
    m = _LAST_WORD.search(fragment)
    if not m or not m.group(1).endswith("."):
        return False
    word = m.group(1).rstrip(".").lstrip('("\'').lower()
    if word in _ABBREVIATIONS:
        return True
    # initials: "J." or "u.s."-style letter-dot runs
    return len(word) == 1 and word.isalpha() or bool(re.fullmatch(r"(\w\.)+\w", word))


def split_sentences(text: str) -> list[str]:
    """Split on sentence-final . ! ? with abbreviation guards.

    Text without any terminator comes back as a single sentence; blank text
    raises :class:`EmptyEssayError`.
    """
    if text is None or not text.strip():
        raise EmptyEssayError("essay text is empty")
    fragments = [f for f in _SENTENCE_BREAK.split(text.strip()) if f.strip()]
    merged: list[str] = []
    for frag in fragments:
        if merged and _ends_with_abbreviation(merged[-1]):
            merged[-1] = merged[-1] + " " + frag
        else:
            merged.append(frag)
    return [m.strip() for m in merged if m.strip()]


def tokenize(sentence: str) -> list[str]:
    """Lowercased tokens with punctuation split off and contractions opened
    at the apostrophe ("don't" -> "do", "n't"). Empty input gives []."""
    s = sentence.lower()
    s = _CONTRACTION_NT.sub(r"\1 n't", s)
    s = _CONTRACTION_SUFFIX.sub(r" '\1", s)
    return _TOKEN.findall(s)


@dataclass
class Vocabulary:
    """Token-to-id map with PAD=0 and UNK=1; ids are contiguous from 0."""

    token_to_id: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return 2 + len(self.token_to_id)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_for(self, token_id: int) -> str:
        if token_id == PAD_ID:
            return PAD_TOKEN
        if token_id == UNK_ID:
            return UNK_TOKEN
        return self._id_to_token()[token_id]

    def _id_to_token(self) -> dict[int, str]:
        return {i: t for t, i in self.token_to_id.items()}

    def to_dict(self) -> dict:
        return {"token_to_id": dict(self.token_to_id)}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        return cls(token_to_id=dict(payload["token_to_id"]))


def build_vocab(records, max_content_words: int = MAX_CONTENT_WORDS) -> Vocabulary:
    """Count tokens over the training essays and keep the most frequent.

    Ties break lexicographically so two builds of the same fold agree.
    Must only ever see the training split.
    """
    records = list(records)
    if not records:
        raise ValueError("build_vocab: empty training set")
    counts: Counter[str] = Counter()
    for rec in records:
        for sentence in split_sentences(rec.text):
            counts.update(tokenize(sentence))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    token_to_id = {tok: i + 2 for i, (tok, _) in enumerate(ranked[:max_content_words])}
    return Vocabulary(token_to_id)


def encode_sentences(text: str, vocab: Vocabulary) -> list[list[int]]:
    """Per-sentence id lists; unknown tokens become UNK, empty sentences drop."""
    encoded = []
    for sentence in split_sentences(text):
        ids = [vocab.id_for(tok) for tok in tokenize(sentence)]
        if ids:
            encoded.append(ids)
    if not encoded:
        raise EmptyEssayError("essay has no non-empty sentences after tokenisation")
    return encoded


def encode_essay(record, vocab: Vocabulary) -> list[list[int]]:
    return encode_sentences(record.text, vocab)
