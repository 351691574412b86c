"""Deterministic text preprocessing: normalization, word vocabulary,
bounded token-id sequences, and hashed character n-gram features.

Tokenization here is intentionally dependency-free: a word-level
vocabulary plus FNV-1a-hashed subword n-grams, so both classifier
backends behave identically across platforms and runs.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError

PAD_ID = 0
UNK_ID = 1
SEP_ID = 2
RESERVED_IDS = 3

# Surface form inserted between title and body; lowercases to "[sep]",
# which the encoder maps back to SEP_ID.
SEP_TOKEN = "[SEP]"
_SEP_NORMALIZED = SEP_TOKEN.lower()

_CODE_FENCE_RE = re.compile(r"```.*?```", re.DOTALL)
_URL_RE = re.compile(r"https?://\S+")
_WS_RE = re.compile(r"\s+")

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash of `data`."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _U64
    return h


def concat_title_body(title: str, body: str) -> str:
    """Join an issue's title and body with the separator literal."""
    return f"{title} {SEP_TOKEN} {body}"


def normalize_text(s: str) -> str:
    """Canonical lowercase form used everywhere downstream.

    NFC, lowercase, fenced code blocks -> "codeblock", URLs -> "url",
    whitespace runs collapsed, ends trimmed. Idempotent.
    """
    s = unicodedata.normalize("NFC", s)
    s = s.lower()
    s = _CODE_FENCE_RE.sub(" codeblock ", s)
    s = _URL_RE.sub(" url ", s)
    s = _WS_RE.sub(" ", s)
    return s.strip()


@dataclass
class Vocabulary:
    """Word vocabulary with dense ids above the reserved specials.

    `tokens[i]` has id `i + RESERVED_IDS`; PAD=0, UNK=1, SEP=2 never
    collide with learned tokens.
    """

    tokens: list[str]
    min_frequency: int
    max_size: int
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {t: i + RESERVED_IDS for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ConfigError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        """Total id count including the reserved specials."""
        return RESERVED_IDS + len(self.tokens)

    def lookup(self, token: str) -> int:
        if token == _SEP_NORMALIZED:
            return SEP_ID
        return self.token_to_id.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(
            {"min_frequency": self.min_frequency, "max_size": self.max_size,
             "tokens": self.tokens},
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(tokens=list(obj["tokens"]),
                   min_frequency=int(obj["min_frequency"]),
                   max_size=int(obj["max_size"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def build_vocab(corpus: list[str], min_frequency: int, max_size: int) -> Vocabulary:
    """Count whitespace tokens of normalized text and keep the most frequent.

    Ties break lexicographically so the result is independent of corpus
    order. The separator literal never becomes a learned token.
    """
    if not corpus:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    if min_frequency < 1 or max_size < 1:
        raise ConfigError("min_frequency and max_size must be positive")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(normalize_text(text).split())
    counts.pop(_SEP_NORMALIZED, None)
    kept = [t for t, c in counts.items() if c >= min_frequency]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(tokens=kept[:max_size], min_frequency=min_frequency,
                      max_size=max_size)


@dataclass
class TokenSequence:
    """Fixed-length id sequence; mask is true exactly on real tokens."""

    ids: list[int]
    mask: list[bool]

    @property
    def n_tokens(self) -> int:
        return sum(self.mask)


def encode_sequence(text: str, vocab: Vocabulary, max_seq_len: int) -> TokenSequence:
    """Normalize, split, map to ids (OOV -> UNK), truncate, pad."""
    if max_seq_len < 1:
        raise ConfigError("max_seq_len must be positive")
    words = normalize_text(text).split()[:max_seq_len]
    ids = [vocab.lookup(w) for w in words]
    n = len(ids)
    ids.extend([PAD_ID] * (max_seq_len - n))
    mask = [True] * n + [False] * (max_seq_len - n)
    return TokenSequence(ids=ids, mask=mask)


def hash_ngrams(text: str, n_range: tuple[int, int] = (2, 4),
                buckets: int = 1 << 16) -> Counter[int]:
    """Multiset of hash buckets for character n-grams of each word.

    Words get '<' and '>' boundary markers before extraction; each
    n-gram is FNV-1a-hashed over its UTF-8 bytes and reduced mod
    `buckets`.
    """
    lo, hi = n_range
    if buckets < 1:
        raise ConfigError("buckets must be >= 1")
    if lo < 1 or hi < lo:
        raise ConfigError("invalid n-gram range")
    out: Counter[int] = Counter()
    for word in text.split():
        marked = f"<{word}>"
        for n in range(lo, hi + 1):
            for i in range(len(marked) - n + 1):
                gram = marked[i:i + n]
                out[fnv1a_64(gram.encode("utf-8")) % buckets] += 1
    return out
