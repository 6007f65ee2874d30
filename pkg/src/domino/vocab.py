"""Vocabulary loading and detokenization.

Token texts are decoded strings.  Tokens that cannot be represented as
text (undecodable byte fallbacks, special tokens) are kept with text
``None`` so ids stay dense; they are never mask-legal.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache

__all__ = ["Vocabulary", "VocabError", "detokenize", "load_vocab"]

log = logging.getLogger(__name__)


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    _fp: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if not self.tokens:
            raise VocabError("vocabulary must be non-empty")

    @classmethod
    def from_tokens(cls, tokens) -> Vocabulary:
        return cls(tuple(tokens))

    @property
    def size(self) -> int:
        """Number of real tokens (EOS excluded)."""
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return len(self.tokens)

    @property
    def mask_size(self) -> int:
        return len(self.tokens) + 1

    def text(self, token: int) -> str | None:
        if token == self.eos_id:
            return ""
        return self.tokens[token]

    def display(self, token: int) -> str:
        if token == self.eos_id:
            return "EOS"
        t = self.tokens[token]
        return t if t is not None else f"<undecodable {token}>"

    @property
    def fingerprint(self) -> bytes:
        if not self._fp:
            h = hashlib.blake2b(digest_size=16)
            h.update(json.dumps(list(self.tokens), ensure_ascii=False).encode("utf-8"))
            self._fp.append(h.digest())
        return self._fp[0]

    def to_list(self) -> list:
        return list(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def detokenize(vocab: Vocabulary, tokens) -> str:
    out = []
    for t in tokens:
        if t == vocab.eos_id:
            continue
        if not 0 <= t < vocab.eos_id:
            raise VocabError(f"token id {t} out of range")
        text = vocab.tokens[t]
        if text is None:
            raise VocabError(f"token id {t} has no text representation")
        out.append(text)
    return "".join(out)


@lru_cache(maxsize=1)
def _byte_decoder() -> dict[str, int]:
    # the reversible byte <-> printable-unicode table used by byte-level BPE
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {chr(c): b for b, c in zip(bs, cs)}


_BYTE_FALLBACK = re.compile(r"<0x([0-9A-Fa-f]{2})>")


def _decode_byte_level(token: str) -> str | None:
    table = _byte_decoder()
    try:
        raw = bytes(table[ch] for ch in token)
    except KeyError:
        return token
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return None


def _decode_sentencepiece(token: str) -> str | None:
    m = _BYTE_FALLBACK.fullmatch(token)
    if m:
        b = int(m.group(1), 16)
        return chr(b) if b < 0x80 else None
    return token.replace("▁", " ")


def _load_tokenizer_json(data) -> list:
    try:
        model = data["model"]
        vocab = model["vocab"]
    except (KeyError, TypeError):
        raise VocabError("tokenizer file has no model.vocab map") from None
    if isinstance(vocab, list):  # unigram models store [piece, score] pairs
        pieces = {entry[0]: i for i, entry in enumerate(vocab)}
    else:
        pieces = dict(vocab)
    special = set()
    for entry in data.get("added_tokens") or ():
        pieces.setdefault(entry["content"], entry["id"])
        if entry.get("special"):
            special.add(entry["id"])
    if not pieces:
        raise VocabError("vocabulary must be non-empty")
    size = max(pieces.values()) + 1
    sentencepiece = any("▁" in p or _BYTE_FALLBACK.fullmatch(p) for p in pieces)
    decode = _decode_sentencepiece if sentencepiece else _decode_byte_level
    tokens: list = [None] * size
    dropped = 0
    for piece, tid in pieces.items():
        if tid in special:
            continue
        text = decode(piece)
        if not text:
            dropped += 1
            continue
        tokens[tid] = text
    if dropped:
        log.info("%d tokens have no UTF-8 text and are excluded from masks", dropped)
    return tokens


def load_vocab(path, format: str = "auto") -> Vocabulary:
    """Load ``list-json`` (array of strings) or ``tokenizer-json`` files."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise VocabError(f"malformed vocabulary file: {e}") from None
    if format == "auto":
        format = "list-json" if isinstance(data, list) else "tokenizer-json"
    if format == "list-json":
        if not isinstance(data, list) or not all(isinstance(t, str) or t is None for t in data):
            raise VocabError("list-json vocabulary must be a JSON array of strings")
        tokens = [t if t else None for t in data]
    elif format == "tokenizer-json":
        tokens = _load_tokenizer_json(data)
    else:
        raise VocabError(f"unknown vocabulary format {format!r}")
    if not tokens:
        raise VocabError("vocabulary must be non-empty")
    return Vocabulary(tuple(tokens))
