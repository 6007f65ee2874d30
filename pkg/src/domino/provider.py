"""Logit sources: scripted replay, a token trigram model and a remote HTTP model.

Every provider returns score vectors of length ``|V|+1`` (the last entry
is EOS) and counts its queries in ``calls``.  ``score_continuation``
scores a context plus a proposed continuation in one query, returning
one vector per position: after the context, after each proposed token.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time

import numpy as np

from .vocab import Vocabulary

__all__ = [
    "AdversarialProvider",
    "HttpProvider",
    "LogitProvider",
    "ProviderError",
    "ReplayProvider",
    "TrigramProvider",
    "greedy_tokenize",
    "http_provider",
    "make_provider",
    "replay_provider",
    "trigram_provider",
]

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    pass


class LogitProvider:
    """Base class; subclasses implement ``_logits``."""

    vocab_size: int

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.calls = 0
        self._lock = threading.Lock()

    def _logits(self, context: list) -> np.ndarray:
        raise NotImplementedError

    def logits(self, context) -> np.ndarray:
        with self._lock:
            self.calls += 1
        return self._logits(list(context))

    def score_continuation(self, context, continuation) -> list[np.ndarray]:
        with self._lock:
            self.calls += 1
        ctx = list(context)
        out = [self._logits(ctx)]
        for t in continuation:
            ctx.append(t)
            out.append(self._logits(ctx))
        return out


class ReplayProvider(LogitProvider):
    """Scripted per-step scores.

    Script lines are ``{"prefer": [ids...]}`` (descending large scores for
    the listed ids, a floor for the rest) or ``{"logits": [...]}``.  The
    step is the number of tokens generated after ``prompt_length``; past
    the end of the script EOS is preferred.
    """

    HIGH = 100.0
    FLOOR = 0.0

    def __init__(self, steps: list, vocab_size: int, prompt_length: int = 0):
        super().__init__(vocab_size)
        self.prompt_length = prompt_length
        self.steps = []
        for n, step in enumerate(steps, 1):
            if "logits" in step:
                vec = np.asarray(step["logits"], dtype=np.float64)
                if vec.shape != (vocab_size,):
                    raise ProviderError(f"script line {n}: expected {vocab_size} logits, got {vec.shape[0] if vec.ndim else 0}")
            elif "prefer" in step:
                vec = np.full(vocab_size, self.FLOOR)
                for rank, tid in enumerate(step["prefer"]):
                    if not 0 <= tid < vocab_size:
                        raise ProviderError(f"script line {n}: token id {tid} out of range")
                    vec[tid] = self.HIGH - rank
            else:
                raise ProviderError(f"script line {n}: expected 'prefer' or 'logits'")
            self.steps.append(vec)
        self._eos = np.full(vocab_size, self.FLOOR)
        self._eos[vocab_size - 1] = self.HIGH

    @classmethod
    def from_file(cls, path, vocab_size: int, prompt_length: int = 0) -> ReplayProvider:
        steps = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    steps.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ProviderError(f"script line {n}: {e}") from None
        return cls(steps, vocab_size, prompt_length)

    @classmethod
    def preferring(cls, tokens, vocab_size: int) -> ReplayProvider:
        return cls([{"prefer": [t]} for t in tokens], vocab_size)

    def _logits(self, context):
        step = len(context) - self.prompt_length
        if 0 <= step < len(self.steps):
            return self.steps[step].copy()
        return self._eos.copy()


class AdversarialProvider(LogitProvider):
    """Strongly prefers a pseudo-random token at every step.

    Scores are a seeded function of the context, so runs are reproducible.
    """

    def __init__(self, vocab_size: int, seed: int = 0, boost: float = 10.0):
        super().__init__(vocab_size)
        self.seed = seed
        self.boost = boost

    def _logits(self, context):
        rng = np.random.default_rng([self.seed, len(context)] + [t + 1 for t in context[-4:]])
        vec = rng.standard_normal(self.vocab_size)
        vec[rng.integers(self.vocab_size)] += self.boost
        return vec


def greedy_tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Longest-match tokenization (lowest id among equal texts)."""
    by_text: dict[str, int] = {}
    for tid, t in enumerate(vocab.tokens):
        if t and t not in by_text:
            by_text[t] = tid
    longest = max((len(t) for t in by_text), default=0)
    out = []
    i = 0
    while i < len(text):
        for L in range(min(longest, len(text) - i), 0, -1):
            tid = by_text.get(text[i:i + L])
            if tid is not None:
                out.append(tid)
                i += L
                break
        else:
            raise ProviderError(f"corpus text at offset {i} is not tokenizable: {text[i:i + 10]!r}")
    return out


class TrigramProvider(LogitProvider):
    """Token trigram model with add-k smoothing; scores are log-probabilities."""

    def __init__(self, documents, vocab: Vocabulary, k: float = 0.1):
        super().__init__(vocab.mask_size)
        self.k = k
        eos = vocab.eos_id
        counts: dict[tuple[int, int], dict[int, int]] = {}
        n_docs = 0
        for doc in documents:
            ids = [-1, -1] + greedy_tokenize(doc, vocab) + [eos]
            n_docs += 1
            for a, b, c in zip(ids, ids[1:], ids[2:]):
                row = counts.setdefault((a, b), {})
                row[c] = row.get(c, 0) + 1
        if not n_docs:
            raise ProviderError("trigram corpus is empty")
        self.counts = counts
        self._cache: dict[tuple[int, int], np.ndarray] = {}
        self._uniform = np.full(self.vocab_size, -math.log(self.vocab_size))

    @classmethod
    def from_file(cls, path, vocab: Vocabulary, k: float = 0.1) -> TrigramProvider:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
        try:
            docs = json.loads(raw)
            if not isinstance(docs, list) or not all(isinstance(d, str) for d in docs):
                raise ValueError
        except ValueError:
            docs = [line for line in raw.splitlines() if line.strip()]
        return cls(docs, vocab, k)

    def _logits(self, context):
        ctx = [-1, -1] + list(context)
        key = (ctx[-2], ctx[-1])
        vec = self._cache.get(key)
        if vec is None:
            row = self.counts.get(key)
            if row is None:
                vec = self._uniform
            else:
                total = sum(row.values())
                denom = total + self.k * self.vocab_size
                vec = np.full(self.vocab_size, math.log(self.k / denom))
                for c, n in row.items():
                    vec[c] = math.log((n + self.k) / denom)
            self._cache[key] = vec
        return vec.copy()


class HttpProvider(LogitProvider):
    """Remote model over a small JSON protocol.

    ``POST {"context": ids}`` answers ``{"logits": [...]}``; with a
    ``"continuation"`` field it answers ``{"logits_per_position": [...]}``.
    """

    def __init__(self, url: str, vocab_size: int, timeout: float = 30.0, retries: int = 3, backoff: float = 0.1):
        super().__init__(vocab_size)
        import httpx

        self.url = url
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout)
        self._httpx = httpx

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        last = None
        for attempt in range(self.retries):
            try:
                r = self._client.post(self.url, json=payload)
                r.raise_for_status()
                return r.json()
            except (self._httpx.HTTPError, ValueError) as e:
                last = e
                log.warning("provider request failed (attempt %d/%d): %s", attempt + 1, self.retries, e)
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ProviderError(f"provider failure after {self.retries} attempts: {last}")

    def _vector(self, raw) -> np.ndarray:
        vec = np.asarray(raw, dtype=np.float64)
        if vec.shape != (self.vocab_size,):
            raise ProviderError(f"expected {self.vocab_size} logits, got shape {vec.shape}")
        return vec

    def _checked(self, payload: dict, field: str):
        last = None
        for attempt in range(self.retries):
            data = self._post(payload)
            try:
                if field == "logits":
                    return self._vector(data["logits"])
                return [self._vector(v) for v in data["logits_per_position"]]
            except (KeyError, TypeError, ProviderError) as e:
                last = e
                log.warning("malformed provider response (attempt %d/%d): %s", attempt + 1, self.retries, e)
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ProviderError(f"provider failure after {self.retries} attempts: {last}")

    def _logits(self, context):
        return self._checked({"context": context}, "logits")

    def score_continuation(self, context, continuation):
        with self._lock:
            self.calls += 1
        vecs = self._checked({"context": list(context), "continuation": list(continuation)}, "logits_per_position")
        if not vecs or len(vecs) > len(continuation) + 1:
            raise ProviderError(f"expected up to {len(continuation) + 1} score vectors, got {len(vecs)}")
        return vecs


def replay_provider(script, vocab_size: int, prompt_length: int = 0) -> ReplayProvider:
    return ReplayProvider.from_file(script, vocab_size, prompt_length)


def trigram_provider(corpus, vocab: Vocabulary, k: float = 0.1) -> TrigramProvider:
    return TrigramProvider.from_file(corpus, vocab, k)


def http_provider(url: str, vocab_size: int, timeout: float = 30.0) -> HttpProvider:
    return HttpProvider(url, vocab_size, timeout)


def make_provider(spec: str, vocab: Vocabulary, prompt_length: int = 0, seed: int = 0,
                  timeout: float = 30.0) -> LogitProvider:
    """Build a provider from ``replay:FILE``, ``trigram:CORPUS``, ``http:URL`` or ``random:SEED``."""
    kind, sep, arg = spec.partition(":")
    if not sep:
        raise ValueError(f"provider spec {spec!r} must look like kind:argument")
    if kind == "replay":
        return replay_provider(arg, vocab.mask_size, prompt_length)
    if kind == "trigram":
        return trigram_provider(arg, vocab)
    if kind == "http":
        return http_provider(arg, vocab.mask_size, timeout)
    if kind == "random":
        return AdversarialProvider(vocab.mask_size, int(arg or seed))
    raise ValueError(f"unknown provider kind {kind!r}")
