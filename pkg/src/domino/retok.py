"""Model-guided retokenization of a fixed text.

At each step the candidates are the tokens whose text is a prefix of the
remaining target; the provider's highest-scoring candidate wins (lowest
id on ties) and its text is stripped from the target.  One provider query
per emitted token.
"""

from __future__ import annotations

import numpy as np

from .vocab import Vocabulary

__all__ = ["RetokenizeError", "retokenize"]


class RetokenizeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


def _prefix_index(vocab: Vocabulary) -> dict[str, list[int]]:
    by_text: dict[str, list[int]] = {}
    for tid, t in enumerate(vocab.tokens):
        if t:
            by_text.setdefault(t, []).append(tid)
    return by_text


def retokenize(provider, prompt, target: str, vocab: Vocabulary) -> list[int]:
    by_text = _prefix_index(vocab)
    lengths = sorted({len(t) for t in by_text})
    context = list(prompt)
    out: list[int] = []
    pos = 0
    while pos < len(target):
        cands = []
        for L in lengths:
            if pos + L > len(target):
                break
            cands.extend(by_text.get(target[pos:pos + L], ()))
        if not cands:
            raise RetokenizeError(f"no token is a prefix of the remaining text at offset {pos}", pos)
        logits = np.asarray(provider.logits(context + out), dtype=np.float64)
        cands.sort()
        scores = logits[cands]
        best = cands[int(np.argmax(scores))]
        out.append(best)
        pos += len(vocab.tokens[best])
    return out
