"""Count-based speculative token proposals.

The table counts, per speculation key (latest subterminal, parser
fingerprint), how often each token was chosen when the key was reached.
Proposals follow the most frequent token while its estimated probability
stays above the threshold; the provider then checks the whole run in one
batched query, so accepted tokens cost no extra model calls.
"""

from __future__ import annotations

import json
import threading

from .engine import DecodeSession, MaskConfig

__all__ = ["SpeculationTable", "SpeculationError", "verify_and_accept"]


class SpeculationError(ValueError):
    pass


class SpeculationTable:
    def __init__(self, s: int = 10, threshold: float = 0.8):
        if not 0 < threshold <= 1:
            raise SpeculationError("threshold must be in (0, 1]")
        if s < 0:
            raise SpeculationError("s must be non-negative")
        self.s = s
        self.threshold = threshold
        # key -> [reach count, {token: chosen count}]
        self.counts: dict[tuple, list] = {}
        self._lock = threading.Lock()

    def record(self, key: tuple, chosen: int) -> None:
        with self._lock:
            entry = self.counts.get(key)
            if entry is None:
                entry = self.counts[key] = [0, {}]
            entry[0] += 1
            entry[1][chosen] = entry[1].get(chosen, 0) + 1

    def reach(self, key: tuple) -> int:
        entry = self.counts.get(key)
        return entry[0] if entry else 0

    def probability(self, key: tuple, token: int) -> float:
        entry = self.counts.get(key)
        if not entry or not entry[0]:
            return 0.0
        return entry[1].get(token, 0) / entry[0]

    def best(self, key: tuple) -> tuple[int, float] | None:
        """Most frequently chosen token (lowest id on ties) and its probability."""
        with self._lock:
            entry = self.counts.get(key)
            if not entry or not entry[0]:
                return None
            token, n = min(entry[1].items(), key=lambda kv: (-kv[1], kv[0]))
            return token, n / entry[0]

    def propose(self, session: DecodeSession, cfg: MaskConfig = MaskConfig()) -> list[int]:
        """Roll forward on a copy of the session while the table is confident."""
        if self.s <= 0 or session.finished:
            return []
        sim = session.clone()
        out: list[int] = []
        while len(out) < self.s:
            guess = self.best(sim.speculation_key())
            if guess is None or guess[1] < self.threshold:
                break
            token = guess[0]
            if not sim.check_token(token, cfg):
                break
            out.append(token)
            if token == sim.eos_id:
                break
            sim.update(token)
        return out

    # --- persistence ---------------------------------------------------------

    def to_json(self, grammar_fp: bytes = b"", vocab_fp: bytes = b"") -> dict:
        entries = []
        for (alpha, beta), (reach, chosen) in sorted(self.counts.items(), key=lambda kv: repr(kv[0])):
            entries.append({"alpha": list(alpha), "beta": beta, "reach": reach,
                            "chosen": {str(t): n for t, n in sorted(chosen.items())}})
        return {"grammar": grammar_fp.hex(), "vocab": vocab_fp.hex(), "s": self.s,
                "threshold": self.threshold, "entries": entries}

    @classmethod
    def from_json(cls, data: dict, grammar_fp: bytes | None = None, vocab_fp: bytes | None = None,
                  s: int | None = None, threshold: float | None = None) -> SpeculationTable:
        if grammar_fp is not None and data.get("grammar") != grammar_fp.hex():
            raise SpeculationError("speculation table was built for a different grammar")
        if vocab_fp is not None and data.get("vocab") != vocab_fp.hex():
            raise SpeculationError("speculation table was built for a different vocabulary")
        table = cls(s if s is not None else data.get("s", 10),
                    threshold if threshold is not None else data.get("threshold", 0.8))
        for e in data.get("entries", ()):
            key = (tuple(e["alpha"]), int(e["beta"]))
            table.counts[key] = [int(e["reach"]), {int(t): int(n) for t, n in e["chosen"].items()}]
        return table

    def save(self, path, grammar_fp: bytes = b"", vocab_fp: bytes = b"") -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(grammar_fp, vocab_fp), f)

    @classmethod
    def load(cls, path, grammar_fp: bytes | None = None, vocab_fp: bytes | None = None,
             s: int | None = None, threshold: float | None = None) -> SpeculationTable:
        with open(path, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise SpeculationError(f"malformed speculation table: {e}") from None
        return cls.from_json(data, grammar_fp, vocab_fp, s, threshold)


def verify_and_accept(provider, session: DecodeSession, proposal: list[int], decide, context) -> tuple[int, list]:
    """Check a proposal against the provider with one batched query.

    ``decide(logits, offset, session)`` makes the ordinary masked decode
    decision at ``offset`` tokens past the current position.  Returns the
    accepted prefix length and the decisions to emit: the accepted tokens
    followed by the provider's own choice at the first mismatch (or after
    the full proposal), each as ``(token, logits, intervened, popcount)``.
    The session itself is not modified.
    """
    vectors = provider.score_continuation(context, proposal)
    sim = session.clone()
    decisions = []
    accepted = 0
    for i, vec in enumerate(vectors):
        if sim.finished:
            break
        if i > 0 and sim.force_eos_check():
            decisions.append((sim.eos_id, None, False, 1))
            break
        chosen, intervened, pop = decide(vec, i, sim)
        decisions.append((chosen, vec, intervened, pop))
        if i < len(proposal) and chosen == proposal[i]:
            accepted += 1
            sim.update(chosen)
            continue
        break
    return accepted, decisions
