"""Random words, vocabularies and tokenizations for property tests."""

from __future__ import annotations

import random
import string

from .. import regex as rx
from ..grammar import Cfg, Terminal, productive_nonterminals
from ..vocab import Vocabulary

__all__ = [
    "DerivationSampler",
    "random_terminal_string",
    "random_tokenization",
    "synthetic_vocab",
    "tokenizable",
]

PRINTABLE = [ord(c) for c in string.printable if c not in "\r\x0b\x0c"]


def _pick_char(cs: rx.CharSet, rng: random.Random) -> str:
    nice = [c for c in PRINTABLE if chr(c) in cs]
    if nice:
        return chr(rng.choice(nice))
    lo, hi = rng.choice(cs.ranges)
    return chr(rng.randint(lo, min(hi, lo + 255)))


def random_terminal_string(node, rng: random.Random, max_rep: int = 3) -> str:
    """A random member of a terminal pattern (printable characters preferred)."""
    if isinstance(node, rx.Chars):
        return _pick_char(node.chars, rng)
    if isinstance(node, rx.Concat):
        return "".join(random_terminal_string(i, rng, max_rep) for i in node.items)
    if isinstance(node, rx.Alt):
        return random_terminal_string(rng.choice(node.items), rng, max_rep)
    if isinstance(node, rx.Repeat):
        hi = node.max if node.max is not None else node.min + max_rep
        n = rng.randint(node.min, min(hi, node.min + max_rep))
        return "".join(random_terminal_string(node.item, rng, max_rep) for _ in range(n))
    if isinstance(node, rx.Empty):
        return ""
    raise TypeError(node)


class DerivationSampler:
    """Random words of a grammar with a soft depth bound.

    Below ``max_depth`` productions are chosen uniformly; past it, only the
    productions of minimal height are used, so sampling always terminates.
    """

    def __init__(self, cfg: Cfg, max_depth: int = 8, max_rep: int = 3):
        self.cfg = cfg
        self.max_depth = max_depth
        self.max_rep = max_rep
        productive = productive_nonterminals(cfg)
        self.prods: dict[int, list] = {}
        for p in cfg.productions:
            if all(isinstance(s, Terminal) or s.id in productive for s in p.rhs):
                self.prods.setdefault(p.lhs, []).append(p.rhs)
        inf = float("inf")
        height = {n: inf for n in range(len(cfg.nonterminals))}

        def h(sym):
            return 0 if isinstance(sym, Terminal) else height[sym.id]

        changed = True
        while changed:
            changed = False
            for lhs, alts in self.prods.items():
                for rhs in alts:
                    v = 1 + max((h(s) for s in rhs), default=0)
                    if v < height[lhs]:
                        height[lhs] = v
                        changed = True
        self.height = height
        self.shallow = {
            lhs: [rhs for rhs in alts if 1 + max((h(s) for s in rhs), default=0) == height[lhs]]
            for lhs, alts in self.prods.items()
        }

    def sample_terminals(self, rng: random.Random) -> list[int]:
        out: list[int] = []
        # explicit stack of (symbol, depth) to avoid recursion limits
        stack = [(self.cfg.start, 0, False)]
        while stack:
            sym, depth, is_term = stack.pop()
            if is_term:
                out.append(sym)
                continue
            alts = self.prods[sym] if depth < self.max_depth else self.shallow[sym]
            rhs = rng.choice(alts)
            for s in reversed(rhs):
                stack.append((s.id, depth + 1, isinstance(s, Terminal)))
        return out

    def sample(self, rng: random.Random) -> str:
        terms = self.sample_terminals(rng)
        return "".join(random_terminal_string(self.cfg.terminals[t].ast(), rng, self.max_rep) for t in terms)


def synthetic_vocab(cfg: Cfg, size: int, seed: int = 0, samples: int | None = None) -> Vocabulary:
    """A deterministic vocabulary of ``size`` tokens shaped by the grammar.

    Every printable character any terminal can contain is a single-character
    token, so every sampled word is tokenizable.  The remainder are literal
    terminal texts and frequent substrings of sampled words (including
    bridge tokens spanning terminal boundaries), padded with random strings.
    """
    rng = random.Random(seed)
    singles = []
    for c in PRINTABLE:
        if any(_may_contain(t.ast(), c) for t in cfg.terminals):
            singles.append(chr(c))
    tokens: list[str] = list(singles)
    seen = set(tokens)

    def add(t: str) -> bool:
        if t and t not in seen and len(tokens) < size:
            seen.add(t)
            tokens.append(t)
        return len(tokens) >= size

    for t in cfg.terminals:
        text = rx.literal_text(t.ast())
        if text:
            add(text)
    sampler = DerivationSampler(cfg, max_depth=6)
    counts: dict[str, int] = {}
    n_samples = samples if samples is not None else max(50, size // 4)
    for _ in range(n_samples):
        w = sampler.sample(rng)
        for _ in range(8):
            if len(w) < 2:
                break
            i = rng.randrange(len(w) - 1)
            j = min(len(w), i + rng.randint(2, 6))
            sub = w[i:j]
            counts[sub] = counts.get(sub, 0) + 1
    for sub, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if add(sub):
            break
    alphabet = singles or ["a"]
    while len(tokens) < size:
        add("".join(rng.choice(alphabet) for _ in range(rng.randint(2, 8))))
    return Vocabulary(tuple(tokens[:size]))


def _may_contain(node, c: int) -> bool:
    if isinstance(node, rx.Chars):
        return chr(c) in node.chars
    if isinstance(node, (rx.Concat, rx.Alt)):
        return any(_may_contain(i, c) for i in node.items)
    if isinstance(node, rx.Repeat):
        return node.max != 0 and _may_contain(node.item, c)
    return False


def _index(vocab: Vocabulary):
    by_text: dict[str, list[int]] = {}
    for tid, t in enumerate(vocab.tokens):
        if t:
            by_text.setdefault(t, []).append(tid)
    longest = max((len(t) for t in by_text), default=0)
    return by_text, longest


def _reachable_ends(text: str, by_text, longest: int) -> list[bool]:
    n = len(text)
    ok = [False] * (n + 1)
    ok[n] = True
    for i in range(n - 1, -1, -1):
        for L in range(1, min(longest, n - i) + 1):
            if ok[i + L] and text[i:i + L] in by_text:
                ok[i] = True
                break
    return ok


def tokenizable(text: str, vocab: Vocabulary) -> bool:
    by_text, longest = _index(vocab)
    return _reachable_ends(text, by_text, longest)[0]


def random_tokenization(text: str, vocab: Vocabulary, rng: random.Random) -> list[int] | None:
    """A uniformly chosen-per-step segmentation of ``text`` into token ids."""
    by_text, longest = _index(vocab)
    ok = _reachable_ends(text, by_text, longest)
    if not ok[0]:
        return None
    out = []
    i = 0
    while i < len(text):
        opts = [L for L in range(1, min(longest, len(text) - i) + 1)
                if ok[i + L] and text[i:i + L] in by_text]
        L = rng.choice(opts)
        out.append(rng.choice(by_text[text[i:i + L]]))
        i += L
    return out
