"""Vocabulary-aligned subterminal trees.

For a scanner position, every vocabulary token is classified by the
sequence of terminal-boundary events its characters cause (its
*subterminal sequence*).  Tokens are then organized in a prefix tree over
those sequences, one tree per scanner position, so the online engine only
has to check tree paths against the parser instead of re-scanning tokens.

Scanner positions ("tree keys") are per lexing hypothesis: either the
terminal boundary, or a pair ``(terminal, dfa state)`` for a partially
read terminal.  A split between two terminals is considered when the
second can directly follow the first in some sentential form, or when the
character cannot continue the first terminal at all.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .automata import Scanner, build_scanner
from .grammar import Cfg, terminal_adjacency
from .vocab import Vocabulary

__all__ = [
    "BOUNDARY",
    "CompiledArtifact",
    "Kind",
    "PrecomputeBudgetError",
    "Subterminal",
    "SubterminalTree",
    "Traverser",
    "TreeKey",
    "build_trees",
    "classify_traversal",
    "compile_artifact",
]

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 100_000


class PrecomputeBudgetError(RuntimeError):
    pass


class Kind(enum.IntEnum):
    FULL = 0
    FULL_CONT = 1
    START = 2
    END = 3
    CONT = 4

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    Kind.FULL: "Full",
    Kind.FULL_CONT: "FullContinuable",
    Kind.START: "Start",
    Kind.END: "End",
    Kind.CONT: "Continuation",
}

FULL, FULL_CONT, START, END, CONT = (int(k) for k in Kind)
# kinds that leave a terminal open at the end of the token
OPEN_KINDS = frozenset((FULL_CONT, START, CONT))
# kinds whose terminal was begun inside the token (so any pending terminal closed first)
STARTED_KINDS = frozenset((FULL, FULL_CONT, START))


@dataclass(frozen=True)
class TreeKey:
    """Scanner position: ``terminal == -1`` is the terminal boundary."""

    terminal: int
    state: int

    @property
    def boundary(self) -> bool:
        return self.terminal < 0


BOUNDARY = TreeKey(-1, -1)


@dataclass(frozen=True)
class Subterminal:
    terminal: int
    kind: Kind
    end_states: frozenset = frozenset()

    def __repr__(self) -> str:
        return f"{self.kind.label}({self.terminal})"


class Traverser:
    """Character-level subterminal classification from a tree key.

    A search state is ``(edges, terminal, dfa_state, started, consumed)``
    where ``edges`` holds the closed subterminals so far, ``started`` says
    the open terminal began inside this token and ``consumed`` says it read
    at least one character of this token.
    """

    def __init__(self, scanner: Scanner, cfg: Cfg):
        self.scanner = scanner
        self.cfg = cfg
        self.num_terminals = scanner.num_terminals
        self.eos = scanner.eos_terminal
        self.dfas = [scanner.dfa(t) for t in range(self.num_terminals)]
        first, last, follow = terminal_adjacency(cfg)
        self.first = first
        self.last = last
        self.follow = follow
        anywhere = set(first)
        for f in follow.values():
            anywhere |= f
        self.candidates = {-1: sorted(anywhere)}
        for t in range(self.num_terminals):
            self.candidates[t] = sorted(follow.get(t, ()))
        self._starters: dict[tuple[int, str], tuple] = {}

    def starters(self, prev: int, ch: str) -> tuple:
        key = (prev, ch)
        out = self._starters.get(key)
        if out is None:
            lst = []
            for u in self.candidates[prev]:
                d = self.dfas[u]
                q = d.step(d.start, ch)
                if q >= 0:
                    lst.append((u, q))
            out = tuple(lst)
            self._starters[key] = out
        return out

    def initial(self, key: TreeKey) -> list:
        if key.boundary:
            return [((), -1, -1, False, False)]
        return [((), key.terminal, key.state, False, False)]

    def expand(self, states, ch: str) -> list:
        out = []
        dfas = self.dfas
        for seq, t, q, started, consumed in states:
            if t >= 0:
                d = dfas[t]
                q2 = d.step(q, ch)
                if q2 >= 0:
                    out.append((seq, t, q2, started, True))
                if d.accepting[q]:
                    if started:
                        seq2 = seq + ((t, FULL, -1),)
                    elif consumed:
                        seq2 = seq + ((t, END, -1),)
                    else:
                        seq2 = seq  # implicit close at the token start
                    # a forced close (char cannot continue t) may start anything
                    for u, q3 in self.starters(t if q2 >= 0 else -1, ch):
                        out.append((seq2, u, q3, True, True))
            else:
                for u, q3 in self.starters(-1, ch):
                    out.append((seq, u, q3, True, True))
        return out

    def finalize(self, state):
        """Close a search state at the token end: ``(edges, end TreeKey)`` or None."""
        seq, t, q, started, consumed = state
        if t < 0 or not (started or consumed):
            return None
        d = self.dfas[t]
        acc, out = d.accepting[q], d.has_out[q]
        if started:
            kind = FULL if acc and not out else (FULL_CONT if acc else START)
        else:
            kind = END if acc and not out else CONT
        if kind in OPEN_KINDS:
            return seq + ((t, kind, q),), TreeKey(t, q)
        return seq + ((t, kind, -1),), BOUNDARY

    def traverse(self, key: TreeKey, text: str) -> set:
        states = self.initial(key)
        for ch in text:
            states = self.expand(states, ch)
            if not states:
                return set()
        out = set()
        for s in states:
            f = self.finalize(s)
            if f is not None:
                out.add(f)
        return out

    def key_for_prefix(self, text: str) -> list:
        """All (edges, end key) hypotheses for an arbitrary text from the boundary."""
        return sorted(self.traverse(BOUNDARY, text)) if text else [((), BOUNDARY)]

    def to_subterminals(self, edges) -> tuple:
        out = []
        for t, kind, q in edges:
            ends = self.dfas[t].sets[q] if q >= 0 and t < self.num_terminals else frozenset()
            out.append(Subterminal(t, Kind(kind), ends))
        return tuple(out)


def classify_traversal(scanner: Scanner, start: TreeKey, token_text: str, cfg: Cfg | None = None,
                       traverser: Traverser | None = None) -> set:
    """Subterminal sequences realized by ``token_text`` from ``start``."""
    if traverser is None:
        if cfg is None:
            raise ValueError("classify_traversal needs the grammar (cfg) or a Traverser")
        traverser = Traverser(scanner, cfg)
    return {traverser.to_subterminals(edges) for edges, _ in traverser.traverse(start, token_text)}


class _Trie:
    def __init__(self, vocab: Vocabulary):
        self.children: list[dict] = [{}]
        self.tokens: list[list[int]] = [[]]
        for tid, text in enumerate(vocab.tokens):
            if not text:
                continue
            node = 0
            for ch in text:
                nxt = self.children[node].get(ch)
                if nxt is None:
                    nxt = len(self.children)
                    self.children.append({})
                    self.tokens.append([])
                    self.children[node][ch] = nxt
                node = nxt
            self.tokens[node].append(tid)


class SubterminalTree:
    """Flat prefix tree; node 0 is the root (no edge)."""

    def __init__(self, key: TreeKey):
        self.key = key
        self.term: list[int] = [-1]
        self.kind: list[int] = [-1]
        self.endq: list[int] = [-1]
        self.parent: list[int] = [-1]
        self.depth: list[int] = [0]
        self.children: list[list[int]] = [[]]
        self.next_key: list[int] = [-1]
        self.tokens: list = [None]
        self._index: dict[tuple, int] = {}
        self._reverse: dict[int, list[int]] | None = None

    def __len__(self) -> int:
        return len(self.term)

    def child(self, node: int, edge: tuple, next_key: int) -> int:
        k = (node, edge)
        nid = self._index.get(k)
        if nid is None:
            nid = len(self.term)
            self._index[k] = nid
            t, kind, q = edge
            self.term.append(t)
            self.kind.append(kind)
            self.endq.append(q)
            self.parent.append(node)
            self.depth.append(self.depth[node] + 1)
            self.children.append([])
            self.next_key.append(next_key)
            self.tokens.append(None)
            self.children[node].append(nid)
        return nid

    def attach(self, node: int, tokens) -> None:
        arr = np.asarray(sorted(tokens), dtype=np.int32)
        if self.tokens[node] is not None:
            arr = np.union1d(self.tokens[node], arr).astype(np.int32)
        self.tokens[node] = arr
        self._reverse = None

    def nodes_for(self, token: int) -> list[int]:
        if self._reverse is None:
            rev: dict[int, list[int]] = {}
            for nid, toks in enumerate(self.tokens):
                if toks is not None:
                    for t in toks.tolist():
                        rev.setdefault(t, []).append(nid)
            self._reverse = rev
        return self._reverse.get(token, [])

    def path(self, node: int) -> list[int]:
        out = []
        while node > 0:
            out.append(node)
            node = self.parent[node]
        out.reverse()
        return out

    def edge(self, node: int) -> tuple:
        return self.term[node], self.kind[node], self.endq[node]

    def token_count(self) -> int:
        return sum(len(t) for t in self.tokens if t is not None)

    def sequences_for(self, token: int) -> list[tuple]:
        return [tuple(self.edge(n) for n in self.path(nid)) for nid in self.nodes_for(token)]


@dataclass
class CompiledArtifact:
    """Scanner + per-key trees for one (grammar, vocabulary) pair."""

    cfg: Cfg
    vocab: Vocabulary
    scanner: Scanner
    keys: list = field(default_factory=lambda: [BOUNDARY])
    trees: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    build_seconds: float = 0.0

    def __post_init__(self):
        self.key_index = {k: i for i, k in enumerate(self.keys)}
        self.traverser = Traverser(self.scanner, self.cfg)
        self._trie = None

    @property
    def grammar_fingerprint(self) -> bytes:
        return self.cfg.fingerprint()

    @property
    def vocab_fingerprint(self) -> bytes:
        return self.vocab.fingerprint

    def key_id(self, key: TreeKey) -> int:
        kid = self.key_index.get(key)
        if kid is None:
            if len(self.keys) >= self.budget:
                raise PrecomputeBudgetError(
                    f"more than {self.budget} scanner state sets; raise the budget or simplify the grammar")
            kid = len(self.keys)
            self.keys.append(key)
            self.key_index[key] = kid
        return kid

    def tree(self, kid: int) -> SubterminalTree:
        tree = self.trees.get(kid)
        if tree is None:
            tree = self._build(kid)
            self.trees[kid] = tree
        return tree

    def _build(self, kid: int) -> SubterminalTree:
        if self._trie is None:
            self._trie = _Trie(self.vocab)
        key = self.keys[kid]
        trav = self.traverser
        children, trie_tokens = self._trie.children, self._trie.tokens
        expand, finalize = trav.expand, trav.finalize
        groups: dict[tuple, list[int]] = {}
        stack = [(0, trav.initial(key))]
        while stack:
            node, states = stack.pop()
            toks = trie_tokens[node]
            if toks:
                seen = set()
                for s in states:
                    f = finalize(s)
                    if f is not None and f not in seen:
                        seen.add(f)
                        groups.setdefault(f, []).extend(toks)
            for ch, nxt_node in children[node].items():
                nxt = expand(states, ch)
                if nxt:
                    stack.append((nxt_node, nxt))
        tree = SubterminalTree(key)
        eos_node = tree.child(0, (trav.eos, FULL, -1), 0)
        tree.attach(eos_node, [self.vocab.eos_id])
        for (edges, end_key), toks in sorted(groups.items(), key=lambda g: (len(g[0][0]), g[0][0])):
            node = 0
            end_kid = self.key_id(end_key)
            for i, edge in enumerate(edges):
                last = i == len(edges) - 1
                node = tree.child(node, edge, end_kid if last else 0)
            tree.attach(node, toks)
        return tree

    def build_all(self) -> None:
        """Build trees for every key reachable through token-aligned traversals."""
        t0 = time.perf_counter()
        kid = 0
        while kid < len(self.keys):
            self.tree(kid)  # building registers the end keys it reaches
            kid += 1
        self.build_seconds += time.perf_counter() - t0
        log.info("built %d trees in %.2fs", len(self.trees), self.build_seconds)

    def stats(self) -> dict:
        return {
            "trees": len(self.trees),
            "keys": len(self.keys),
            "nodes": sum(len(t) for t in self.trees.values()),
            "attachments": sum(t.token_count() for t in self.trees.values()),
        }


def build_trees(scanner: Scanner, vocab: Vocabulary, cfg: Cfg, budget: int = DEFAULT_BUDGET,
                eager: bool = True) -> CompiledArtifact:
    art = CompiledArtifact(cfg, vocab, scanner, budget=budget)
    if eager:
        art.build_all()
    return art


def compile_artifact(cfg: Cfg, vocab: Vocabulary, budget: int = DEFAULT_BUDGET, eager: bool = True) -> CompiledArtifact:
    return build_trees(build_scanner(cfg), vocab, cfg, budget=budget, eager=eager)
