"""Thompson NFAs for terminals and the union character scanner.

The scanner links every terminal fragment between a shared start state
``q0`` and a shared accept state ``qa`` and loops ``qa -> q0`` so it
accepts any concatenation of terminal strings.  End of input is a virtual
terminal with no character transitions.

Besides the NFA-level API (:func:`scan_step`), each terminal gets a lazily
determinized view (:class:`TerminalDfa`) that the tree builder and the
online engine use for fast, memoized stepping inside one terminal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import regex as rx
from .grammar import Cfg

__all__ = [
    "Nfa",
    "NfaState",
    "Scanner",
    "TerminalDfa",
    "build_scanner",
    "compile_regex",
    "scan_step",
    "scan_string",
]


@dataclass
class NfaState:
    transitions: list = field(default_factory=list)  # [(CharSet, target)]
    eps: list = field(default_factory=list)
    terminal: int | None = None
    accepting_for: int | None = None


@dataclass
class Nfa:
    states: list
    start: int
    accept: int

    def add(self, terminal: int | None = None) -> int:
        self.states.append(NfaState(terminal=terminal))
        return len(self.states) - 1

    def closure(self, states, follow_exit: bool = True) -> frozenset:
        """ε-closure; with ``follow_exit=False`` the edges into ``accept`` are ignored."""
        seen = set(states)
        stack = list(states)
        while stack:
            s = stack.pop()
            for t in self.states[s].eps:
                if not follow_exit and t == self.accept:
                    continue
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return frozenset(seen)

    def step(self, states, ch: str) -> set:
        out = set()
        for s in states:
            for cs, tgt in self.states[s].transitions:
                if ch in cs:
                    out.add(tgt)
        return out

    def accepts(self, text: str) -> bool:
        cur = self.closure({self.start})
        for ch in text:
            cur = self.closure(self.step(cur, ch))
            if not cur:
                return False
        return self.accept in cur


def _fragment(nfa: Nfa, node, tag: int | None) -> tuple[int, int]:
    if isinstance(node, rx.Chars):
        s, e = nfa.add(tag), nfa.add(tag)
        nfa.states[s].transitions.append((node.chars, e))
        return s, e
    if isinstance(node, rx.Empty):
        s, e = nfa.add(tag), nfa.add(tag)
        nfa.states[s].eps.append(e)
        return s, e
    if isinstance(node, rx.Concat):
        s, e = _fragment(nfa, node.items[0], tag)
        for item in node.items[1:]:
            s2, e2 = _fragment(nfa, item, tag)
            nfa.states[e].eps.append(s2)
            e = e2
        return s, e
    if isinstance(node, rx.Alt):
        s, e = nfa.add(tag), nfa.add(tag)
        for item in node.items:
            s2, e2 = _fragment(nfa, item, tag)
            nfa.states[s].eps.append(s2)
            nfa.states[e2].eps.append(e)
        return s, e
    if isinstance(node, rx.Repeat):
        s = e = nfa.add(tag)
        for _ in range(node.min):
            s2, e2 = _fragment(nfa, node.item, tag)
            nfa.states[e].eps.append(s2)
            e = e2
        if node.max is None:
            s2, e2 = _fragment(nfa, node.item, tag)
            nfa.states[e].eps.append(s2)
            nfa.states[e2].eps.append(s2)
            out = nfa.add(tag)
            nfa.states[e].eps.append(out)
            nfa.states[e2].eps.append(out)
            return s, out
        out = nfa.add(tag)
        for _ in range(node.max - node.min):
            nfa.states[e].eps.append(out)
            s2, e2 = _fragment(nfa, node.item, tag)
            nfa.states[e].eps.append(s2)
            e = e2
        nfa.states[e].eps.append(out)
        return s, out
    raise TypeError(f"not a regex node: {node!r}")


def compile_regex(pattern, terminal: int | None = None) -> Nfa:
    """Standalone NFA for one pattern (AST or pattern string)."""
    if isinstance(pattern, str):
        pattern = rx.parse_regex(pattern)
    nfa = Nfa([], 0, 0)
    s, e = _fragment(nfa, pattern, terminal)
    nfa.start, nfa.accept = s, e
    if terminal is not None:
        nfa.states[e].accepting_for = terminal
    return nfa


class TerminalDfa:
    """Lazy subset construction restricted to one terminal's fragment.

    DFA state ids are dense ints; ``-1`` is the dead state.  State sets are
    ε-closed without leaving through the scanner accept state.
    """

    def __init__(self, scanner: Scanner, terminal: int):
        self.scanner = scanner
        self.terminal = terminal
        self.sets: list[frozenset] = []
        self.index: dict[frozenset, int] = {}
        self.accepting: list[bool] = []
        self.has_out: list[bool] = []
        self.memo: dict[tuple[int, str], int] = {}
        self.start = self.intern(scanner.nfa.closure({scanner.fragment_start[terminal]}, follow_exit=False))

    def intern(self, states: frozenset) -> int:
        qid = self.index.get(states)
        if qid is None:
            qid = len(self.sets)
            self.index[states] = qid
            self.sets.append(states)
            st = self.scanner.nfa.states
            self.accepting.append(any(st[s].accepting_for == self.terminal for s in states))
            self.has_out.append(any(not cs.is_empty() for s in states for cs, _ in st[s].transitions))
        return qid

    def step(self, qid: int, ch: str) -> int:
        key = (qid, ch)
        nxt = self.memo.get(key)
        if nxt is None:
            nfa = self.scanner.nfa
            moved = nfa.step(self.sets[qid], ch)
            nxt = self.intern(nfa.closure(moved, follow_exit=False)) if moved else -1
            self.memo[key] = nxt
        return nxt

    def walk(self, qid: int, text: str) -> int:
        for ch in text:
            qid = self.step(qid, ch)
            if qid < 0:
                return -1
        return qid


@dataclass
class Scanner:
    """Union NFA over all terminals plus the virtual EOS terminal."""

    nfa: Nfa
    num_terminals: int
    fragment_start: list
    fragment_accept: list
    names: list
    eos_state: int
    dfas: list = field(default_factory=list, repr=False)

    @property
    def start(self) -> int:
        return self.nfa.start

    @property
    def accept(self) -> int:
        return self.nfa.accept

    @property
    def eos_terminal(self) -> int:
        return self.num_terminals

    def initial(self) -> frozenset:
        return self.nfa.closure({self.nfa.start})

    def dfa(self, terminal: int) -> TerminalDfa:
        if not self.dfas:
            self.dfas.extend(TerminalDfa(self, t) for t in range(self.num_terminals))
        return self.dfas[terminal]

    def accepts_eos(self, states) -> bool:
        """End of input is acceptable iff the scanner sits at a terminal boundary."""
        return self.nfa.start in states

    def accepting_terminals(self, states) -> set[int]:
        st = self.nfa.states
        return {st[s].accepting_for for s in states if st[s].accepting_for is not None}


def build_scanner(cfg: Cfg) -> Scanner:
    nfa = Nfa([], 0, 0)
    q0, qa = nfa.add(), nfa.add()
    nfa.start, nfa.accept = q0, qa
    starts, accepts = [], []
    for t in cfg.terminals:
        s, e = _fragment(nfa, t.ast(), t.id)
        nfa.states[e].accepting_for = t.id
        nfa.states[q0].eps.append(s)
        nfa.states[e].eps.append(qa)
        starts.append(s)
        accepts.append(e)
    nfa.states[qa].eps.append(q0)
    # EOS: a lone tagged state with no character transitions
    eos = nfa.add(cfg.eos_terminal)
    nfa.states[eos].accepting_for = cfg.eos_terminal
    return Scanner(nfa, len(cfg.terminals), starts, accepts,
                   [t.name for t in cfg.terminals] + ["EOS"], eos)


def scan_step(scanner: Scanner, states, ch: str) -> frozenset:
    """Advance an ε-closed state set by one character (empty set = dead)."""
    moved = scanner.nfa.step(states, ch)
    if not moved:
        return frozenset()
    return scanner.nfa.closure(moved)


def scan_string(scanner: Scanner, text: str, states=None) -> frozenset:
    cur = scanner.initial() if states is None else states
    for ch in text:
        cur = scan_step(scanner, cur, ch)
        if not cur:
            break
    return cur
