"""Brute-force reference answers for membership, viable prefixes and masks.

Independent of the scanner, trees and Earley parser: terminals are matched
with the third-party ``regex`` engine (its partial matching answers "is
this a prefix of some terminal string"), and the grammar is decided by CYK
over the character lattice.

CYK works on a binarized, ε-free grammar with unit closure.  Viable
prefixes use a derived *prefix grammar*: for every production
``A -> X1..Xm`` there are rules ``A' -> X1..X(i-1) Xi'`` where a primed
symbol derives the non-empty prefixes of its unprimed yields.
"""

from __future__ import annotations

from dataclasses import dataclass

import regex as re_engine

from .. import regex as rx
from ..grammar import Cfg, Terminal, productive_nonterminals, reachable_nonterminals
from ..vocab import Vocabulary

__all__ = [
    "BoundExceeded",
    "Oracle",
    "oracle_for",
    "oracle_mask",
    "oracle_member",
    "oracle_viable_prefix",
    "python_pattern",
]

DEFAULT_BOUND = 64


class BoundExceeded(ValueError):
    pass


def _esc(cp: int) -> str:
    return f"\\U{cp:08x}"


def python_pattern(node) -> str:
    """Translate a terminal pattern AST into ``regex``-module syntax."""
    if isinstance(node, rx.Chars):
        parts = []
        for lo, hi in node.chars.ranges:
            parts.append(_esc(lo) if lo == hi else f"{_esc(lo)}-{_esc(hi)}")
        return "[" + "".join(parts) + "]" if parts else "(?!)"
    if isinstance(node, rx.Concat):
        return "".join(python_pattern(i) for i in node.items)
    if isinstance(node, rx.Alt):
        return "(?:" + "|".join(python_pattern(i) for i in node.items) + ")"
    if isinstance(node, rx.Repeat):
        inner = "(?:" + python_pattern(node.item) + ")"
        if node.max is None:
            return inner + ("{%d,}" % node.min)
        return inner + ("{%d,%d}" % (node.min, node.max))
    if isinstance(node, rx.Empty):
        return "(?:)"
    raise TypeError(node)


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass
class _Rules:
    # binary rules keyed by the left child: left -> {right: result mask}
    binary: dict
    # unit closure: symbol -> mask of symbols deriving it (itself included)
    up: list


class Oracle:
    """CYK decision procedures for one grammar."""

    def __init__(self, cfg: Cfg):
        self.cfg = cfg
        self.patterns = [re_engine.compile(python_pattern(t.ast()), re_engine.DOTALL) for t in cfg.terminals]
        self._build(cfg)
        self._combine_memo: dict = {}
        self._pcombine_memo: dict = {}

    # --- grammar normalization -----------------------------------------------

    def _build(self, cfg: Cfg) -> None:
        productive = productive_nonterminals(cfg)
        prods = [p for p in cfg.productions
                 if p.lhs in productive and all(isinstance(s, Terminal) or s.id in productive for s in p.rhs)]
        reach = reachable_nonterminals(Cfg(cfg.nonterminals, tuple(prods), cfg.terminals))
        prods = [p for p in prods if p.lhs in reach]
        self.empty_language = cfg.start not in productive

        nt = len(cfg.terminals)
        # full symbols: terminals 0..T-1, nonterminals T.., then binarization helpers
        fsyms = [("t", i) for i in range(nt)] + [("n", i) for i in range(len(cfg.nonterminals))]
        findex = {s: i for i, s in enumerate(fsyms)}
        # prefix symbols mirror the full ones, plus their own helpers
        psyms = list(fsyms)
        pindex = dict(findex)

        def fsym(s):
            return findex[("t", s.id)] if isinstance(s, Terminal) else findex[("n", s.id)]

        nullable: set[int] = set()
        changed = True
        while changed:
            changed = False
            for p in prods:
                a = findex[("n", p.lhs)]
                if a not in nullable and all(fsym(s) in nullable for s in p.rhs):
                    nullable.add(a)
                    changed = True
        self.start_nullable = findex[("n", cfg.start)] in nullable

        fbin: list[tuple[int, int, int]] = []  # (A, B, C)
        funit: list[tuple[int, int]] = []  # (A, B)

        def new_full(tag) -> int:
            fsyms.append(tag)
            return len(fsyms) - 1

        def new_pre(tag) -> int:
            psyms.append(tag)
            return len(psyms) - 1

        def add_full_rule(a: int, rhs: list[int], tag) -> None:
            # binarize, then drop nullable children (rules stay ε-free)
            while len(rhs) > 2:
                helper = new_full((tag, len(fsyms)))
                if all(x in nullable for x in rhs[1:]):
                    nullable.add(helper)
                fbin.append((a, rhs[0], helper))
                if rhs[0] in nullable:
                    funit.append((a, helper))
                if helper in nullable:
                    funit.append((a, rhs[0]))
                a, rhs = helper, rhs[1:]
            if len(rhs) == 2:
                b, c = rhs
                fbin.append((a, b, c))
                if c in nullable:
                    funit.append((a, b))
                if b in nullable:
                    funit.append((a, c))
            elif len(rhs) == 1:
                funit.append((a, rhs[0]))

        pbin: list[tuple[int, int, int]] = []  # (A', B full, C')
        punit: list[tuple[int, int]] = []  # (A', B')

        def add_pre_rule(a: int, fulls: list[int], last_pre: int, tag) -> None:
            # a' -> f1 .. fk last'  (the f's are full symbols, maybe nullable)
            if not fulls:
                punit.append((a, last_pre))
                return
            cur = a
            for n, f in enumerate(fulls):
                nxt = last_pre if n == len(fulls) - 1 else new_pre((tag, len(psyms)))
                pbin.append((cur, f, nxt))
                if f in nullable:
                    punit.append((cur, nxt))
                cur = nxt

        for idx, p in enumerate(prods):
            a = findex[("n", p.lhs)]
            rhs = [fsym(s) for s in p.rhs]
            if rhs:
                add_full_rule(a, rhs, ("bin", idx))
            for i in range(len(rhs)):
                add_pre_rule(a, rhs[:i], rhs[i], ("pre", idx, i))

        self.num_full = len(fsyms)
        self.num_pre = len(psyms)
        self.start_full = findex[("n", cfg.start)]
        self.start_pre = pindex[("n", cfg.start)]
        self.full_rules = self._rules(fbin, funit, self.num_full)
        self.pre_rules = self._rules(pbin, punit, self.num_pre)
        self.num_terminals = nt

    @staticmethod
    def _rules(binary, unit, n) -> _Rules:
        # unit closure: up[b] = every a with a =>* b through unit rules
        parents: dict[int, set[int]] = {}
        for a, b in unit:
            parents.setdefault(b, set()).add(a)
        up = []
        for b in range(n):
            seen = {b}
            stack = [b]
            while stack:
                x = stack.pop()
                for a in parents.get(x, ()):
                    if a not in seen:
                        seen.add(a)
                        stack.append(a)
            m = 0
            for a in seen:
                m |= 1 << a
            up.append(m)
        table: dict[int, dict[int, int]] = {}
        for a, b, c in binary:
            row = table.setdefault(b, {})
            row[c] = row.get(c, 0) | up[a]
        return _Rules(table, up)

    def _close(self, mask: int, rules: _Rules) -> int:
        out = 0
        for b in _bits(mask):
            out |= rules.up[b]
        return out

    def _combine(self, left: int, right: int, rules: _Rules, memo: dict) -> int:
        key = (left, right)
        res = memo.get(key)
        if res is None:
            res = 0
            table = rules.binary
            right_bits = list(_bits(right))
            for b in _bits(left):
                row = table.get(b)
                if row:
                    for c in right_bits:
                        m = row.get(c)
                        if m:
                            res |= m
            res = self._close(res, rules) if res else 0
            memo[key] = res
        return res

    # --- incremental chart over a growing text ----------------------------------

    def new_chart(self) -> _Chart:
        return _Chart(self)

    def member(self, text: str, bound: int = DEFAULT_BOUND) -> bool:
        self._check_bound(text, bound)
        fp = self.cfg.forced_prefix
        if not text.startswith(fp):
            return False
        return self._member_raw(text)

    def _member_raw(self, text: str) -> bool:
        if self.empty_language:
            return False
        if not text:
            return self.start_nullable
        chart = self.new_chart()
        for ch in text:
            chart.push(ch)
        return chart.member()

    def viable(self, text: str, bound: int = DEFAULT_BOUND) -> bool:
        self._check_bound(text, bound)
        fp = self.cfg.forced_prefix
        if len(text) <= len(fp):
            if not fp.startswith(text):
                return False
            text = fp
        elif not text.startswith(fp):
            return False
        if self.empty_language:
            return False
        if not text:
            return True
        chart = self.new_chart()
        for ch in text:
            chart.push(ch)
        return chart.viable()

    def mask(self, vocab: Vocabulary, prefix: str, bound: int = DEFAULT_BOUND) -> tuple[set, bool]:
        """Legal token ids after ``prefix`` and whether EOS is legal."""
        longest = max((len(t) for t in vocab.tokens if t), default=0)
        self._check_bound(prefix, bound - longest)
        fp = self.cfg.forced_prefix
        eos = self.member(prefix, bound)
        allowed: set[int] = set()
        if fp and len(prefix) < len(fp):
            # slow path: the forced text still constrains every candidate
            for tid, t in enumerate(vocab.tokens):
                if t and self.viable(prefix + t, bound + longest):
                    allowed.add(tid)
            return allowed, eos
        if self.empty_language:
            return allowed, eos
        chart = self.new_chart()
        for ch in prefix:
            chart.push(ch)
        if prefix and not chart.viable():
            return allowed, eos
        return self.mask_from_chart(chart, vocab), eos

    def mask_from_chart(self, chart: _Chart, vocab: Vocabulary) -> set:
        """Token ids whose text extends the chart's text to a viable prefix.

        Depth-first over the vocabulary trie, sharing chart columns; a
        non-viable text has no viable extension, so its subtree is skipped.
        """
        allowed: set[int] = set()
        children, tokens = _vocab_trie(vocab)
        base = len(chart.text)
        stack = [iter(children[0].items())]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                if len(chart.text) > base:
                    chart.pop()
                continue
            ch, child = nxt
            chart.push(ch)
            if chart.viable():
                allowed.update(tokens[child])
                stack.append(iter(children[child].items()))
            else:
                chart.pop()
        return allowed

    def member_terminals(self, terminals) -> bool:
        """Membership of a terminal-id sequence (lexing already fixed)."""
        if self.empty_language:
            return False
        if not terminals:
            return self.start_nullable
        chart = self.new_chart()
        for t in terminals:
            chart.push_terminal(t)
        return chart.member()

    def viable_terminals(self, terminals) -> bool:
        """Whether a terminal-id sequence extends to a member sequence."""
        if self.empty_language:
            return False
        if not terminals:
            return True
        chart = self.new_chart()
        for t in terminals:
            chart.push_terminal(t)
        return chart.viable()

    def _check_bound(self, text: str, bound: int) -> None:
        if len(text) > bound:
            raise BoundExceeded(f"text of length {len(text)} exceeds the oracle bound {bound}")


class _Chart:
    """CYK chart extended one character at a time (and popped for backtracking).

    ``cols[j]`` maps start ``i`` to the mask of full symbols deriving
    ``text[i:j]``; ``pres[j]`` does the same for prefix symbols.
    ``active[j]`` lists ``(start, terminal)`` pairs whose text is still a
    prefix of some terminal string.
    """

    def __init__(self, oracle: Oracle):
        self.o = oracle
        self.text: list[str] = []
        self.cols: list[dict[int, int]] = [{}]
        self.pres: list[dict[int, int]] = [{}]
        self.active: list[list[tuple[int, int]]] = [[]]

    def push(self, ch: str) -> None:
        o = self.o
        self.text.append(ch)
        j = len(self.text)
        s = "".join(self.text)
        leaf_full: dict[int, int] = {}
        leaf_pre: dict[int, int] = {}
        active = []
        cands = list(self.active[-1]) + [(j - 1, t) for t in range(o.num_terminals)]
        for i, t in cands:
            m = o.patterns[t].fullmatch(s, pos=i, partial=True)
            if m is None:
                continue
            active.append((i, t))
            leaf_pre[i] = leaf_pre.get(i, 0) | (1 << t)
            if not m.partial:
                leaf_full[i] = leaf_full.get(i, 0) | (1 << t)
        self._extend(leaf_full, leaf_pre)
        self.active.append(active)

    def push_terminal(self, terminal: int) -> None:
        """Extend by one whole terminal (for terminal-sequence recognition)."""
        self.text.append("\0")
        j = len(self.text)
        self._extend({j - 1: 1 << terminal}, {j - 1: 1 << terminal})
        self.active.append([])

    def _extend(self, leaf_full: dict, leaf_pre: dict) -> None:
        o = self.o
        j = len(self.text)
        fr, pr = o.full_rules, o.pre_rules
        col: dict[int, int] = {}
        pre: dict[int, int] = {}
        cols = self.cols
        for i in range(j - 1, -1, -1):
            m = leaf_full.get(i, 0)
            if m:
                m = o._close(m, fr)
            pm = leaf_pre.get(i, 0)
            if pm:
                pm = o._close(pm, pr)
            for k, right in col.items():
                left = cols[k].get(i)
                if left:
                    m |= o._combine(left, right, fr, o._combine_memo)
            for k, right in pre.items():
                left = cols[k].get(i)
                if left:
                    pm |= o._combine(left, right, pr, o._pcombine_memo)
            if m:
                col[i] = m
            if pm:
                pre[i] = pm
        self.cols.append(col)
        self.pres.append(pre)

    def fork(self) -> _Chart:
        """Independent copy; columns are never mutated, so sharing them is safe."""
        other = object.__new__(_Chart)
        other.o = self.o
        other.text = list(self.text)
        other.cols = list(self.cols)
        other.pres = list(self.pres)
        other.active = list(self.active)
        return other

    def pop(self) -> None:
        self.text.pop()
        self.cols.pop()
        self.pres.pop()
        self.active.pop()

    def member(self) -> bool:
        return bool(self.cols[-1].get(0, 0) >> self.o.start_full & 1)

    def viable(self) -> bool:
        return bool(self.pres[-1].get(0, 0) >> self.o.start_pre & 1)

    def alive(self) -> bool:
        return bool(self.pres[-1].get(0, 0))


_TRIES: dict = {}


def _vocab_trie(vocab: Vocabulary):
    key = vocab.fingerprint
    trie = _TRIES.get(key)
    if trie is None:
        children: list[dict] = [{}]
        tokens: list[list[int]] = [[]]
        for tid, text in enumerate(vocab.tokens):
            if not text:
                continue
            node = 0
            for ch in text:
                nxt = children[node].get(ch)
                if nxt is None:
                    nxt = len(children)
                    children.append({})
                    tokens.append([])
                    children[node][ch] = nxt
                node = nxt
            tokens[node].append(tid)
        trie = (children, tokens)
        _TRIES[key] = trie
    return trie


_ORACLES: dict = {}


def oracle_for(cfg: Cfg) -> Oracle:
    key = (cfg.fingerprint(), cfg.forced_prefix)
    o = _ORACLES.get(key)
    if o is None:
        o = Oracle(cfg)
        _ORACLES[key] = o
    return o


def oracle_member(cfg: Cfg, text: str, bound: int = DEFAULT_BOUND) -> bool:
    return oracle_for(cfg).member(text, bound)


def oracle_viable_prefix(cfg: Cfg, text: str, bound: int = DEFAULT_BOUND) -> bool:
    return oracle_for(cfg).viable(text, bound)


def oracle_mask(cfg: Cfg, vocab: Vocabulary, prefix: str, bound: int = DEFAULT_BOUND) -> tuple[set, bool]:
    return oracle_for(cfg).mask(vocab, prefix, bound)
