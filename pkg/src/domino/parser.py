"""Incremental Earley recognizer over terminal streams.

States are persistent: advancing never mutates the source state, so
lookahead probes need no explicit checkpoint/restore.  Each state caches
its successors, which makes repeated probes of the same terminal free.

Nullable nonterminals use the Aycock-Horspool rule: predicting a nullable
symbol also advances the predicting item past it, so completions never
need to revisit the current column.
"""

from __future__ import annotations

import hashlib
import weakref

from .grammar import Cfg, Terminal, productive_nonterminals, reachable_nonterminals

__all__ = [
    "EarleyGrammar",
    "ParserState",
    "fingerprint",
    "parser_accepts_eos",
    "parser_advance",
    "parser_allows",
    "parser_for",
    "parser_init",
]


class EarleyGrammar:
    """Integer-coded grammar tables shared by all parser states.

    Symbols ``0..T-1`` are terminals, ``T`` is EOS and ``T+1+n`` is
    nonterminal ``n``.  The augmented start rule is production 0.
    """

    def __init__(self, cfg: Cfg):
        self.cfg = cfg
        nt = len(cfg.terminals)
        self.num_terminals = nt
        self.eos = nt
        base = nt + 1
        productive = productive_nonterminals(cfg)
        prods = [p for p in cfg.productions
                 if p.lhs in productive
                 and all(isinstance(s, Terminal) or s.id in productive for s in p.rhs)]
        # keep productions reachable from the start through productive rules
        reach = reachable_nonterminals(Cfg(cfg.nonterminals, tuple(prods), cfg.terminals))
        prods = [p for p in prods if p.lhs in reach]
        start_sym = base + cfg.start
        rules = [(-1, (start_sym,))] if cfg.start in productive else [(-1, ())]
        self.dead_grammar = cfg.start not in productive
        for p in prods:
            rules.append((base + p.lhs, tuple(s.id if isinstance(s, Terminal) else base + s.id for s in p.rhs)))
        self.rules = rules
        # dotted rules: one id per (rule, dot)
        next_sym, lhs, rule_of, starts = [], [], [], []
        for r, (a, rhs) in enumerate(rules):
            starts.append(len(next_sym))
            for dot in range(len(rhs) + 1):
                next_sym.append(rhs[dot] if dot < len(rhs) else -1)
                lhs.append(a)
                rule_of.append(r)
        self.next_sym = next_sym
        self.lhs = lhs
        self.rule_of = rule_of
        self.num_dotted = len(next_sym)
        self.accept_dotted = starts[0] + len(rules[0][1])
        by_lhs: dict[int, list[int]] = {}
        for r, (a, _) in enumerate(rules):
            if r:
                by_lhs.setdefault(a, []).append(starts[r])
        self.predict = by_lhs
        nullable: set[int] = set()
        changed = True
        while changed:
            changed = False
            for a, rhs in rules[1:]:
                if a not in nullable and all(s in nullable for s in rhs):
                    nullable.add(a)
                    changed = True
        self.nullable = nullable
        self._min_len = None
        self._initial = None

    def is_terminal(self, sym: int) -> bool:
        return 0 <= sym < self.num_terminals

    # --- columns -----------------------------------------------------------

    def close(self, seeds, j: int, columns) -> Column:
        nd = self.num_dotted
        next_sym, lhs, predict, nullable = self.next_sym, self.lhs, self.predict, self.nullable
        items: set[int] = set()
        by_next: dict[int, list[int]] = {}
        predicted: set[int] = set()
        agenda = list(seeds)
        base_j = j * nd
        while agenda:
            it = agenda.pop()
            if it in items:
                continue
            items.add(it)
            o, d = divmod(it, nd)
            s = next_sym[d]
            if s < 0:
                if o == j:
                    continue  # ε-completion, already handled at prediction
                a = lhs[d]
                for w in columns[o].by_next.get(a, ()):
                    agenda.append(w + 1)
                continue
            lst = by_next.get(s)
            if lst is None:
                by_next[s] = [it]
            else:
                lst.append(it)
            if s > self.eos:
                if s not in predicted:
                    predicted.add(s)
                    for ds in predict.get(s, ()):
                        agenda.append(base_j + ds)
                if s in nullable:
                    agenda.append(it + 1)
        return Column(items, by_next)

    def initial(self) -> ParserState:
        if self._initial is None:
            col = self.close([0], 0, ())
            self._initial = ParserState(self, (col,), 0)
        return self._initial

    # --- completion-length estimates ---------------------------------------

    def min_lengths(self, terminal_len) -> dict[int, int]:
        """Minimum yield length (chars) per symbol, given per-terminal minima."""
        if self._min_len is None:
            inf = float("inf")
            m: dict[int, float] = {t: terminal_len[t] for t in range(self.num_terminals)}
            for a, _ in self.rules[1:]:
                m.setdefault(a, inf)
            changed = True
            while changed:
                changed = False
                for a, rhs in self.rules[1:]:
                    v = sum(m.get(s, inf) for s in rhs)
                    if v < m[a]:
                        m[a] = v
                        changed = True
            self._min_len = m
        return self._min_len


class Column:
    __slots__ = ("items", "by_next", "_fp")

    def __init__(self, items: set[int], by_next: dict[int, list[int]]):
        self.items = items
        self.by_next = by_next
        self._fp = None


class ParserState:
    """Parser checkpoint: the Earley chart for the terminals consumed so far."""

    __slots__ = ("grammar", "columns", "history", "_next", "__weakref__")

    def __init__(self, grammar: EarleyGrammar, columns: tuple, history: int):
        self.grammar = grammar
        self.columns = columns
        self.history = history
        self._next: dict[int, ParserState] = {}

    @property
    def consumed(self) -> int:
        return len(self.columns) - 1

    @property
    def dead(self) -> bool:
        return not self.columns[-1].items

    def allows(self, terminal: int) -> bool:
        if terminal == self.grammar.eos:
            return self.accepts_eos()
        return terminal in self.columns[-1].by_next

    def allowed_terminals(self) -> set[int]:
        g = self.grammar
        out = {s for s in self.columns[-1].by_next if g.is_terminal(s)}
        if self.accepts_eos():
            out.add(g.eos)
        return out

    def accepts_eos(self) -> bool:
        return self.grammar.accept_dotted in self.columns[-1].items

    def advance(self, terminal: int) -> ParserState:
        nxt = self._next.get(terminal)
        if nxt is None:
            g = self.grammar
            last = self.columns[-1]
            waiting = last.by_next.get(terminal, ()) if g.is_terminal(terminal) else ()
            j = len(self.columns)
            if waiting:
                col = g.close([w + 1 for w in waiting], j, self.columns)
            else:
                col = Column(set(), {})
            nxt = ParserState(g, self.columns + (col,), hash((self.history, terminal)))
            self._next[terminal] = nxt
        return nxt

    def advance_all(self, terminals) -> ParserState:
        st = self
        for t in terminals:
            st = st.advance(t)
            if st.dead:
                break
        return st

    def fingerprint(self) -> int:
        col = self.columns[-1]
        if col._fp is None:
            nd = self.grammar.num_dotted
            dotted = sorted({it % nd for it in col.items})
            h = hashlib.blake2b(digest_size=8)
            for d in dotted:
                h.update(d.to_bytes(4, "little"))
            col._fp = int.from_bytes(h.digest(), "little")
        return col._fp

    def completion_cost(self, terminal_len) -> float:
        """Minimum number of characters needed to reach a complete word."""
        g = self.grammar
        mins = g.min_lengths(terminal_len)
        nd = g.num_dotted
        inf = float("inf")
        memo: dict[tuple[int, int], float] = {}

        def rest(d: int) -> float:
            total = 0.0
            while g.next_sym[d] >= 0:
                total += mins.get(g.next_sym[d], inf)
                d += 1
            return total

        def finish(j: int, a: int) -> float:
            # cost to finish everything after `a` is completed from column j
            key = (j, a)
            if key in memo:
                return memo[key]
            memo[key] = inf  # cycle guard
            best = inf
            for w in self.columns[j].by_next.get(a, ()):
                o, d = divmod(w, nd)
                best = min(best, item_cost(o, d + 1))
            memo[key] = best
            return best

        def item_cost(o: int, d: int) -> float:
            r = rest(d)
            if r == inf:
                return inf
            a = g.lhs[d]
            if a == -1:
                return r
            return r + finish(o, a)

        best = inf
        for it in self.columns[-1].items:
            o, d = divmod(it, nd)
            best = min(best, item_cost(o, d))
        return best


_CACHE: "weakref.WeakKeyDictionary[Cfg, EarleyGrammar]" = weakref.WeakKeyDictionary()


def parser_for(cfg: Cfg) -> EarleyGrammar:
    g = _CACHE.get(cfg)
    if g is None:
        g = EarleyGrammar(cfg)
        _CACHE[cfg] = g
    return g


def parser_init(cfg: Cfg) -> ParserState:
    return parser_for(cfg).initial()


def parser_advance(state: ParserState, terminal: int) -> ParserState:
    return state.advance(terminal)


def parser_allows(state: ParserState, terminal: int) -> bool:
    return state.allows(terminal)


def parser_accepts_eos(state: ParserState) -> bool:
    return state.accepts_eos()


def fingerprint(state: ParserState) -> int:
    return state.fingerprint()
