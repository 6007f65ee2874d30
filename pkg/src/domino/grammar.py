"""Grammar loading: text dialect -> :class:`Cfg`.

The accepted dialect covers the GBNF/EBNF style (``name ::= body``), the
short ``name = body`` form and Lark-like ``name: body`` rules. Bodies may
use quoted literals, character classes, ``/regex/`` atoms, grouping,
alternation and the ``? * +`` quantifiers. ``#`` starts a comment and ``;``
may optionally terminate a rule.

Character-level structure becomes terminal regexes; everything that
references other rules stays in the context-free part:

* a rule whose whole body is character-level (and cannot match the empty
  string) is a named terminal,
* a maximal run of adjacent character-level items inside a rule body is
  merged into one anonymous terminal,
* runs that could match the empty string are split structurally so no
  terminal ever matches the empty string.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from . import regex as rx

__all__ = [
    "Cfg",
    "Diagnostic",
    "GrammarError",
    "Literal",
    "Nonterminal",
    "Production",
    "Regex",
    "Terminal",
    "TerminalDef",
    "format_cfg",
    "load_grammar",
    "parse_grammar",
    "terminal_adjacency",
    "validate_cfg",
]


class GrammarError(ValueError):
    """Grammar syntax or semantic error."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


# --- IR ----------------------------------------------------------------------


@dataclass(frozen=True)
class Terminal:
    id: int


@dataclass(frozen=True)
class Nonterminal:
    id: int


@dataclass(frozen=True)
class Literal:
    text: str

    def ast(self):
        return rx.literal(self.text)


@dataclass(frozen=True)
class Regex:
    node: object

    def ast(self):
        return self.node


@dataclass(frozen=True)
class TerminalDef:
    id: int
    pattern: Literal | Regex
    name: str

    def ast(self):
        return self.pattern.ast()

    def display(self) -> str:
        if isinstance(self.pattern, Literal):
            return self.pattern.text
        return self.name


@dataclass(frozen=True)
class Production:
    lhs: int
    rhs: tuple


@dataclass(frozen=True)
class Cfg:
    """Context-free grammar over regex/literal terminals.

    ``nonterminals[0]`` is the start symbol.  ``forced_prefix`` restricts the
    language to words beginning with that text (used by prompt healing).
    """

    nonterminals: tuple[str, ...]
    productions: tuple[Production, ...]
    terminals: tuple[TerminalDef, ...]
    forced_prefix: str = ""
    _fp: list = field(default_factory=list, compare=False, repr=False)

    @property
    def start(self) -> int:
        return 0

    @property
    def eos_terminal(self) -> int:
        """Id of the virtual end-of-input terminal."""
        return len(self.terminals)

    def terminal_name(self, tid: int) -> str:
        if tid == self.eos_terminal:
            return "EOS"
        return self.terminals[tid].display()

    def productions_for(self, nt: int) -> list[Production]:
        return [p for p in self.productions if p.lhs == nt]

    def nonterminal_id(self, name: str) -> int:
        return self.nonterminals.index(name)

    def terminal_id(self, name: str) -> int:
        for t in self.terminals:
            if t.name == name or t.display() == name:
                return t.id
        raise KeyError(name)

    def fingerprint(self) -> bytes:
        if not self._fp:
            text = format_cfg(self) + "\0" + self.forced_prefix
            self._fp.append(hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest())
        return self._fp[0]

    def with_forced_prefix(self, prefix: str) -> Cfg:
        return Cfg(self.nonterminals, self.productions, self.terminals, prefix)


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "warning" | "error"
    code: str
    message: str


# --- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<sep>::=|=|:)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<op>[|()?*+;{},])
  | (?P<string>")
  | (?P<klass>\[)
  | (?P<regex>/)
  | (?P<num>[0-9]+)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    value: object
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, line_start = 0, 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        col = i - line_start + 1
        if not m:
            raise GrammarError(f"unexpected character {text[i]!r}", line, col)
        kind = m.lastgroup
        if kind == "ws" or kind == "comment":
            i = m.end()
            continue
        if kind == "nl":
            i = m.end()
            line += 1
            line_start = i
            continue
        if kind == "string":
            j = i + 1
            out = []
            while True:
                if j >= len(text) or text[j] == "\n":
                    raise GrammarError("unterminated string literal", line, col)
                c = text[j]
                if c == '"':
                    j += 1
                    break
                if c == "\\":
                    try:
                        ch, j = rx.read_escape(text, j + 1)
                    except rx.RegexError as e:
                        raise GrammarError(str(e), line, col) from None
                    out.append(ch)
                else:
                    out.append(c)
                    j += 1
            toks.append(_Tok("string", "".join(out), line, col))
            i = j
            continue
        if kind == "klass":
            try:
                cs, j = rx.parse_class(text, i)
            except rx.RegexError as e:
                raise GrammarError(str(e), line, col) from None
            toks.append(_Tok("class", cs, line, col))
            i = j
            continue
        if kind == "regex":
            j = i + 1
            buf = []
            while True:
                if j >= len(text) or text[j] == "\n":
                    raise GrammarError("unterminated /regex/", line, col)
                if text[j] == "\\" and j + 1 < len(text) and text[j + 1] == "/":
                    buf.append("/")
                    j += 2
                    continue
                if text[j] == "\\" and j + 1 < len(text):
                    buf.append(text[j:j + 2])
                    j += 2
                    continue
                if text[j] == "/":
                    j += 1
                    break
                buf.append(text[j])
                j += 1
            if j < len(text) and text[j].isalpha():
                raise GrammarError("regex flags are not supported", line, col)
            try:
                node = rx.parse_regex("".join(buf))
            except rx.RegexError as e:
                raise GrammarError(str(e), line, col) from None
            toks.append(_Tok("regex", node, line, col))
            i = j
            continue
        toks.append(_Tok(kind, m.group(), line, col))
        i = m.end()
    toks.append(_Tok("eof", None, line, i - line_start + 1))
    return toks


# --- surface AST ---------------------------------------------------------------


@dataclass(frozen=True)
class _Lit:
    text: str


@dataclass(frozen=True)
class _Class:
    chars: rx.CharSet


@dataclass(frozen=True)
class _Opaque:
    """A ``/regex/`` atom: always one terminal, never split."""

    node: object


@dataclass(frozen=True)
class _Ref:
    name: str
    line: int
    col: int


@dataclass(frozen=True)
class _Alt:
    seqs: tuple  # tuple of tuples of items


@dataclass(frozen=True)
class _Rep:
    item: object
    min: int
    max: int | None


@dataclass
class _Rule:
    name: str
    body: _Alt
    line: int
    col: int


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise GrammarError(msg, tok.line, tok.col)

    def rules(self) -> list[_Rule]:
        out = []
        while self.peek().kind != "eof":
            if self.peek().kind == "op" and self.peek().value == ";":
                self.i += 1
                continue
            name = self.peek()
            if name.kind != "ident" or self.peek(1).kind != "sep":
                self.error("expected a rule definition `name ::= ...`")
            self.i += 2
            body = self.alternation(top=True)
            out.append(_Rule(name.value, body, name.line, name.col))
        if not out:
            raise GrammarError("grammar defines no rules")
        return out

    def at_rule_start(self) -> bool:
        return self.peek().kind == "ident" and self.peek(1).kind == "sep"

    def alternation(self, top: bool = False) -> _Alt:
        seqs = [self.sequence(top)]
        while self.peek().kind == "op" and self.peek().value == "|":
            self.i += 1
            seqs.append(self.sequence(top))
        return _Alt(tuple(seqs))

    def sequence(self, top: bool) -> tuple:
        items = []
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                break
            if tok.kind == "op" and tok.value in ("|", ")", ";"):
                break
            if top and self.at_rule_start():
                break
            if tok.kind == "sep":
                self.error(f"unexpected {tok.value!r}")
            items.append(self.postfix())
        return tuple(items)

    def postfix(self):
        item = self.atom()
        while True:
            tok = self.peek()
            if tok.kind != "op":
                return item
            if tok.value == "*":
                item = _Rep(item, 0, None)
            elif tok.value == "+":
                item = _Rep(item, 1, None)
            elif tok.value == "?":
                item = _Rep(item, 0, 1)
            elif tok.value == "{":
                item = self.bounded(item)
                continue
            else:
                return item
            self.i += 1

    def bounded(self, item):
        self.i += 1
        lo_tok = self.peek()
        if lo_tok.kind != "num":
            self.error("expected repetition count")
        lo = int(lo_tok.value)
        self.i += 1
        hi: int | None = lo
        if self.peek().kind == "op" and self.peek().value == ",":
            self.i += 1
            if self.peek().kind == "num":
                hi = int(self.peek().value)
                self.i += 1
            else:
                hi = None
        if not (self.peek().kind == "op" and self.peek().value == "}"):
            self.error("expected '}'")
        self.i += 1
        if hi is not None and hi < lo:
            self.error("bad repetition bounds")
        return _Rep(item, lo, hi)

    def atom(self):
        tok = self.peek()
        self.i += 1
        if tok.kind == "string":
            return _Lit(tok.value)
        if tok.kind == "class":
            return _Class(tok.value)
        if tok.kind == "regex":
            return _Opaque(tok.value)
        if tok.kind == "ident":
            return _Ref(tok.value, tok.line, tok.col)
        if tok.kind == "op" and tok.value == "(":
            body = self.alternation()
            if not (self.peek().kind == "op" and self.peek().value == ")"):
                self.error("expected ')'")
            self.i += 1
            return body
        self.i -= 1
        self.error(f"unexpected {tok.value!r}" if tok.value is not None else "unexpected end of grammar")


def _is_charlevel(node) -> bool:
    if isinstance(node, (_Lit, _Class, _Opaque)):
        return True
    if isinstance(node, _Ref):
        return False
    if isinstance(node, _Rep):
        return _is_charlevel(node.item)
    if isinstance(node, _Alt):
        return all(_is_charlevel(i) for seq in node.seqs for i in seq)
    raise TypeError(node)


def _to_regex(node):
    if isinstance(node, _Lit):
        return rx.literal(node.text)
    if isinstance(node, _Class):
        return rx.Chars(node.chars)
    if isinstance(node, _Opaque):
        return node.node
    if isinstance(node, _Rep):
        return rx.Repeat(_to_regex(node.item), node.min, node.max)
    if isinstance(node, _Alt):
        return rx.alt([rx.concat([_to_regex(i) for i in seq]) for seq in node.seqs])
    raise TypeError(node)


def _has_nullable_opaque(node) -> bool:
    if isinstance(node, _Opaque):
        return rx.nullable(node.node)
    if isinstance(node, _Rep):
        return _has_nullable_opaque(node.item)
    if isinstance(node, _Alt):
        return any(_has_nullable_opaque(i) for seq in node.seqs for i in seq)
    return False


class _Builder:
    def __init__(self, rules: list[_Rule]):
        self.rules = {}
        for r in rules:
            if r.name in self.rules:
                # repeated definitions add alternatives
                prev = self.rules[r.name]
                prev.body = _Alt(prev.body.seqs + r.body.seqs)
            else:
                self.rules[r.name] = r
        self.order = list(self.rules)
        self.nonterminals: list[str] = []
        self.nt_index: dict[str, int] = {}
        self.productions: list[Production] = []
        self.terminals: list[TerminalDef] = []
        self.term_index: dict[object, int] = {}
        self.lexical: dict[str, int] = {}
        self.counter = 0

    def terminal(self, node, name: str | None = None) -> int:
        if rx.nullable(node):
            raise GrammarError(f"terminal {name or rx.to_pattern(node)!r} matches the empty string")
        text = rx.literal_text(node)
        pattern = Literal(text) if text is not None else Regex(node)
        key = pattern.ast()
        if key in self.term_index:
            return self.term_index[key]
        tid = len(self.terminals)
        if name is None:
            name = text if text is not None else rx.to_pattern(node)
        self.terminals.append(TerminalDef(tid, pattern, name))
        self.term_index[key] = tid
        return tid

    def nonterminal(self, name: str) -> int:
        if name not in self.nt_index:
            self.nt_index[name] = len(self.nonterminals)
            self.nonterminals.append(name)
        return self.nt_index[name]

    def fresh(self, base: str, kind: str) -> int:
        while True:
            self.counter += 1
            name = f"{base}_{kind}{self.counter}"
            if name not in self.rules and name not in self.nt_index:
                return self.nonterminal(name)

    def build(self) -> Cfg:
        # classify rules first so references resolve to terminals or nonterminals
        for name in self.order:
            body = self.rules[name].body
            if _is_charlevel(body) and not rx.nullable(_to_regex(body)):
                self.lexical[name] = -1
        start = self.order[0]
        if start in self.lexical:
            # a purely lexical start rule still needs a production
            self.nonterminal(start)
        for name in self.order:
            if name not in self.lexical:
                self.nonterminal(name)
        for name in self.order:
            if name in self.lexical:
                r = self.rules[name]
                self.lexical[name] = self.terminal(_to_regex(r.body), name)
        if start in self.lexical:
            self.productions.append(Production(self.nt_index[start], (Terminal(self.lexical[start]),)))
        for name in self.order:
            if name in self.lexical:
                continue
            lhs = self.nt_index[name]
            for seq in self.rules[name].body.seqs:
                self.productions.append(Production(lhs, tuple(self.seq(seq, name))))
        return Cfg(tuple(self.nonterminals), tuple(self.productions), tuple(self.terminals))

    def seq(self, items, base: str) -> list:
        out: list = []
        run: list = []

        def flush():
            if run:
                out.extend(self.run(list(run), base))
                run.clear()

        for it in items:
            if _is_charlevel(it):
                run.append(it)
            else:
                flush()
                out.extend(self.structural(it, base))
        flush()
        return out

    def run(self, items: list, base: str) -> list:
        for it in items:
            if _has_nullable_opaque(it):
                raise GrammarError(f"/regex/ terminal in rule {base!r} matches the empty string")
        node = rx.concat([_to_regex(i) for i in items])
        if not rx.nullable(node):
            return [Terminal(self.terminal(node))]
        if len(items) > 1:
            out = []
            for it in items:
                out.extend(self.run([it], base))
            return out
        return self.structural(items[0], base)

    def structural(self, node, base: str) -> list:
        if isinstance(node, _Ref):
            if node.name in self.lexical:
                return [Terminal(self.lexical[node.name])]
            if node.name not in self.rules:
                raise GrammarError(f"undefined symbol {node.name!r}", node.line, node.col)
            return [Nonterminal(self.nt_index[node.name])]
        if isinstance(node, _Lit):
            return [] if not node.text else [Terminal(self.terminal(rx.literal(node.text)))]
        if isinstance(node, (_Class, _Opaque)):
            return [Terminal(self.terminal(_to_regex(node)))]
        if isinstance(node, _Alt):
            if len(node.seqs) == 1:
                return self.seq(node.seqs[0], base)
            nt = self.fresh(base, "grp")
            for seq in node.seqs:
                self.productions.append(Production(nt, tuple(self.seq(seq, base))))
            return [Nonterminal(nt)]
        if isinstance(node, _Rep):
            inner = self.seq((node.item,), base)
            lo, hi = node.min, node.max
            if (lo, hi) == (0, 1):
                nt = self.fresh(base, "opt")
                self.productions.append(Production(nt, ()))
                self.productions.append(Production(nt, tuple(inner)))
                return [Nonterminal(nt)]
            if hi is None:
                nt = self.fresh(base, "rep")
                me = Nonterminal(nt)
                if lo == 0:
                    self.productions.append(Production(nt, ()))
                else:
                    self.productions.append(Production(nt, tuple(inner) * lo))
                # left recursion keeps Earley item sets small
                self.productions.append(Production(nt, (me,) + tuple(inner)))
                return [me]
            nt = self.fresh(base, "rep")
            for count in range(lo, hi + 1):
                self.productions.append(Production(nt, tuple(inner) * count))
            return [Nonterminal(nt)]
        raise TypeError(node)


WS_PATTERN = "[ \\t\\n]+"


def _add_implicit_ws(cfg: Cfg) -> Cfg:
    ws_node = rx.parse_regex(WS_PATTERN)
    terminals = list(cfg.terminals)
    ws_id = None
    for t in terminals:
        if t.ast() == ws_node:
            ws_id = t.id
    if ws_id is None:
        ws_id = len(terminals)
        terminals.append(TerminalDef(ws_id, Regex(ws_node), "ws"))
    nonterminals = list(cfg.nonterminals)
    wrapper: dict[int, int] = {}
    extra: list[Production] = []

    def wrap(tid: int) -> Nonterminal:
        if tid not in wrapper:
            wrapper[tid] = len(nonterminals)
            base = terminals[tid].name
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", base):
                base = f"t{tid}"
            name = f"{base}_ws"
            while name in nonterminals:
                name += "_"
            nonterminals.append(name)
            extra.append(Production(wrapper[tid], (Terminal(tid),)))
            extra.append(Production(wrapper[tid], (Terminal(tid), Terminal(ws_id))))
        return Nonterminal(wrapper[tid])

    prods = []
    for p in cfg.productions:
        rhs = tuple(wrap(s.id) if isinstance(s, Terminal) and s.id != ws_id else s for s in p.rhs)
        prods.append(Production(p.lhs, rhs))
    return Cfg(tuple(nonterminals), tuple(prods + extra), tuple(terminals), cfg.forced_prefix)


def parse_grammar(text: str, implicit_ws: bool = False) -> Cfg:
    """Parse grammar source text into a validated :class:`Cfg`.

    With ``implicit_ws`` a ``ws`` terminal (``[ \\t\\n]+``) is allowed after
    every terminal.

    Raises:
        GrammarError: on syntax errors, undefined symbols, terminals that
            match the empty string, or an unproductive start symbol.
    """
    rules = _Parser(_tokenize(text)).rules()
    cfg = _Builder(rules).build()
    if implicit_ws:
        cfg = _add_implicit_ws(cfg)
    for d in validate_cfg(cfg):
        if d.level == "error":
            raise GrammarError(d.message)
    return cfg


def load_grammar(path, implicit_ws: bool = False) -> Cfg:
    with open(path, encoding="utf-8") as f:
        return parse_grammar(f.read(), implicit_ws=implicit_ws)


# --- analysis ----------------------------------------------------------------


def productive_nonterminals(cfg: Cfg) -> set[int]:
    productive: set[int] = set()
    changed = True
    while changed:
        changed = False
        for p in cfg.productions:
            if p.lhs in productive:
                continue
            if all(isinstance(s, Terminal) or s.id in productive for s in p.rhs):
                productive.add(p.lhs)
                changed = True
    return productive


def reachable_nonterminals(cfg: Cfg) -> set[int]:
    seen = {cfg.start}
    stack = [cfg.start]
    by_lhs: dict[int, list[Production]] = {}
    for p in cfg.productions:
        by_lhs.setdefault(p.lhs, []).append(p)
    while stack:
        nt = stack.pop()
        for p in by_lhs.get(nt, ()):
            for s in p.rhs:
                if isinstance(s, Nonterminal) and s.id not in seen:
                    seen.add(s.id)
                    stack.append(s.id)
    return seen


def terminal_adjacency(cfg: Cfg) -> tuple[set[int], set[int], dict[int, set[int]]]:
    """Which terminals can begin a word, end a word, and directly follow each terminal.

    Only productive, reachable rules are considered.  Returns
    ``(first, last, follow)``.
    """
    productive = productive_nonterminals(cfg)
    prods = [p for p in cfg.productions
             if p.lhs in productive and all(isinstance(s, Terminal) or s.id in productive for s in p.rhs)]
    reach = reachable_nonterminals(Cfg(cfg.nonterminals, tuple(prods), cfg.terminals))
    prods = [p for p in prods if p.lhs in reach]
    nullable: set[int] = set()
    first: dict[int, set[int]] = {nt: set() for nt in range(len(cfg.nonterminals))}
    last: dict[int, set[int]] = {nt: set() for nt in range(len(cfg.nonterminals))}

    def f(sym):
        return {sym.id} if isinstance(sym, Terminal) else first[sym.id]

    def lst(sym):
        return {sym.id} if isinstance(sym, Terminal) else last[sym.id]

    def null(sym):
        return isinstance(sym, Nonterminal) and sym.id in nullable

    changed = True
    while changed:
        changed = False
        for p in prods:
            if p.lhs not in nullable and all(null(s) for s in p.rhs):
                nullable.add(p.lhs)
                changed = True
            for s in p.rhs:
                new = f(s) - first[p.lhs]
                if new:
                    first[p.lhs] |= new
                    changed = True
                if not null(s):
                    break
            for s in reversed(p.rhs):
                new = lst(s) - last[p.lhs]
                if new:
                    last[p.lhs] |= new
                    changed = True
                if not null(s):
                    break
    follow: dict[int, set[int]] = {t.id: set() for t in cfg.terminals}
    for p in prods:
        rhs = p.rhs
        for i, x in enumerate(rhs):
            ends = lst(x)
            if not ends:
                continue
            for y in rhs[i + 1:]:
                for t in ends:
                    follow[t] |= f(y)
                if not null(y):
                    break
    return set(first[cfg.start]), set(last[cfg.start]), follow


def _unit_cycles(cfg: Cfg) -> list[tuple[int, int]]:
    unit: dict[int, set[int]] = {}
    for p in cfg.productions:
        if len(p.rhs) == 1 and isinstance(p.rhs[0], Nonterminal):
            unit.setdefault(p.lhs, set()).add(p.rhs[0].id)
    cyclic = []
    for a, targets in unit.items():
        for b in sorted(targets):
            # edge a->b lies on a cycle iff a is reachable from b
            seen, stack = {b}, [b]
            while stack:
                x = stack.pop()
                for y in unit.get(x, ()):
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            if a in seen:
                cyclic.append((a, b))
    return cyclic


def validate_cfg(cfg: Cfg) -> list[Diagnostic]:
    """Reachability / productivity / unit-cycle diagnostics.

    Never raises; an unproductive start symbol is reported with level
    ``"error"``.
    """
    diags: list[Diagnostic] = []
    names = cfg.nonterminals
    productive = productive_nonterminals(cfg)
    reachable = reachable_nonterminals(cfg)
    if cfg.start not in productive:
        diags.append(Diagnostic("error", "unproductive-start",
                                f"start symbol {names[cfg.start]!r} derives no terminal string"))
    for nt in range(len(names)):
        if nt not in reachable:
            diags.append(Diagnostic("warning", "unreachable", f"nonterminal {names[nt]!r} is unreachable"))
        elif nt not in productive:
            diags.append(Diagnostic("warning", "unproductive", f"nonterminal {names[nt]!r} is unproductive"))
    for a, b in _unit_cycles(cfg):
        diags.append(Diagnostic("warning", "unit-cycle", f"unit-cycle production {names[a]} -> {names[b]}"))
    used = {s.id for p in cfg.productions for s in p.rhs if isinstance(s, Terminal)}
    for t in cfg.terminals:
        if t.id not in used:
            diags.append(Diagnostic("warning", "unused-terminal", f"terminal {t.name!r} is never used"))
    return diags


# --- printing ----------------------------------------------------------------


def _quote(text: str) -> str:
    out = []
    for ch in text:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def format_cfg(cfg: Cfg) -> str:
    """Render ``cfg`` in the ``::=`` dialect; re-parsing yields an isomorphic grammar."""
    taken = set(cfg.nonterminals)
    term_names = []
    for t in cfg.terminals:
        name = t.name if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", t.name) else ""
        if not name or name in taken:
            name = f"T{t.id}"
        while name in taken:
            name += "_"
        taken.add(name)
        term_names.append(name)
    lines = []
    for nt, name in enumerate(cfg.nonterminals):
        alts = []
        for p in cfg.productions:
            if p.lhs != nt:
                continue
            syms = [term_names[s.id] if isinstance(s, Terminal) else cfg.nonterminals[s.id] for s in p.rhs]
            alts.append(" ".join(syms) if syms else '""')
        if alts:
            lines.append(f"{name} ::= " + " | ".join(alts))
    for t in cfg.terminals:
        if isinstance(t.pattern, Literal):
            body = _quote(t.pattern.text)
        else:
            body = "/" + rx.to_pattern(t.pattern.node) + "/"
        lines.append(f"{term_names[t.id]} ::= {body}")
    return "\n".join(lines) + "\n"
