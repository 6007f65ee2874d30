"""Regular expression AST used for terminal patterns.

Only the constructs needed for grammar terminals are supported: literal
characters, character classes (ranges, negation, escapes), concatenation,
alternation, grouping and the ``* + ? {m,n}`` quantifiers. Patterns are
implicitly anchored at both ends.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

MAX_CODEPOINT = 0x10FFFF


class RegexError(ValueError):
    """Raised for malformed or unsupported patterns."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)


@dataclass(frozen=True)
class CharSet:
    """Set of code points as sorted, disjoint, inclusive ranges."""

    ranges: tuple[tuple[int, int], ...]

    @staticmethod
    def of(ranges) -> CharSet:
        merged: list[list[int]] = []
        for lo, hi in sorted(ranges):
            if lo > hi:
                continue
            if merged and lo <= merged[-1][1] + 1:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return CharSet(tuple((lo, hi) for lo, hi in merged))

    @staticmethod
    def char(ch: str) -> CharSet:
        c = ord(ch)
        return CharSet(((c, c),))

    def negate(self) -> CharSet:
        out = []
        prev = 0
        for lo, hi in self.ranges:
            if lo > prev:
                out.append((prev, lo - 1))
            prev = hi + 1
        if prev <= MAX_CODEPOINT:
            out.append((prev, MAX_CODEPOINT))
        return CharSet(tuple(out))

    def union(self, other: CharSet) -> CharSet:
        return CharSet.of(self.ranges + other.ranges)

    def __contains__(self, ch: str) -> bool:
        c = ord(ch)
        i = bisect.bisect_right(self.ranges, (c, MAX_CODEPOINT + 1)) - 1
        return i >= 0 and self.ranges[i][0] <= c <= self.ranges[i][1]

    def is_empty(self) -> bool:
        return not self.ranges

    def size(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.ranges)

    def single(self) -> str | None:
        if len(self.ranges) == 1 and self.ranges[0][0] == self.ranges[0][1]:
            return chr(self.ranges[0][0])
        return None


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Chars:
    chars: CharSet


@dataclass(frozen=True)
class Concat:
    items: tuple


@dataclass(frozen=True)
class Alt:
    items: tuple


@dataclass(frozen=True)
class Repeat:
    item: object
    min: int
    max: int | None  # None = unbounded


@dataclass(frozen=True)
class Empty:
    pass


def literal(text: str):
    """AST matching exactly ``text``."""
    if not text:
        return Empty()
    if len(text) == 1:
        return Chars(CharSet.char(text))
    return Concat(tuple(Chars(CharSet.char(c)) for c in text))


def concat(items):
    flat = []
    for it in items:
        if isinstance(it, Concat):
            flat.extend(it.items)
        elif not isinstance(it, Empty):
            flat.append(it)
    if not flat:
        return Empty()
    if len(flat) == 1:
        return flat[0]
    return Concat(tuple(flat))


def alt(items):
    items = tuple(items)
    if len(items) == 1:
        return items[0]
    return Alt(items)


def nullable(node) -> bool:
    if isinstance(node, Empty):
        return True
    if isinstance(node, Chars):
        return False
    if isinstance(node, Concat):
        return all(nullable(i) for i in node.items)
    if isinstance(node, Alt):
        return any(nullable(i) for i in node.items)
    if isinstance(node, Repeat):
        return node.min == 0 or nullable(node.item)
    raise TypeError(node)


def literal_text(node) -> str | None:
    """The exact string matched by ``node`` if it is a plain literal."""
    if isinstance(node, Empty):
        return ""
    if isinstance(node, Chars):
        return node.chars.single()
    if isinstance(node, Concat):
        parts = [literal_text(i) for i in node.items]
        if any(p is None for p in parts):
            return None
        return "".join(parts)
    return None


# --- printing --------------------------------------------------------------

_CLASS_ESCAPES = {"\n": "\\n", "\t": "\\t", "\r": "\\r", "\\": "\\\\", "]": "\\]",
                  "[": "\\[", "^": "\\^", "-": "\\-", "/": "\\/"}
_ATOM_SPECIAL = set("\\.[]()|*+?{}/^$")


def _class_char(c: int) -> str:
    ch = chr(c)
    if ch in _CLASS_ESCAPES:
        return _CLASS_ESCAPES[ch]
    if c < 0x20 or c == 0x7F or c > 0xFFFF:
        return f"\\U{c:08x}" if c > 0xFFFF else f"\\u{c:04x}"
    return ch


def _atom_char(ch: str) -> str:
    if ch in ("\n", "\t", "\r"):
        return {"\n": "\\n", "\t": "\\t", "\r": "\\r"}[ch]
    if ch in _ATOM_SPECIAL:
        return "\\" + ch
    c = ord(ch)
    if c < 0x20 or c == 0x7F:
        return f"\\u{c:04x}"
    return ch


def _format_charset(cs: CharSet) -> str:
    single = cs.single()
    if single is not None:
        return _atom_char(single)
    body, prefix = cs, ""
    if cs.ranges and cs.ranges[-1][1] == MAX_CODEPOINT:
        body, prefix = cs.negate(), "^"
    parts = []
    for lo, hi in body.ranges:
        if lo == hi:
            parts.append(_class_char(lo))
        else:
            parts.append(_class_char(lo) + "-" + _class_char(hi))
    return "[" + prefix + "".join(parts) + "]"


def to_pattern(node) -> str:
    """Render an AST back into the pattern syntax accepted by :func:`parse_regex`."""
    if isinstance(node, Empty):
        return "()"
    if isinstance(node, Chars):
        return _format_charset(node.chars)
    if isinstance(node, Concat):
        return "".join(_wrap(i, Alt) for i in node.items)
    if isinstance(node, Alt):
        return "|".join(to_pattern(i) for i in node.items)
    if isinstance(node, Repeat):
        inner = _wrap(node.item, (Alt, Concat, Repeat))
        if (node.min, node.max) == (0, None):
            q = "*"
        elif (node.min, node.max) == (1, None):
            q = "+"
        elif (node.min, node.max) == (0, 1):
            q = "?"
        elif node.max is None:
            q = f"{{{node.min},}}"
        elif node.min == node.max:
            q = f"{{{node.min}}}"
        else:
            q = f"{{{node.min},{node.max}}}"
        return inner + q
    raise TypeError(node)


def _wrap(node, kinds) -> str:
    s = to_pattern(node)
    if isinstance(node, kinds) and not isinstance(node, Empty):
        return "(" + s + ")"
    return s


# --- parsing ---------------------------------------------------------------

_SIMPLE_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "f": "\f", "v": "\v", "0": "\0"}
_CLASS_SHORTHANDS = {
    "d": CharSet.of([(ord("0"), ord("9"))]),
    "w": CharSet.of([(ord("0"), ord("9")), (ord("A"), ord("Z")), (ord("a"), ord("z")), (ord("_"), ord("_"))]),
    "s": CharSet.of([(ord(c), ord(c)) for c in " \t\n\r\f\v"]),
}


def read_escape(text: str, i: int) -> tuple[str, int]:
    """Decode the escape starting after a backslash at ``text[i]``.

    Returns the decoded character and the index after the escape.
    """
    if i >= len(text):
        raise RegexError("dangling backslash", i)
    c = text[i]
    if c in _SIMPLE_ESCAPES:
        return _SIMPLE_ESCAPES[c], i + 1
    if c in "xuU":
        width = {"x": 2, "u": 4, "U": 8}[c]
        digits = text[i + 1:i + 1 + width]
        if len(digits) != width or any(d not in "0123456789abcdefABCDEF" for d in digits):
            raise RegexError(f"bad \\{c} escape", i)
        return chr(int(digits, 16)), i + 1 + width
    if c.isalnum() and c not in _CLASS_SHORTHANDS:
        raise RegexError(f"unsupported escape \\{c}", i)
    return c, i + 1


class _RegexParser:
    def __init__(self, text: str):
        self.text = text
        self.i = 0

    def parse(self):
        node = self.alternation()
        if self.i != len(self.text):
            raise RegexError(f"unexpected {self.text[self.i]!r}", self.i)
        return node

    def peek(self):
        return self.text[self.i] if self.i < len(self.text) else None

    def alternation(self):
        branches = [self.sequence()]
        while self.peek() == "|":
            self.i += 1
            branches.append(self.sequence())
        return alt(branches)

    def sequence(self):
        items = []
        while self.peek() not in (None, "|", ")"):
            items.append(self.quantified())
        return concat(items)

    def quantified(self):
        atom = self.atom()
        while True:
            c = self.peek()
            if c == "*":
                atom, self.i = Repeat(atom, 0, None), self.i + 1
            elif c == "+":
                atom, self.i = Repeat(atom, 1, None), self.i + 1
            elif c == "?":
                atom, self.i = Repeat(atom, 0, 1), self.i + 1
            elif c == "{" and self._looks_like_bound():
                lo, hi = self._bound()
                atom = Repeat(atom, lo, hi)
            else:
                return atom
            # lazy modifier: irrelevant for a recognizer
            if self.peek() == "?":
                self.i += 1

    def _looks_like_bound(self) -> bool:
        j = self.text.find("}", self.i)
        if j < 0:
            return False
        body = self.text[self.i + 1:j]
        return bool(body) and all(c.isdigit() or c == "," for c in body) and body[0].isdigit()

    def _bound(self):
        j = self.text.index("}", self.i)
        body = self.text[self.i + 1:j]
        self.i = j + 1
        if "," not in body:
            n = int(body)
            return n, n
        lo, hi = body.split(",", 1)
        lo_n = int(lo)
        hi_n = int(hi) if hi else None
        if hi_n is not None and hi_n < lo_n:
            raise RegexError("bad repetition bound", j)
        return lo_n, hi_n

    def atom(self):
        c = self.peek()
        start = self.i
        if c == "(":
            self.i += 1
            if self.text.startswith("?:", self.i):
                self.i += 2
            elif self.peek() == "?":
                raise RegexError("lookaround and inline flags are not supported", self.i)
            node = self.alternation()
            if self.peek() != ")":
                raise RegexError("unbalanced parenthesis", start)
            self.i += 1
            return node
        if c == "[":
            cs, self.i = parse_class(self.text, self.i)
            return Chars(cs)
        if c == ".":
            self.i += 1
            return Chars(CharSet.char("\n").negate())
        if c in ("^", "$"):
            raise RegexError("anchors are not supported inside terminal patterns", self.i)
        if c in ("*", "+", "?", "{", ")"):
            raise RegexError(f"nothing to repeat before {c!r}", self.i)
        if c == "\\":
            nxt = self.text[self.i + 1:self.i + 2]
            if nxt in _CLASS_SHORTHANDS:
                self.i += 2
                return Chars(_CLASS_SHORTHANDS[nxt])
            if nxt.upper() in _CLASS_SHORTHANDS and nxt.isupper():
                self.i += 2
                return Chars(_CLASS_SHORTHANDS[nxt.lower()].negate())
            if nxt.isdigit() and nxt != "0":
                raise RegexError("backreferences are not supported", self.i)
            ch, self.i = read_escape(self.text, self.i + 1)
            return Chars(CharSet.char(ch))
        self.i += 1
        return Chars(CharSet.char(c))


def parse_class(text: str, i: int) -> tuple[CharSet, int]:
    """Parse a ``[...]`` class starting at ``text[i] == '['``."""
    start = i
    i += 1
    negated = False
    if i < len(text) and text[i] == "^":
        negated = True
        i += 1
    ranges: list[tuple[int, int]] = []
    first = True
    while True:
        if i >= len(text):
            raise RegexError("unterminated character class", start)
        c = text[i]
        if c == "]" and not first:
            i += 1
            break
        first = False
        if c == "\\":
            nxt = text[i + 1:i + 2]
            if nxt in _CLASS_SHORTHANDS:
                ranges.extend(_CLASS_SHORTHANDS[nxt].ranges)
                i += 2
                continue
            lo_ch, i = read_escape(text, i + 1)
        else:
            lo_ch, i = c, i + 1
        if i + 1 < len(text) and text[i] == "-" and text[i + 1] != "]":
            if text[i + 1] == "\\":
                hi_ch, i = read_escape(text, i + 2)
            else:
                hi_ch, i = text[i + 1], i + 2
            if ord(hi_ch) < ord(lo_ch):
                raise RegexError("reversed range in character class", start)
            ranges.append((ord(lo_ch), ord(hi_ch)))
        else:
            ranges.append((ord(lo_ch), ord(lo_ch)))
    cs = CharSet.of(ranges)
    return (cs.negate() if negated else cs), i


def parse_regex(pattern: str):
    """Parse ``pattern`` into an AST."""
    return _RegexParser(pattern).parse()
