"""Binary artifact container.

Layout: magic ``DOMT``, format version (u32 little-endian), grammar and
vocabulary fingerprints (16 bytes each), then tagged sections ``tag:u8
length:varint payload``.  Integers inside sections are LEB128 varints
(zigzag for signed values); strings are length-prefixed UTF-8.

Sections: grammar (structural, so terminal ids survive), vocabulary,
scanner (NFA plus the interned per-terminal DFA state sets that tree keys
refer to) and trees.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from . import regex as rx
from .automata import Nfa, NfaState, Scanner
from .grammar import Cfg, Literal, Nonterminal, Production, Regex, Terminal, TerminalDef
from .treegen import CompiledArtifact, SubterminalTree, TreeKey
from .vocab import Vocabulary

__all__ = [
    "ArtifactError",
    "CorruptArtifact",
    "FingerprintMismatch",
    "FORMAT_VERSION",
    "MAGIC",
    "VersionMismatch",
    "dumps",
    "load_artifact",
    "loads",
    "save_artifact",
]

MAGIC = b"DOMT"
FORMAT_VERSION = 1

_GRAMMAR, _VOCAB, _SCANNER, _TREES = 1, 2, 3, 4


class ArtifactError(ValueError):
    code = "artifact"


class VersionMismatch(ArtifactError):
    code = "version-mismatch"


class FingerprintMismatch(ArtifactError):
    code = "fingerprint-mismatch"


class CorruptArtifact(ArtifactError):
    code = "corrupt-artifact"


# --- primitives ----------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def uint(self, n: int) -> None:
        if n < 0:
            raise ValueError("negative value for unsigned varint")
        while True:
            b = n & 0x7F
            n >>= 7
            if n:
                self.buf.append(b | 0x80)
            else:
                self.buf.append(b)
                return

    def int(self, n: int) -> None:
        self.uint((n << 1) if n >= 0 else ((-n << 1) - 1))

    def str(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.uint(len(raw))
        self.buf += raw

    def opt_str(self, s: str | None) -> None:
        if s is None:
            self.uint(0)
        else:
            self.uint(1)
            self.str(s)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def uint(self) -> int:
        n = shift = 0
        data = self.data
        while True:
            if self.pos >= len(data):
                raise CorruptArtifact("truncated varint")
            b = data[self.pos]
            self.pos += 1
            n |= (b & 0x7F) << shift
            if not b & 0x80:
                return n
            shift += 7
            if shift > 70:
                raise CorruptArtifact("varint too long")

    def int(self) -> int:
        z = self.uint()
        return (z >> 1) if not z & 1 else -((z + 1) >> 1)

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptArtifact("truncated data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def str(self) -> str:
        try:
            return self.bytes(self.uint()).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptArtifact("invalid UTF-8 string") from None

    def opt_str(self) -> str | None:
        return self.str() if self.uint() else None

    def done(self) -> bool:
        return self.pos >= len(self.data)


# --- regex ASTs -------------------------------------------------------------------

_CHARS, _CONCAT, _ALT, _REPEAT, _EMPTY = range(5)


def _write_charset(w: _Writer, cs: rx.CharSet) -> None:
    w.uint(len(cs.ranges))
    for lo, hi in cs.ranges:
        w.uint(lo)
        w.uint(hi - lo)


def _read_charset(r: _Reader) -> rx.CharSet:
    out = []
    for _ in range(r.uint()):
        lo = r.uint()
        out.append((lo, lo + r.uint()))
    return rx.CharSet(tuple(out))


def _write_node(w: _Writer, node) -> None:
    if isinstance(node, rx.Chars):
        w.uint(_CHARS)
        _write_charset(w, node.chars)
    elif isinstance(node, (rx.Concat, rx.Alt)):
        w.uint(_CONCAT if isinstance(node, rx.Concat) else _ALT)
        w.uint(len(node.items))
        for item in node.items:
            _write_node(w, item)
    elif isinstance(node, rx.Repeat):
        w.uint(_REPEAT)
        w.uint(node.min)
        w.uint(0 if node.max is None else node.max + 1)
        _write_node(w, node.item)
    elif isinstance(node, rx.Empty):
        w.uint(_EMPTY)
    else:
        raise TypeError(node)


def _read_node(r: _Reader, depth: int = 0):
    if depth > 500:
        raise CorruptArtifact("pattern nesting too deep")
    tag = r.uint()
    if tag == _CHARS:
        return rx.Chars(_read_charset(r))
    if tag in (_CONCAT, _ALT):
        items = tuple(_read_node(r, depth + 1) for _ in range(r.uint()))
        return rx.Concat(items) if tag == _CONCAT else rx.Alt(items)
    if tag == _REPEAT:
        lo = r.uint()
        hi = r.uint()
        return rx.Repeat(_read_node(r, depth + 1), lo, None if hi == 0 else hi - 1)
    if tag == _EMPTY:
        return rx.Empty()
    raise CorruptArtifact(f"unknown pattern node tag {tag}")


# --- sections -----------------------------------------------------------------------


def _write_grammar(w: _Writer, cfg: Cfg) -> None:
    w.uint(len(cfg.nonterminals))
    for name in cfg.nonterminals:
        w.str(name)
    w.uint(len(cfg.terminals))
    for t in cfg.terminals:
        w.str(t.name)
        if isinstance(t.pattern, Literal):
            w.uint(0)
            w.str(t.pattern.text)
        else:
            w.uint(1)
            _write_node(w, t.pattern.node)
    w.uint(len(cfg.productions))
    for p in cfg.productions:
        w.uint(p.lhs)
        w.uint(len(p.rhs))
        for s in p.rhs:
            w.uint(s.id * 2 + (1 if isinstance(s, Nonterminal) else 0))
    w.str(cfg.forced_prefix)


def _read_grammar(r: _Reader) -> Cfg:
    nts = tuple(r.str() for _ in range(r.uint()))
    terms = []
    for tid in range(r.uint()):
        name = r.str()
        kind = r.uint()
        if kind == 0:
            pat = Literal(r.str())
        elif kind == 1:
            pat = Regex(_read_node(r))
        else:
            raise CorruptArtifact("unknown terminal kind")
        terms.append(TerminalDef(tid, pat, name))
    prods = []
    for _ in range(r.uint()):
        lhs = r.uint()
        rhs = []
        for _ in range(r.uint()):
            v = r.uint()
            rhs.append(Nonterminal(v >> 1) if v & 1 else Terminal(v >> 1))
        prods.append(Production(lhs, tuple(rhs)))
    prefix = r.str()
    return Cfg(nts, tuple(prods), tuple(terms), prefix)


def _write_vocab(w: _Writer, vocab: Vocabulary) -> None:
    w.uint(len(vocab.tokens))
    for t in vocab.tokens:
        w.opt_str(t)


def _read_vocab(r: _Reader) -> Vocabulary:
    return Vocabulary(tuple(r.opt_str() for _ in range(r.uint())))


def _opt_uint(w: _Writer, v: int | None) -> None:
    w.uint(0 if v is None else v + 1)


def _read_opt_uint(r: _Reader) -> int | None:
    v = r.uint()
    return None if v == 0 else v - 1


def _write_scanner(w: _Writer, sc: Scanner) -> None:
    nfa = sc.nfa
    w.uint(len(nfa.states))
    w.uint(nfa.start)
    w.uint(nfa.accept)
    for st in nfa.states:
        w.uint(len(st.transitions))
        for cs, tgt in st.transitions:
            _write_charset(w, cs)
            w.uint(tgt)
        w.uint(len(st.eps))
        for e in st.eps:
            w.uint(e)
        _opt_uint(w, st.terminal)
        _opt_uint(w, st.accepting_for)
    w.uint(sc.num_terminals)
    for a, b in zip(sc.fragment_start, sc.fragment_accept):
        w.uint(a)
        w.uint(b)
    for name in sc.names:
        w.str(name)
    w.uint(sc.eos_state)
    # interned DFA state sets, in id order, so tree keys stay valid
    for t in range(sc.num_terminals):
        d = sc.dfa(t)
        w.uint(len(d.sets))
        for s in d.sets:
            items = sorted(s)
            w.uint(len(items))
            prev = 0
            for x in items:
                w.uint(x - prev)
                prev = x


def _read_scanner(r: _Reader) -> Scanner:
    n = r.uint()
    start, accept = r.uint(), r.uint()
    states = []
    for _ in range(n):
        trans = []
        for _ in range(r.uint()):
            cs = _read_charset(r)
            trans.append((cs, r.uint()))
        eps = [r.uint() for _ in range(r.uint())]
        states.append(NfaState(trans, eps, _read_opt_uint(r), _read_opt_uint(r)))
    for st in states:
        if any(t >= n for _, t in st.transitions) or any(e >= n for e in st.eps):
            raise CorruptArtifact("NFA edge out of range")
    nt = r.uint()
    starts, accepts = [], []
    for _ in range(nt):
        starts.append(r.uint())
        accepts.append(r.uint())
    names = [r.str() for _ in range(nt + 1)]
    eos = r.uint()
    sc = Scanner(Nfa(states, start, accept), nt, starts, accepts, names, eos)
    for t in range(nt):
        d = sc.dfa(t)
        count = r.uint()
        for i in range(count):
            items = []
            prev = 0
            for _ in range(r.uint()):
                prev += r.uint()
                items.append(prev)
            fs = frozenset(items)
            if i < len(d.sets):
                if d.sets[i] != fs:
                    raise CorruptArtifact("DFA start state does not match the NFA")
                continue
            if d.intern(fs) != i:
                raise CorruptArtifact("duplicate DFA state set")
    return sc


def _write_trees(w: _Writer, art: CompiledArtifact) -> None:
    w.uint(len(art.keys))
    for k in art.keys:
        w.int(k.terminal)
        w.int(k.state)
    kids = sorted(art.trees)
    w.uint(len(kids))
    for kid in kids:
        tree = art.trees[kid]
        w.uint(kid)
        w.uint(len(tree))
        for nid in range(1, len(tree)):
            w.uint(tree.parent[nid])
            w.uint(tree.term[nid])
            w.uint(tree.kind[nid])
            w.int(tree.endq[nid])
            w.int(tree.next_key[nid])
            toks = tree.tokens[nid]
            if toks is None:
                w.uint(0)
            else:
                w.uint(len(toks) + 1)
                prev = 0
                for t in toks.tolist():
                    w.uint(t - prev)
                    prev = t


def _read_trees(r: _Reader, art: CompiledArtifact) -> None:
    keys = [TreeKey(r.int(), r.int()) for _ in range(r.uint())]
    art.keys[:] = keys
    art.key_index = {k: i for i, k in enumerate(keys)}
    for _ in range(r.uint()):
        kid = r.uint()
        if kid >= len(keys):
            raise CorruptArtifact("tree key out of range")
        tree = SubterminalTree(keys[kid])
        n = r.uint()
        for nid in range(1, n):
            parent = r.uint()
            if parent >= nid:
                raise CorruptArtifact("tree node parent out of order")
            edge = (r.uint(), r.uint(), r.int())
            nxt = r.int()
            got = tree.child(parent, edge, nxt)
            if got != nid:
                raise CorruptArtifact("duplicate tree edge")
            count = r.uint()
            if count:
                toks = []
                prev = 0
                for _ in range(count - 1):
                    prev += r.uint()
                    toks.append(prev)
                tree.tokens[nid] = np.asarray(toks, dtype=np.int32)
        art.trees[kid] = tree


# --- public API -------------------------------------------------------------------------


def dumps(art: CompiledArtifact) -> bytes:
    art.build_all()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(art.grammar_fingerprint)
    out.write(art.vocab_fingerprint)
    for tag, fn, arg in ((_GRAMMAR, _write_grammar, art.cfg), (_VOCAB, _write_vocab, art.vocab),
                         (_SCANNER, _write_scanner, art.scanner), (_TREES, _write_trees, art)):
        w = _Writer()
        fn(w, arg)
        head = _Writer()
        head.uint(tag)
        head.uint(len(w.buf))
        out.write(head.buf)
        out.write(w.buf)
    return out.getvalue()


def loads(data: bytes, vocab: Vocabulary | None = None, cfg: Cfg | None = None) -> CompiledArtifact:
    """Decode an artifact; ``vocab``/``cfg``, when given, must match its fingerprints."""
    if len(data) < 40 or data[:4] != MAGIC:
        raise CorruptArtifact("not an artifact file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"artifact format version {version}, expected {FORMAT_VERSION}")
    gfp, vfp = data[8:24], data[24:40]
    if cfg is not None and cfg.fingerprint() != gfp:
        raise FingerprintMismatch("artifact was compiled for a different grammar")
    if vocab is not None and vocab.fingerprint != vfp:
        raise FingerprintMismatch("artifact was compiled for a different vocabulary")
    r = _Reader(data[40:])
    sections: dict[int, bytes] = {}
    while not r.done():
        tag = r.uint()
        sections[tag] = r.bytes(r.uint())
    for tag in (_GRAMMAR, _VOCAB, _SCANNER, _TREES):
        if tag not in sections:
            raise CorruptArtifact(f"missing section {tag}")
    try:
        g = _read_grammar(_Reader(sections[_GRAMMAR]))
        v = _read_vocab(_Reader(sections[_VOCAB]))
        if g.fingerprint() != gfp or v.fingerprint != vfp:
            raise CorruptArtifact("embedded grammar or vocabulary does not match the header")
        sc = _read_scanner(_Reader(sections[_SCANNER]))
        art = CompiledArtifact(g, v, sc)
        _read_trees(_Reader(sections[_TREES]), art)
    except ArtifactError:
        raise
    except (ValueError, IndexError, TypeError) as e:
        raise CorruptArtifact(f"malformed artifact: {e}") from None
    return art


def save_artifact(art: CompiledArtifact, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps(art))


def load_artifact(path, vocab: Vocabulary | None = None, cfg: Cfg | None = None) -> CompiledArtifact:
    with open(path, "rb") as f:
        data = f.read()
    return loads(data, vocab, cfg)
