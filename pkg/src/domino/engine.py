"""Online decoding: sessions, masks, opportunistic checks and the decode loop.

A session tracks one or more lexing hypotheses.  Each hypothesis is a tree
key (terminal boundary or a partially read terminal) plus the parser state
for the terminals completed so far.  Masks walk the precomputed tree of
every hypothesis and keep a node's tokens only if the parser accepts the
node's path.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .automata import build_scanner
from .grammar import Cfg
from .parser import ParserState, parser_for
from .treegen import (
    BOUNDARY,
    CONT,
    END,
    FULL,
    CompiledArtifact,
    Traverser,
)
from .vocab import Vocabulary

__all__ = [
    "DecodeResult",
    "DecodeSession",
    "EngineError",
    "HealingError",
    "INF",
    "MaskConfig",
    "TokenNotAllowed",
    "check_token",
    "compute_mask",
    "constrained_decode",
    "force_eos_check",
    "heal_prompt",
    "parse_k",
    "session_update",
]

log = logging.getLogger(__name__)

INF = math.inf
MAX_HYPOTHESES = 8


class EngineError(RuntimeError):
    pass


class TokenNotAllowed(EngineError):
    pass


class HealingError(EngineError):
    pass


def parse_k(value) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinite", "infinity", "∞"):
            return INF
        value = int(value)
    if value < 0:
        raise ValueError("lookahead k must be non-negative")
    return value


@dataclass(frozen=True)
class MaskConfig:
    k: float = INF
    opportunistic: bool = False

    @property
    def depth_limit(self) -> float:
        return self.k + 1


@dataclass
class Hypothesis:
    key: int
    parser: ParserState
    alpha: tuple = ()  # (terminal, kind) of the latest subterminal


class DecodeSession:
    """Live constrained-decoding state over a compiled artifact."""

    def __init__(self, artifact: CompiledArtifact):
        self.artifact = artifact
        self.cfg = artifact.cfg
        self.vocab: Vocabulary = artifact.vocab
        self.eos_id = self.vocab.eos_id
        self.eos_terminal = artifact.traverser.eos
        self.trav: Traverser = artifact.traverser
        self.hyps = [Hypothesis(0, parser_for(self.cfg).initial())]
        self.emitted: list[int] = []
        self._text: list[str] = []
        self.prefix_remaining = self.cfg.forced_prefix
        self.finished = False
        self.diagnostics: list[str] = []

    # --- bookkeeping -------------------------------------------------------

    def clone(self) -> DecodeSession:
        other = object.__new__(DecodeSession)
        other.__dict__.update(self.__dict__)
        other.hyps = list(self.hyps)
        other.emitted = list(self.emitted)
        other._text = list(self._text)
        other.diagnostics = list(self.diagnostics)
        return other

    @property
    def emitted_text(self) -> str:
        return "".join(self._text)

    @property
    def viable(self) -> bool:
        return bool(self.hyps)

    @property
    def last_subterminal(self) -> tuple:
        return min((h.alpha for h in self.hyps), default=())

    def parser_fingerprint(self) -> int:
        fps = sorted({h.parser.fingerprint() for h in self.hyps})
        if len(fps) == 1:
            return fps[0]
        h = hashlib.blake2b(digest_size=8)
        for fp in fps:
            h.update(fp.to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little")

    def speculation_key(self) -> tuple:
        return self.last_subterminal, self.parser_fingerprint()

    def state_signature(self) -> tuple:
        return tuple(sorted((h.key, h.parser.history) for h in self.hyps)), self.prefix_remaining

    # --- path checking -------------------------------------------------------

    def _close_pending(self, h: Hypothesis) -> ParserState | None:
        """Parser state after closing the pending terminal (None if impossible)."""
        key = self.artifact.keys[h.key]
        if key.boundary:
            return h.parser
        d = self.trav.dfas[key.terminal]
        if d.accepting[key.state] and h.parser.allows(key.terminal):
            return h.parser.advance(key.terminal)
        return None

    def _eos_ok(self, h: Hypothesis) -> bool:
        p = self._close_pending(h)
        return p is not None and p.accepts_eos()

    def _follow_path(self, h: Hypothesis, edges, limit: float = INF):
        """Check a subterminal path from hypothesis ``h``.

        Returns the parser state after every closed terminal on the path, or
        None when the parser rejects the path (or it is deeper than ``limit``).
        """
        if len(edges) > limit:
            return None
        key = self.artifact.keys[h.key]
        p = h.parser
        for i, (t, kind, _q) in enumerate(edges):
            if t == self.eos_terminal:
                return None
            if i == 0 and not key.boundary:
                pending = key.terminal
                if kind == CONT or kind == END:
                    if t != pending or not p.allows(pending):
                        return None
                    if kind == END:
                        p = p.advance(pending)
                    continue
                # the token starts a new terminal: the pending one closes first
                if not self.trav.dfas[pending].accepting[key.state] or not p.allows(pending):
                    return None
                p = p.advance(pending)
            if not p.allows(t):
                return None
            if kind == FULL:
                p = p.advance(t)
        return p

    def _prefix_ok(self, text: str) -> bool:
        rem = self.prefix_remaining
        if not rem:
            return True
        n = min(len(rem), len(text))
        return text[:n] == rem[:n]

    # --- masks ----------------------------------------------------------------

    def compute_mask(self, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
        mask = np.zeros(self.vocab.mask_size, dtype=bool)
        parts: list[np.ndarray] = []
        limit = cfg.depth_limit
        for h in self.hyps:
            if self._walk(h, limit, parts, mask):
                break
        if parts:
            mask[np.concatenate(parts)] = True
        if self.prefix_remaining:
            mask &= self._prefix_mask()
        return mask

    def _prefix_mask(self) -> np.ndarray:
        keep = np.zeros(self.vocab.mask_size, dtype=bool)
        for tid, text in enumerate(self.vocab.tokens):
            if text and self._prefix_ok(text):
                keep[tid] = True
        return keep

    def _walk(self, h: Hypothesis, limit: float, parts: list, mask: np.ndarray,
              stop_at_first: bool = False) -> bool:
        """Collect legal token arrays of ``h``'s tree; True means stop early."""
        art = self.artifact
        tree = art.tree(h.key)
        key = art.keys[h.key]
        term, kind, children, tokens, depth = tree.term, tree.kind, tree.children, tree.tokens, tree.depth
        eos_t = self.eos_terminal
        p = h.parser
        closed = self._close_pending(h)
        pending = key.terminal
        stack = []
        for c in children[0]:
            t, kd = term[c], kind[c]
            if t == eos_t:
                if closed is not None and closed.accepts_eos() and not self.prefix_remaining:
                    mask[self.eos_id] = True
                continue
            if kd == CONT:
                if p.allows(pending) and tokens[c] is not None:
                    parts.append(tokens[c])
                    if stop_at_first:
                        return True
                continue
            if kd == END:
                if p.allows(pending):
                    if tokens[c] is not None:
                        parts.append(tokens[c])
                        if stop_at_first:
                            return True
                    if children[c] and 2 <= limit:
                        q = p.advance(pending)
                        stack.extend((g, q) for g in children[c])
                continue
            if closed is not None:
                stack.append((c, closed))
        while stack:
            c, q = stack.pop()
            t = term[c]
            if not q.allows(t):
                continue
            if tokens[c] is not None:
                parts.append(tokens[c])
                if stop_at_first:
                    return True
            if kind[c] == FULL and children[c] and depth[c] + 1 <= limit:
                r = q.advance(t)
                stack.extend((g, r) for g in children[c])
        return False

    def check_token(self, token: int, cfg: MaskConfig = MaskConfig()) -> bool:
        """Mask bit for one token, via its tree attachments only."""
        if token == self.eos_id:
            return not self.prefix_remaining and any(self._eos_ok(h) for h in self.hyps)
        text = self.vocab.tokens[token]
        if not text or not self._prefix_ok(text):
            return False
        limit = cfg.depth_limit
        for h in self.hyps:
            tree = self.artifact.tree(h.key)
            for nid in tree.nodes_for(token):
                if tree.depth[nid] > limit:
                    continue
                edges = [tree.edge(n) for n in tree.path(nid)]
                if self._follow_path(h, edges, limit) is not None:
                    return True
        return False

    def has_non_eos_option(self) -> bool:
        if self.prefix_remaining:
            return bool(self.compute_mask()[:-1].any())
        parts: list[np.ndarray] = []
        scratch = np.zeros(self.vocab.mask_size, dtype=bool)
        return any(self._walk(h, INF, parts, scratch, stop_at_first=True) for h in self.hyps)

    def force_eos_check(self) -> bool:
        """True when EOS is the only legal continuation."""
        return self.check_token(self.eos_id) and not self.has_non_eos_option()

    # --- online (tree-free) masking --------------------------------------------

    def online_mask(self, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
        """Mask computed by classifying every token from scratch (baseline mode)."""
        mask = np.zeros(self.vocab.mask_size, dtype=bool)
        limit = cfg.depth_limit
        keys = self.artifact.keys
        for tid, text in enumerate(self.vocab.tokens):
            if not text or not self._prefix_ok(text):
                continue
            for h in self.hyps:
                if any(self._follow_path(h, edges, limit) is not None
                       for edges, _ in self.trav.traverse(keys[h.key], text)):
                    mask[tid] = True
                    break
        if not self.prefix_remaining and any(self._eos_ok(h) for h in self.hyps):
            mask[self.eos_id] = True
        return mask

    # --- advancing ----------------------------------------------------------

    def _advance_hyps(self, results) -> None:
        seen = set()
        new = []
        for h in results:
            sig = (h.key, h.parser.history)
            if sig not in seen:
                seen.add(sig)
                new.append(h)
        if len(new) > MAX_HYPOTHESES:
            msg = f"{len(new)} lexing hypotheses exceed the cap of {MAX_HYPOTHESES}; keeping the first"
            log.warning(msg)
            self.diagnostics.append(msg)
            new = new[:MAX_HYPOTHESES]
        self.hyps = new

    def _successor(self, h: Hypothesis, edges, end_key_id: int) -> Hypothesis | None:
        p = self._follow_path(h, edges)
        if p is None or p.dead:
            return None
        t, kind, q = edges[-1]
        return Hypothesis(end_key_id, p, (t, kind))

    def update(self, token: int) -> None:
        """Advance by one emitted token (must be legal at unbounded lookahead)."""
        if self.finished:
            raise TokenNotAllowed("session already ended with EOS")
        if token == self.eos_id:
            if not self.check_token(token):
                raise TokenNotAllowed("EOS is not allowed here")
            self.finished = True
            self.emitted.append(token)
            return
        if not 0 <= token < self.eos_id:
            raise TokenNotAllowed(f"token id {token} out of range")
        text = self.vocab.tokens[token]
        if not text or not self._prefix_ok(text):
            raise TokenNotAllowed(f"token {token} is not allowed here")
        results = []
        for h in self.hyps:
            tree = self.artifact.tree(h.key)
            for nid in tree.nodes_for(token):
                edges = [tree.edge(n) for n in tree.path(nid)]
                nh = self._successor(h, edges, tree.next_key[nid])
                if nh is not None:
                    results.append(nh)
        if not results:
            raise TokenNotAllowed(f"token {token} ({self.vocab.display(token)!r}) is not allowed here")
        self._advance_hyps(results)
        self.emitted.append(token)
        self._text.append(text)
        self.prefix_remaining = self.prefix_remaining[len(text):]

    def feed_text(self, text: str) -> None:
        """Advance by raw text that need not align with token boundaries."""
        if not text:
            return
        if not self._prefix_ok(text):
            raise TokenNotAllowed("text conflicts with the forced prefix")
        results = []
        keys = self.artifact.keys
        for h in self.hyps:
            for edges, end_key in self.trav.traverse(keys[h.key], text):
                nh = self._successor(h, edges, self.artifact.key_id(end_key))
                if nh is not None:
                    results.append(nh)
        if not results:
            raise TokenNotAllowed(f"text {text!r} is not a viable continuation")
        self._advance_hyps(results)
        self._text.append(text)
        self.prefix_remaining = self.prefix_remaining[len(text):]

    def feed_tokens(self, tokens) -> None:
        for t in tokens:
            self.update(t)

    # --- completion estimates --------------------------------------------------

    def completion_cost(self) -> float:
        """Minimum characters still needed to reach a complete word."""
        tl = _terminal_min_lengths(self.artifact)
        best = INF
        for h in self.hyps:
            key = self.artifact.keys[h.key]
            if key.boundary:
                best = min(best, h.parser.completion_cost(tl))
                continue
            rest = _dfa_distance(self.artifact, key.terminal, key.state)
            if rest == INF or not h.parser.allows(key.terminal):
                continue
            best = min(best, rest + h.parser.advance(key.terminal).completion_cost(tl))
        return max(best, len(self.prefix_remaining))


def _terminal_min_lengths(art: CompiledArtifact) -> list:
    cached = getattr(art, "_term_min", None)
    if cached is None:
        cached = [_dfa_distance(art, t, art.traverser.dfas[t].start) for t in range(art.traverser.num_terminals)]
        art._term_min = cached
    return cached


def _dfa_distance(art: CompiledArtifact, terminal: int, qid: int) -> float:
    """Shortest number of characters from a DFA state to acceptance (NFA BFS)."""
    nfa = art.scanner.nfa
    d = art.traverser.dfas[terminal]
    if d.accepting[qid]:
        return 0
    # 0-1 BFS over the NFA restricted to the terminal fragment
    from collections import deque

    dist = {s: 0 for s in d.sets[qid]}
    dq = deque(d.sets[qid])
    while dq:
        s = dq.popleft()
        st = nfa.states[s]
        if st.accepting_for == terminal:
            return dist[s]
        for e in st.eps:
            if e != nfa.accept and (e not in dist or dist[e] > dist[s]):
                dist[e] = dist[s]
                dq.appendleft(e)
        for cs, tgt in st.transitions:
            if not cs.is_empty() and (tgt not in dist or dist[tgt] > dist[s] + 1):
                dist[tgt] = dist[s] + 1
                dq.append(tgt)
    return INF


# --- module-level operation aliases -------------------------------------------


def session_update(session: DecodeSession, token: int) -> None:
    session.update(token)


def compute_mask(session: DecodeSession, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    return session.compute_mask(cfg)


def check_token(session: DecodeSession, token: int, cfg: MaskConfig = MaskConfig()) -> bool:
    return session.check_token(token, cfg)


def force_eos_check(session: DecodeSession) -> bool:
    return session.force_eos_check()


def heal_prompt(prompt_tokens, cfg: Cfg, vocab: Vocabulary):
    """Strip the last prompt token and force its text as the output prefix.

    Returns ``(shortened prompt, healed Cfg)``.  Raises :class:`HealingError`
    when no word of the language starts with the stripped text.
    """
    prompt_tokens = list(prompt_tokens)
    if not prompt_tokens:
        raise HealingError("cannot heal an empty prompt")
    last = prompt_tokens[-1]
    text = vocab.text(last)
    if not text:
        raise HealingError("the last prompt token has no text")
    prefix = cfg.forced_prefix + text
    # viability of the forced text, checked with the scanner and parser
    trav = Traverser(build_scanner(cfg), cfg)
    parser = parser_for(cfg).initial()
    ok = False
    for edges, end_key in trav.traverse(BOUNDARY, prefix):
        if _path_viable(trav, parser, edges):
            ok = True
            break
    if not ok:
        raise HealingError(f"no word of the grammar starts with {text!r}")
    return prompt_tokens[:-1], cfg.with_forced_prefix(prefix)


def _path_viable(trav: Traverser, parser: ParserState, edges) -> bool:
    p = parser
    n = len(edges)
    for i, (t, kind, _q) in enumerate(edges):
        if not p.allows(t):
            return False
        if kind == FULL or (kind == END and i == n - 1):
            p = p.advance(t)
    return not p.dead


# --- decoding -------------------------------------------------------------------


@dataclass
class DecodeResult:
    tokens: list
    text: str
    finished: bool
    truncated: bool
    interventions: int
    steps: list = field(default_factory=list)
    provider_calls: int = 0
    proposed: int = 0
    accepted: int = 0
    seconds: float = 0.0
    mask_seconds: list = field(default_factory=list)

    @property
    def tokens_per_second(self) -> float:
        return len(self.tokens) / self.seconds if self.seconds > 0 else 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class DecodeOptions:
    max_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0
    speculation: object = None  # SpeculationTable or None
    finish_on_truncate: bool = False
    mask_mode: str = "tree"  # tree | online-oracle
    freeze_speculation: bool = False
    prompt: tuple = ()
    unconstrained: bool = False


def _log_softmax(v: np.ndarray) -> np.ndarray:
    finite = np.where(np.isfinite(v), v, -np.inf)
    m = np.max(finite)
    if not np.isfinite(m):
        # no usable score at all: report the uniform distribution
        return np.full(v.shape, -np.log(v.shape[0]))
    z = finite - m
    return z - np.log(np.sum(np.exp(z)))


class _Decider:
    """One decode decision: noise, unmasked choice, masked choice."""

    def __init__(self, session: DecodeSession, cfg: MaskConfig, opts: DecodeOptions, result: DecodeResult):
        self.session = session
        self.cfg = cfg
        self.opts = opts
        self.result = result

    def scores(self, logits: np.ndarray, step: int) -> np.ndarray:
        logits = np.asarray(logits, dtype=np.float64)
        if self.opts.temperature > 0:
            g = np.random.default_rng([self.opts.seed, step]).gumbel(size=logits.shape[0])
            return logits / self.opts.temperature + g
        return logits

    def decide(self, logits, step: int, sess: DecodeSession | None = None) -> tuple[int, bool, int]:
        """Returns (chosen, intervened, mask popcount or -1)."""
        s = self.scores(logits, step)
        free = int(np.argmax(s))
        if self.opts.unconstrained:
            return free, False, -1
        sess = sess or self.session
        t0 = time.perf_counter()
        if self.cfg.opportunistic and self.opts.mask_mode == "tree" and sess.check_token(free, self.cfg):
            self.result.mask_seconds.append(time.perf_counter() - t0)
            return free, False, -1
        if self.opts.mask_mode == "online-oracle":
            mask = sess.online_mask(self.cfg)
        else:
            mask = sess.compute_mask(self.cfg)
        self.result.mask_seconds.append(time.perf_counter() - t0)
        if not mask.any():
            raise EngineError("empty mask during constrained decode")
        masked = np.where(mask, s, -np.inf)
        chosen = int(np.argmax(masked))
        if not np.isfinite(masked[chosen]):
            # every allowed token has -inf score: fall back to the lowest allowed id
            chosen = int(np.flatnonzero(mask)[0])
        return chosen, chosen != free, int(mask.sum())


def constrained_decode(provider, session: DecodeSession, cfg: MaskConfig = MaskConfig(),
                       opts: DecodeOptions | None = None, on_step=None) -> DecodeResult:
    """Generate tokens under the grammar (greedy at temperature 0)."""
    from .speculate import verify_and_accept

    opts = opts or DecodeOptions()
    if getattr(provider, "vocab_size", session.vocab.mask_size) != session.vocab.mask_size:
        raise EngineError("provider vocabulary size does not match the artifact")
    result = DecodeResult([], "", False, False, 0)
    decider = _Decider(session, cfg, opts, result)
    table = opts.speculation
    prompt = list(opts.prompt)
    calls0 = getattr(provider, "calls", 0)
    t_start = time.perf_counter()
    vocab = session.vocab

    def emit(token: int, logits, intervened: bool, popcount: int) -> None:
        if table is not None and not opts.freeze_speculation and not opts.unconstrained:
            table.record(session.speculation_key(), token)
        lv = np.asarray(logits, dtype=np.float64)
        if opts.temperature > 0:
            lv = lv / opts.temperature
        logprob = float(_log_softmax(lv)[token])
        step = len(result.tokens)
        if not opts.unconstrained:
            session.update(token)
        result.tokens.append(token)
        result.interventions += int(intervened)
        rec = {"step": step, "token": token, "text": vocab.display(token), "popcount": popcount,
               "intervened": intervened, "logprob": logprob}
        result.steps.append(rec)
        if on_step is not None:
            on_step(rec)

    while len(result.tokens) < opts.max_tokens and not session.finished:
        step = len(result.tokens)
        if not opts.unconstrained and session.force_eos_check():
            emit(session.eos_id, np.zeros(vocab.mask_size), False, 1)
            break
        proposal = table.propose(session, cfg) if table is not None and not opts.unconstrained else []
        proposal = proposal[: max(0, opts.max_tokens - step - 1)]
        context = prompt + result.tokens
        if proposal:
            accepted, decisions = verify_and_accept(
                provider, session, proposal, lambda vec, i, sim: decider.decide(vec, step + i, sim), context)
            result.proposed += len(proposal)
            result.accepted += accepted
            for token, vec, intervened, pop in decisions:
                emit(token, vec if vec is not None else np.zeros(vocab.mask_size), intervened, pop)
            continue
        logits = provider.logits(context)
        chosen, intervened, pop = decider.decide(logits, step)
        emit(chosen, logits, intervened, pop)
        if opts.unconstrained and chosen == session.eos_id:
            break

    if not session.finished and not opts.unconstrained:
        result.truncated = True
        if opts.finish_on_truncate:
            _finish(session, result, opts)
    result.finished = session.finished or (opts.unconstrained and result.tokens[-1:] == [session.eos_id])
    result.text = "".join(vocab.tokens[t] or "" for t in result.tokens if t != session.eos_id)
    result.provider_calls = getattr(provider, "calls", 0) - calls0
    result.seconds = time.perf_counter() - t_start
    return result


def _finish(session: DecodeSession, result: DecodeResult, opts: DecodeOptions, max_extra: int | None = None) -> None:
    """Completion mode: steer toward the cheapest completion, then emit EOS."""
    max_extra = max_extra or max(64, 4 * opts.max_tokens)
    for _ in range(max_extra):
        if session.check_token(session.eos_id):
            session.update(session.eos_id)
            result.tokens.append(session.eos_id)
            return
        mask = session.compute_mask()
        best = None
        for tid in np.flatnonzero(mask[:-1]).tolist():
            trial = session.clone()
            trial.update(tid)
            cost = trial.completion_cost()
            rank = (cost, -len(session.vocab.tokens[tid]), tid)
            if best is None or rank < best[0]:
                best = (rank, tid)
        if best is None:
            return
        session.update(best[1])
        result.tokens.append(best[1])
        result.steps.append({"step": len(result.tokens) - 1, "token": best[1],
                             "text": session.vocab.display(best[1]), "popcount": int(mask.sum()),
                             "intervened": False, "logprob": None, "completion": True})
