"""Command-line interface.

Exit codes: 0 success, 1 domain error (reported with a stable error code),
2 usage error.  ``DOMINO_LOG`` sets log verbosity
(error|warn|info|debug|trace).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .engine import (
    DecodeOptions,
    DecodeSession,
    EngineError,
    HealingError,
    MaskConfig,
    TokenNotAllowed,
    constrained_decode,
    heal_prompt,
    parse_k,
)
from .grammar import GrammarError, load_grammar, validate_cfg
from .provider import ProviderError, make_provider
from .retok import RetokenizeError, retokenize
from .serialize import ArtifactError, load_artifact, save_artifact
from .speculate import SpeculationError, SpeculationTable
from .treegen import DEFAULT_BUDGET, PrecomputeBudgetError, compile_artifact
from .vocab import VocabError, load_vocab

log = logging.getLogger("domino")

TRACE = 5
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG, "trace": TRACE}


class CliError(Exception):
    def __init__(self, code: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


def _error_code(e: BaseException) -> tuple[str, dict]:
    if isinstance(e, CliError):
        return e.code, e.extra
    if isinstance(e, ArtifactError):
        return e.code, {}
    if isinstance(e, GrammarError):
        return "grammar-error", {"line": e.line, "col": e.col}
    if isinstance(e, RetokenizeError):
        return "retokenize-dead-end", {"offset": e.offset}
    table = [
        (VocabError, "vocab-error"),
        (TokenNotAllowed, "token-not-allowed"),
        (HealingError, "healing-impossible"),
        (PrecomputeBudgetError, "precompute-budget"),
        (ProviderError, "provider-failure"),
        (SpeculationError, "speculation-table"),
        (EngineError, "engine-error"),
        (OSError, "io-error"),
    ]
    for cls, code in table:
        if isinstance(e, cls):
            return code, {}
    from .testing.oracle import BoundExceeded

    if isinstance(e, BoundExceeded):
        return "oracle-bound", {}
    return "error", {}


def _configure_logging() -> None:
    logging.addLevelName(TRACE, "TRACE")
    level = _LEVELS.get(os.environ.get("DOMINO_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


# --- shared loading ------------------------------------------------------------


def _load_vocab(args):
    return load_vocab(args.vocab, args.vocab_format)


def _artifact(args):
    if getattr(args, "artifact", None):
        # a --vocab given alongside must be the one the artifact was built for
        vocab = _load_vocab(args) if getattr(args, "vocab", None) else None
        return load_artifact(args.artifact, vocab=vocab)
    if not getattr(args, "grammar", None) or not getattr(args, "vocab", None):
        raise CliError("usage", "give --artifact, or both --grammar and --vocab")
    cfg = load_grammar(args.grammar, implicit_ws=args.implicit_ws)
    return compile_artifact(cfg, _load_vocab(args), eager=False)


def _read_tokens(path) -> list[int]:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list) or not all(isinstance(t, int) for t in data):
        raise CliError("bad-input", f"{path} must hold a JSON array of token ids")
    return data


def _emit(args, obj, text_lines=None) -> None:
    if args.output == "json":
        print(json.dumps(obj, ensure_ascii=False))
    else:
        for line in text_lines if text_lines is not None else [obj]:
            print(line)


def _mask_ids(mask) -> list[int]:
    return np.flatnonzero(mask[:-1]).tolist()


def _in_language(artifact, text: str) -> bool:
    s = DecodeSession(artifact)
    try:
        s.feed_text(text)
    except TokenNotAllowed:
        return False
    return s.check_token(s.eos_id)


# --- commands -------------------------------------------------------------------


def cmd_compile(args) -> int:
    t0 = time.perf_counter()
    cfg = load_grammar(args.grammar, implicit_ws=args.implicit_ws)
    diags = [d for d in validate_cfg(cfg)]
    vocab = _load_vocab(args)
    art = compile_artifact(cfg, vocab, budget=args.budget)
    save_artifact(art, args.out)
    secs = time.perf_counter() - t0
    stats = art.stats()
    print(f"compiled {args.grammar} with {vocab.size} tokens in {secs:.2f}s "
          f"({stats['trees']} trees, {stats['nodes']} nodes)", file=sys.stderr)
    _emit(args, {"artifact": args.out, "seconds": secs, **stats,
                 "grammar_fingerprint": cfg.fingerprint().hex(),
                 "vocab_fingerprint": vocab.fingerprint.hex(),
                 "diagnostics": [{"level": d.level, "code": d.code, "message": d.message} for d in diags]},
          [f"wrote {args.out}"] + [f"{d.level}: {d.message}" for d in diags])
    return 0


def cmd_mask(args) -> int:
    art = _artifact(args)
    sess = DecodeSession(art)
    sess.feed_text(args.text)
    mc = MaskConfig(parse_k(args.k))
    mask = sess.online_mask(mc) if args.mask_mode == "online-oracle" else sess.compute_mask(mc)
    ids = _mask_ids(mask)
    vocab = art.vocab
    allowed = [vocab.tokens[i] for i in ids]
    _emit(args, {"allowed": allowed, "ids": ids, "eos": bool(mask[-1])},
          [f"{i}\t{vocab.tokens[i]!r}" for i in ids] + ([f"{vocab.eos_id}\tEOS"] if mask[-1] else []))
    return 0


def _speculation(args, art):
    if not args.speculate:
        return None
    if args.spec_table and os.path.exists(args.spec_table):
        return SpeculationTable.load(args.spec_table, art.grammar_fingerprint, art.vocab_fingerprint,
                                     s=args.speculate, threshold=args.spec_threshold)
    return SpeculationTable(args.speculate, args.spec_threshold)


def _options(args, table, prompt) -> DecodeOptions:
    return DecodeOptions(max_tokens=args.max_tokens, temperature=args.temperature, seed=args.seed,
                         speculation=table, finish_on_truncate=args.finish == "on-truncate",
                         mask_mode=args.mask_mode, freeze_speculation=args.freeze_spec, prompt=tuple(prompt))


def cmd_decode(args) -> int:
    art = _artifact(args)
    prompt = _read_tokens(args.prompt_tokens) if args.prompt_tokens else []
    if args.heal:
        if not prompt:
            raise CliError("usage", "--heal needs --prompt-tokens")
        try:
            prompt, healed = heal_prompt(prompt, art.cfg, art.vocab)
            art = compile_artifact(healed, art.vocab, eager=False)
        except HealingError as e:
            log.warning("%s; decoding without healing", e)
    provider = make_provider(args.provider, art.vocab, prompt_length=len(prompt), seed=args.seed,
                             timeout=args.timeout)
    table = _speculation(args, art)
    opts = _options(args, table, prompt)
    mc = MaskConfig(parse_k(args.k), args.opportunistic)

    def on_step(rec):
        if args.output == "json":
            print(json.dumps(rec, ensure_ascii=False))

    res = constrained_decode(provider, DecodeSession(art), mc, opts, on_step=on_step)
    if table is not None and args.spec_table:
        table.save(args.spec_table, art.grammar_fingerprint, art.vocab_fingerprint)
    final = {"final": True, "text": res.text, "tokens": res.tokens, "in_language": _in_language(art, res.text),
             "finished": res.finished, "truncated": res.truncated, "interventions": res.interventions,
             "tokens_per_second": res.tokens_per_second, "provider_calls": res.provider_calls,
             "proposed": res.proposed, "accepted": res.accepted}
    _emit(args, final, [res.text])
    return 0


def cmd_retokenize(args) -> int:
    vocab = _load_vocab(args)
    prompt = _read_tokens(args.prompt_tokens) if args.prompt_tokens else []
    with open(args.target, encoding="utf-8") as f:
        target = f.read()
    provider = make_provider(args.provider, vocab, prompt_length=len(prompt), timeout=args.timeout)
    out = retokenize(provider, prompt, target, vocab)
    _emit(args, out, [" ".join(map(str, out))])
    return 0


def cmd_oracle_mask(args) -> int:
    from .testing.oracle import oracle_mask

    cfg = load_grammar(args.grammar, implicit_ws=args.implicit_ws)
    vocab = _load_vocab(args)
    ids, eos = oracle_mask(cfg, vocab, args.text, bound=args.bound)
    ids = sorted(ids)
    _emit(args, {"allowed": [vocab.tokens[i] for i in ids], "ids": ids, "eos": eos},
          [f"{i}\t{vocab.tokens[i]!r}" for i in ids] + ([f"{vocab.eos_id}\tEOS"] if eos else []))
    return 0


def _percentile(xs, q) -> float:
    return float(np.percentile(xs, q)) if xs else 0.0


def run_bench(art, provider_factory, args) -> dict:
    """Warmup (training speculation), then measured repetitions and a baseline."""
    table = SpeculationTable(args.speculate, args.spec_threshold) if args.speculate else None
    mc = MaskConfig(parse_k(args.k), args.opportunistic)
    provider = provider_factory()

    def opts(rep, frozen, unconstrained=False):
        o = _options(args, table, [])
        o.seed = args.seed + rep
        o.freeze_speculation = frozen
        o.unconstrained = unconstrained
        return o

    for rep in range(args.warmup):
        constrained_decode(provider, DecodeSession(art), mc, opts(rep, False))
    runs = []
    online = []
    for rep in range(args.repetitions):
        sess = DecodeSession(art)
        res = constrained_decode(provider, sess, mc, opts(args.warmup + rep, True))
        runs.append(res)
        if args.compare_online:
            online.extend(_time_online(art, res.tokens, mc, args.compare_online))
    base = [constrained_decode(provider, DecodeSession(art), mc, opts(rep, True, unconstrained=True))
            for rep in range(args.repetitions)]
    tokens = sum(len(r.tokens) for r in runs)
    seconds = sum(r.seconds for r in runs)
    base_tps = sum(len(r.tokens) for r in base) / max(1e-12, sum(r.seconds for r in base))
    masks = [m for r in runs for m in r.mask_seconds]
    tps = tokens / seconds if seconds else 0.0
    report = {
        "repetitions": args.repetitions,
        "warmup": args.warmup,
        "speculate": args.speculate,
        "mask_mode": args.mask_mode,
        "tokens": tokens,
        "tokens_per_second": tps,
        "mask_p50_ms": _percentile(masks, 50) * 1e3,
        "mask_p95_ms": _percentile(masks, 95) * 1e3,
        "mask_steps": len(masks),
        "intervention_rate": sum(r.interventions for r in runs) / max(1, tokens),
        "speculation_acceptance_rate": (sum(r.accepted for r in runs) / max(1, sum(r.proposed for r in runs))),
        "provider_calls": sum(r.provider_calls for r in runs),
        "unconstrained_tokens_per_second": base_tps,
        "relative_throughput": tps / base_tps if base_tps else 0.0,
        "completed": sum(r.finished for r in runs),
    }
    if args.compare_online:
        report["online_mask_p50_ms"] = _percentile(online, 50) * 1e3
        report["online_mask_steps"] = len(online)
        report["tree_vs_online_p50_ratio"] = (report["mask_p50_ms"] / report["online_mask_p50_ms"]
                                              if online else 0.0)
    return report


def _time_online(art, tokens, mc, every: int) -> list[float]:
    """Time the tree-free baseline mask at every ``every``-th step of a trace."""
    out = []
    sess = DecodeSession(art)
    for i, tok in enumerate(tokens):
        if tok == sess.eos_id:
            break
        if i % every == 0:
            t0 = time.perf_counter()
            sess.online_mask(mc)
            out.append(time.perf_counter() - t0)
        sess.update(tok)
    return out


def cmd_bench(args) -> int:
    art = _artifact(args)
    art.build_all()
    report = run_bench(art, lambda: make_provider(args.provider, art.vocab, seed=args.seed,
                                                   timeout=args.timeout), args)
    _emit(args, report, [f"{k}: {v}" for k, v in report.items()])
    return 0


# --- argument parsing ---------------------------------------------------------------


def _add_common(p, vocab: bool = False, artifact: bool = False) -> None:
    p.add_argument("--output", choices=["json", "text"], default="json")
    if vocab or artifact:
        p.add_argument("--vocab", help="vocabulary file")
        p.add_argument("--vocab-format", choices=["auto", "list-json", "tokenizer-json"], default="auto")
    if artifact:
        p.add_argument("--artifact", help="compiled artifact (or give --grammar and --vocab)")
        p.add_argument("--grammar")
        p.add_argument("--implicit-ws", action="store_true")


def _add_decoding(p) -> None:
    p.add_argument("--provider", required=True, help="replay:FILE | trigram:CORPUS | http:URL | random:SEED")
    p.add_argument("--k", default="inf")
    p.add_argument("--opportunistic", action="store_true")
    p.add_argument("--speculate", type=int, default=0)
    p.add_argument("--spec-threshold", type=float, default=0.8)
    p.add_argument("--freeze-spec", action="store_true")
    p.add_argument("--spec-table")
    p.add_argument("--max-tokens", type=int, default=256)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--finish", choices=["on-truncate", "never"], default="never")
    p.add_argument("--mask-mode", choices=["tree", "online-oracle"], default="tree")
    p.add_argument("--timeout", type=float, default=30.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="domino", description="Grammar-constrained decoding with subterminal trees")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="build and save an artifact")
    _add_common(p, vocab=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--implicit-ws", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("mask", help="print the mask after a text prefix")
    _add_common(p, artifact=True)
    p.add_argument("--text", default="")
    p.add_argument("--k", default="inf")
    p.add_argument("--mask-mode", choices=["tree", "online-oracle"], default="tree")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("decode", help="constrained generation")
    _add_common(p, artifact=True)
    _add_decoding(p)
    p.add_argument("--prompt-tokens")
    p.add_argument("--heal", action="store_true", help="strip the last prompt token and force its text")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("retokenize", help="model-guided tokenization of a fixed text")
    _add_common(p, vocab=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--prompt-tokens")
    p.add_argument("--target", required=True)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_retokenize)

    p = sub.add_parser("bench", help="throughput and mask latency report")
    _add_common(p, artifact=True)
    _add_decoding(p)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--compare-online", type=int, default=0, metavar="EVERY",
                   help="also time the tree-free mask at every EVERY-th measured step")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle-mask", help="reference mask from the brute-force oracle")
    _add_common(p, vocab=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--implicit-ws", action="store_true")
    p.add_argument("--text", default="")
    p.add_argument("--bound", type=int, default=64)
    p.set_defaults(func=cmd_oracle_mask)
    return ap


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("vocab",):
        if args.command in ("compile", "retokenize", "oracle-mask") and not getattr(args, name, None):
            parser.error(f"--{name} is required")
    try:
        return args.func(args)
    except CliError as e:
        if e.code == "usage":
            parser.error(str(e))
        return _fail(args, e)
    except (ArtifactError, GrammarError, VocabError, EngineError, ProviderError, RetokenizeError,
            SpeculationError, PrecomputeBudgetError, OSError, ValueError) as e:
        return _fail(args, e)


def _fail(args, e: BaseException) -> int:
    code, extra = _error_code(e)
    if getattr(args, "output", "json") == "json":
        print(json.dumps({"error": {"code": code, "message": str(e), **extra}}))
    print(f"error [{code}]: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
