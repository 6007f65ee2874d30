"""Speculative proposals on a schema-shaped JSON grammar.

Trains a trigram model on sampled documents, warms up the speculation
table, then compares provider calls and tokens against decoding without
speculation.  Outputs are identical token for token.

    python demos/speculation_bench.py
"""

from __future__ import annotations

import random

from domino import fixture_path
from domino.engine import DecodeOptions, DecodeSession, MaskConfig, constrained_decode
from domino.grammar import load_grammar
from domino.provider import TrigramProvider
from domino.speculate import SpeculationTable
from domino.testing.sampling import DerivationSampler, synthetic_vocab
from domino.treegen import compile_artifact


def main(name: str = "gsm8k_json", runs: int = 5):
    cfg = load_grammar(fixture_path("grammars", f"{name}.gbnf"))
    vocab = synthetic_vocab(cfg, 200, seed=0)
    art = compile_artifact(cfg, vocab)
    rng = random.Random(0)
    sampler = DerivationSampler(cfg, max_depth=6)
    docs = [sampler.sample(rng) for _ in range(300)]
    provider = TrigramProvider(docs, vocab)

    table = SpeculationTable(s=10, threshold=0.8)
    for _ in range(10):
        constrained_decode(provider, DecodeSession(art), MaskConfig(),
                           DecodeOptions(max_tokens=200, speculation=table))

    plain_calls = spec_calls = 0
    for seed in range(runs):
        opts = dict(max_tokens=200, temperature=0.3, seed=seed)
        plain = constrained_decode(provider, DecodeSession(art), MaskConfig(), DecodeOptions(**opts))
        fast = constrained_decode(provider, DecodeSession(art), MaskConfig(),
                                  DecodeOptions(speculation=table, freeze_speculation=True, **opts))
        assert plain.tokens == fast.tokens
        plain_calls += plain.provider_calls
        spec_calls += fast.provider_calls
        print(f"seed {seed}: {len(fast.tokens)} tokens, calls {plain.provider_calls} -> {fast.provider_calls}, "
              f"acceptance {fast.acceptance_rate:.2f}")
    print(f"total provider calls {plain_calls} -> {spec_calls}")
    print("sample output:", fast.text[:160])


if __name__ == "__main__":
    main()
