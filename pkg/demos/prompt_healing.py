"""Prompt healing: the last prompt token is removed and its text becomes a
forced prefix of the constrained output.

    python demos/prompt_healing.py
"""

from __future__ import annotations

import numpy as np

from domino.engine import DecodeSession, MaskConfig, heal_prompt
from domino.grammar import parse_grammar
from domino.treegen import compile_artifact
from domino.vocab import Vocabulary

GRAMMAR = 'answer ::= " "? /"[a-z ]*"/'


def main():
    cfg = parse_grammar(GRAMMAR)
    vocab = Vocabulary.from_tokens(["Name:", ' "', '"', "bob", " ", "b", "ob"])
    prompt = [0, 1]  # 'Name:' followed by the bridge token ' "'
    shortened, healed = heal_prompt(prompt, cfg, vocab)
    print("prompt kept:", [vocab.tokens[t] for t in shortened])
    print("forced prefix:", repr(healed.forced_prefix))
    sess = DecodeSession(compile_artifact(healed, vocab))
    for step, choice in enumerate([' "', "bob", '"', "EOS"]):
        mask = sess.compute_mask(MaskConfig())
        allowed = [vocab.display(int(i)) for i in np.flatnonzero(mask)]
        print(f"step {step}: allowed {allowed}, taking {choice!r}")
        sess.update(vocab.eos_id if choice == "EOS" else vocab.tokens.index(choice))
    print("text so far:", repr(sess.emitted_text))


if __name__ == "__main__":
    main()
