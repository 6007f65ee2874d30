"""Arithmetic-grammar walkthrough: the tree at a mid-integer state and the
masks after the prefix ``(12`` for several lookahead depths.

    python demos/fig2_walkthrough.py
"""

from __future__ import annotations

import numpy as np

from domino import fixture_path
from domino.engine import INF, DecodeSession, MaskConfig
from domino.grammar import load_grammar
from domino.treegen import Kind, TreeKey, compile_artifact
from domino.vocab import load_vocab


def show_tree(tree, names, vocab, node=0, indent=""):
    for c in tree.children[node]:
        t, kind, _ = tree.edge(c)
        toks = tree.tokens[c]
        held = ", ".join(vocab.display(int(i)) for i in toks) if toks is not None else ""
        print(f"{indent}{Kind(kind).label}({names[t]})" + (f"  <- {held}" if held else ""))
        show_tree(tree, names, vocab, c, indent + "    ")


def main():
    cfg = load_grammar(fixture_path("grammars", "fig2.gbnf"), implicit_ws=True)
    vocab = load_vocab(fixture_path("vocab", "fig2.json"))
    art = compile_artifact(cfg, vocab)
    print(f"{len(art.keys)} tree keys, {art.stats()['nodes']} nodes")

    t_int = cfg.terminal_id("int")
    dfa = art.scanner.dfa(t_int)
    key = TreeKey(t_int, dfa.walk(dfa.start, "1"))
    print("\ntree while reading an integer:")
    show_tree(art.tree(art.key_id(key)), art.scanner.names, vocab)

    sess = DecodeSession(art)
    sess.feed_text("(12")
    print("\nmasks after '(12':")
    for k in (0, 1, 2, INF):
        mask = sess.compute_mask(MaskConfig(k=k))
        allowed = [vocab.display(int(i)) for i in np.flatnonzero(mask)]
        print(f"  k={k}: {allowed}")


if __name__ == "__main__":
    main()
