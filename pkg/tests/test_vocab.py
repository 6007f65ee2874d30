from __future__ import annotations

import json

import pytest
from _support import FIG2_TOKENS, fig2_vocab, grammar, token_id
from hypothesis import given
from hypothesis import strategies as st

from domino.testing.oracle import oracle_member
from domino.testing.sampling import synthetic_vocab
from domino.vocab import Vocabulary, VocabError, detokenize, load_vocab


def test_fig2_vocabulary():
    v = fig2_vocab()
    assert list(v.tokens) == FIG2_TOKENS
    assert v.size == 9 and v.eos_id == 9 and v.mask_size == 10
    assert v.display(v.eos_id) == "EOS" and v.text(v.eos_id) == ""


def test_detokenize_examples():
    v = fig2_vocab()
    ids = [token_id(v, t) for t in ["(", "12", "+1", "2", ")"]]
    assert detokenize(v, ids) == "(12+12)"
    assert oracle_member(grammar("fig2"), detokenize(v, ids))
    assert detokenize(v, []) == ""
    assert detokenize(v, [v.eos_id]) == ""
    with pytest.raises(VocabError):
        detokenize(v, [42])


@given(st.lists(st.integers(0, 8), max_size=8), st.lists(st.integers(0, 8), max_size=8))
def test_detokenize_is_a_homomorphism(a, b):
    v = fig2_vocab()
    assert detokenize(v, a + b) == detokenize(v, a) + detokenize(v, b)


def test_empty_vocab_is_rejected(tmp_path):
    p = tmp_path / "v.json"
    p.write_text("[]")
    with pytest.raises(VocabError, match="non-empty"):
        load_vocab(p)
    with pytest.raises(VocabError):
        Vocabulary.from_tokens([])
    p.write_text("[1, 2")
    with pytest.raises(VocabError):
        load_vocab(p)
    p.write_text('{"no": "model"}')
    with pytest.raises(VocabError):
        load_vocab(p)


def test_byte_level_tokenizer_json(tmp_path):
    data = {
        "model": {"type": "BPE", "vocab": {"a": 0, "Ġb": 1, "Ċ": 2, "âĢ": 3, "</s>": 4}},
        "added_tokens": [{"id": 4, "content": "</s>", "special": True}],
    }
    p = tmp_path / "tok.json"
    p.write_text(json.dumps(data))
    v = load_vocab(p)
    assert v.tokens == ("a", " b", "\n", None, None)


def test_sentencepiece_tokenizer_json(tmp_path):
    data = {"model": {"type": "Unigram", "vocab": [["<unk>", 0.0], ["▁hi", -1.0], ["<0x0A>", -2.0], ["<0xE2>", -3.0]]},
            "added_tokens": [{"id": 0, "content": "<unk>", "special": True}]}
    p = tmp_path / "sp.json"
    p.write_text(json.dumps(data))
    assert load_vocab(p).tokens == (None, " hi", "\n", None)


def test_fingerprint_is_stable():
    a = synthetic_vocab(grammar("json"), 300, seed=4)
    b = synthetic_vocab(grammar("json"), 300, seed=4)
    assert a.fingerprint == b.fingerprint and a.tokens == b.tokens
    assert a.fingerprint != synthetic_vocab(grammar("json"), 300, seed=5).fingerprint
    assert len(a.tokens) == 300


def test_list_json_round_trip(tmp_path):
    v = fig2_vocab()
    p = tmp_path / "v.json"
    p.write_text(json.dumps(v.to_list()))
    assert load_vocab(p, format="list-json") == v
    with pytest.raises(VocabError):
        load_vocab(p, format="nope")
