from __future__ import annotations

import pytest
from _support import artifact, fig2_session, sample_words, token_id

from domino.engine import DecodeOptions, DecodeSession, MaskConfig, constrained_decode
from domino.provider import ReplayProvider, TrigramProvider
from domino.speculate import SpeculationError, SpeculationTable, verify_and_accept

K0 = (("t", 0), 1)


def test_counts_are_plain_ratios():
    table = SpeculationTable()
    table.record(K0, 7)
    assert table.probability(K0, 7) == 1.0
    for _ in range(8):
        table.record(K0, 7)
    table.record(K0, 3)
    assert table.reach(K0) == 10
    assert table.probability(K0, 7) == pytest.approx(0.9)
    assert table.best(K0) == (7, pytest.approx(0.9))
    assert table.reach(("x", 2)) == 0 and table.best(("x", 2)) is None


def test_ties_go_to_the_lowest_id():
    table = SpeculationTable()
    for t in (5, 2, 5, 2):
        table.record(K0, t)
    assert table.best(K0)[0] == 2


def _session_and_text_ids():
    sess = fig2_session()
    v = sess.vocab
    return sess, v, (lambda *ts: [token_id(v, t) for t in ts])


def test_below_threshold_proposes_nothing():
    sess, v, ids = _session_and_text_ids()
    table = SpeculationTable(threshold=0.8)
    key = sess.speculation_key()
    for t in ids("(", "(", "(", "1"):
        table.record(key, t)
    assert table.propose(sess) == []
    table.record(key, ids("(")[0])
    assert table.propose(sess) == ids("(")


def test_chain_stops_at_unseen_key():
    sess, v, ids = _session_and_text_ids()
    table = SpeculationTable(s=10)
    sim = sess.clone()
    for t in ids("(", "1", "+"):
        table.record(sim.speculation_key(), t)
        sim.update(t)
    assert len(table.counts) == 3
    assert table.reach(sim.speculation_key()) == 0
    assert table.propose(sess) == ids("(", "1", "+")
    assert SpeculationTable(s=2).propose(sess) == []
    short = SpeculationTable(s=2)
    short.counts = table.counts
    assert short.propose(sess) == ids("(", "1")


def test_proposals_are_always_legal():
    sess, v, ids = _session_and_text_ids()
    table = SpeculationTable()
    table.record(sess.speculation_key(), ids(")")[0])
    assert table.propose(sess) == []


def test_verify_accepts_matching_prefix_in_one_call():
    sess, v, ids = _session_and_text_ids()
    script = ids("(", "12", ")")
    prov = ReplayProvider.preferring(script, v.mask_size)

    def decide(vec, i, sim):
        return int(vec.argmax()), False, -1

    accepted, decisions = verify_and_accept(prov, sess, script, decide, [])
    assert accepted == 3 and prov.calls == 1
    assert [d[0] for d in decisions] == script + [v.eos_id]
    accepted, decisions = verify_and_accept(prov, sess, ids("1", "+"), decide, [])
    assert accepted == 0 and [d[0] for d in decisions] == ids("(")
    assert sess.emitted == []


def test_schema_field_names_are_learned():
    art = artifact("template")
    prov = TrigramProvider(sample_words("template", 100, seed=1), art.vocab)
    table = SpeculationTable(s=10)
    for seed in range(10):
        constrained_decode(prov, DecodeSession(art), MaskConfig(),
                           DecodeOptions(max_tokens=80, temperature=1.0, seed=seed, speculation=table))
    sess = DecodeSession(art)
    sess.update(token_id(art.vocab, "{"))
    text = "".join(art.vocab.tokens[t] for t in table.propose(sess))
    assert text.startswith('"id":')


def test_persistence_round_trip(tmp_path):
    table = SpeculationTable(s=4, threshold=0.5)
    table.record(((1, 2), 99), 3)
    path = tmp_path / "spec.json"
    table.save(path, b"g" * 16, b"v" * 16)
    again = SpeculationTable.load(path, b"g" * 16, b"v" * 16)
    assert again.counts == table.counts and again.s == 4 and again.threshold == 0.5
    with pytest.raises(SpeculationError):
        SpeculationTable.load(path, b"x" * 16, b"v" * 16)
    path.write_text("{nope")
    with pytest.raises(SpeculationError):
        SpeculationTable.load(path)


def test_bad_parameters():
    with pytest.raises(SpeculationError):
        SpeculationTable(threshold=0)
    with pytest.raises(SpeculationError):
        SpeculationTable(s=-1)
