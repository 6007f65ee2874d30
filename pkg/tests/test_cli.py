from __future__ import annotations

import json
import subprocess
import sys

import pytest
from _support import fig2_vocab, small_vocab, token_id

from domino import fixture_path
from domino.cli import main

FIG2 = str(fixture_path("grammars", "fig2.gbnf"))
FIG2_VOCAB = str(fixture_path("vocab", "fig2.json"))


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture
def fig2_artifact(tmp_path, capsys):
    path = str(tmp_path / "a.bin")
    code, out, err = _run(capsys, "compile", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--out", path)
    assert code == 0
    assert "compiled" in err
    info = json.loads(out)
    assert {"artifact", "seconds", "trees", "grammar_fingerprint", "vocab_fingerprint", "diagnostics"} <= set(info)
    return path


def test_mask_command(fig2_artifact, capsys):
    code, out, _ = _run(capsys, "mask", "--artifact", fig2_artifact, "--text", "(12", "--k", "0")
    assert code == 0
    data = json.loads(out)
    assert data["allowed"] == ["0", "1", "2", "12", ")", "+"] and data["eos"] is False
    code, out, _ = _run(capsys, "mask", "--artifact", fig2_artifact, "--text", "(12", "--k", "0",
                        "--mask-mode", "online-oracle")
    assert json.loads(out)["allowed"] == data["allowed"]
    code, out, _ = _run(capsys, "mask", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--text", "(1)", "--output", "text")
    assert code == 0 and out.splitlines()[-1] == "9\tEOS"


def test_decode_command(fig2_artifact, tmp_path, capsys):
    v = fig2_vocab()
    script = tmp_path / "trace.jsonl"
    script.write_text("".join(json.dumps({"prefer": [token_id(v, t)]}) + "\n" for t in ["(", "12", "+1", "2", ")"]))
    code, out, _ = _run(capsys, "decode", "--artifact", fig2_artifact, "--provider", f"replay:{script}",
                        "--k", "inf", "--temperature", "0")
    assert code == 0
    lines = _json_lines(out)
    steps, final = lines[:-1], lines[-1]
    assert [s["text"] for s in steps] == ["(", "12", "+1", "2", ")", "EOS"]
    assert all({"step", "token", "popcount", "intervened", "logprob"} <= set(s) for s in steps)
    assert final["final"] and final["text"] == "(12+12)" and final["in_language"] and final["finished"]


def test_decode_with_speculation_table(tmp_path, capsys):
    table = tmp_path / "spec.json"
    args = ["decode", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--provider", "random:4",
            "--speculate", "4", "--spec-table", str(table), "--max-tokens", "12", "--finish", "on-truncate",
            "--output", "text"]
    assert _run(capsys, *args)[0] == 0
    assert table.exists()
    code, out, _ = _run(capsys, *args)
    assert code == 0 and out.strip()


def test_decode_heal(tmp_path, capsys):
    v = fig2_vocab()
    prompt = tmp_path / "prompt.json"
    prompt.write_text(json.dumps([token_id(v, "(")]))
    code, out, _ = _run(capsys, "decode", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--provider", "random:1",
                        "--prompt-tokens", str(prompt), "--heal", "--max-tokens", "8", "--finish", "on-truncate")
    final = _json_lines(out)[-1]
    assert code == 0 and final["text"].startswith("(") and final["in_language"]


def test_retokenize_command(tmp_path, capsys):
    target = tmp_path / "t.txt"
    target.write_text("(12+1)")
    code, out, _ = _run(capsys, "retokenize", "--vocab", FIG2_VOCAB, "--provider", "random:0",
                        "--target", str(target))
    assert code == 0
    ids = json.loads(out)
    assert "".join(fig2_vocab().tokens[i] for i in ids) == "(12+1)"


def test_oracle_mask_command(capsys):
    code, out, _ = _run(capsys, "oracle-mask", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--text", "(12")
    assert code == 0
    assert set(json.loads(out)["allowed"]) == {"0", "1", "2", "12", "+", ")", "+1"}


def test_bench_command(tmp_path, capsys):
    corpus = tmp_path / "corpus.json"
    corpus.write_text(json.dumps(["(1+2)", "(12)", "1+(2+0)", "(1+2)"]))
    code, out, _ = _run(capsys, "bench", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--provider",
                        f"trigram:{corpus}", "--repetitions", "1", "--warmup", "0", "--speculate", "4",
                        "--max-tokens", "20", "--compare-online", "5")
    assert code == 0
    rep = json.loads(out)
    for key in ("tokens_per_second", "mask_p50_ms", "mask_p95_ms", "intervention_rate",
                "speculation_acceptance_rate", "relative_throughput", "online_mask_p50_ms"):
        assert key in rep
    assert rep["repetitions"] == 1


def test_domain_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    code, out, err = _run(capsys, "mask", "--artifact", str(bad))
    assert code == 1 and json.loads(out)["error"]["code"] == "corrupt-artifact" and "error" in err
    g = tmp_path / "g.gbnf"
    g.write_text('S ::= "a')
    code, out, _ = _run(capsys, "oracle-mask", "--grammar", str(g), "--vocab", FIG2_VOCAB)
    err = json.loads(out)["error"]
    assert code == 1 and err["line"] == 1 and err["col"] == 7
    code, out, _ = _run(capsys, "mask", "--grammar", FIG2, "--vocab", FIG2_VOCAB, "--text", ")")
    assert code == 1 and "error" in json.loads(out)


def test_fingerprint_mismatch_exit_1(fig2_artifact, tmp_path, capsys):
    other = tmp_path / "v.json"
    other.write_text(json.dumps(list(small_vocab("fig2").tokens)))
    code, out, _ = _run(capsys, "mask", "--artifact", fig2_artifact, "--vocab", str(other))
    assert code == 1 and json.loads(out)["error"]["code"] == "fingerprint-mismatch"


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["compile", "--grammar", FIG2, "--out", "x"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "domino", "oracle-mask", "--grammar", FIG2, "--vocab", FIG2_VOCAB,
                        "--text", "(", "--output", "text"], capture_output=True, text=True, env=None)
    assert r.returncode == 0 and "'('" in r.stdout
