import csv
import json

import pytest

from lattice_agreement.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


CHAIN = {"n": 3, "f": 1, "algorithm": "delta", "inputs": [["a"], ["a", "b"], ["a", "b", "c"]]}


def test_run_pass_writes_report(tmp_path):
    cfg = write(tmp_path / "c.json", CHAIN)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--trace"]) == 0
    assert json.loads((out / "report.json").read_text())["status"] == "COMPLETED"
    assert json.loads((out / "verdict.json").read_text())["passed"]
    assert (out / "trace.jsonl").read_bytes().startswith(b'{"config"')


def test_run_config_error(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**CHAIN, "n": 4, "f": 2, "inputs": [["a"]] * 4})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "ASYNC_F_TOO_LARGE" in capsys.readouterr().err


def test_run_missing_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1


def test_run_mutant_verdict_failure(tmp_path, capsys):
    cfg = write(
        tmp_path / "c.json",
        {"n": 8, "f": 0, "algorithm": "alpha", "inputs": [[f"e{i}"] for i in range(8)], "mutant": "inverted_classifier"},
    )
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "VIOLATION" in capsys.readouterr().err


def test_seed_flag_changes_random_delays(tmp_path):
    cfg = write(tmp_path / "c.json", {**CHAIN, "delay": {"kind": "random", "max_delay": 6}})
    main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--trace", "--seed", "1"])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--trace", "--seed", "2"])
    main(["run", "--config", cfg, "--out", str(tmp_path / "c"), "--trace", "--seed", "1"])
    a, b, c = ((tmp_path / d / "trace.jsonl").read_bytes() for d in "abc")
    assert a == c and a != b


def campaign(tmp_path, **kw):
    d = {"algorithm": "alpha", "seeds": {"count": 3}, "n": [2, 4], "crashes": ["none", "targeted"], **kw}
    return write(tmp_path / "camp.json", d)


def test_campaign_summary(tmp_path):
    out = tmp_path / "out"
    assert main(["campaign", "--campaign", campaign(tmp_path), "--out", str(out), "--workers", "2"]) == 0
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert len(rows) == 12 and all(r["passed"] == "True" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_passed"] and all(g["rounds_within_bound"] for g in summary["groups"])


def test_campaign_is_reproducible(tmp_path):
    path = campaign(tmp_path)
    main(["campaign", "--campaign", path, "--out", str(tmp_path / "a")])
    main(["campaign", "--campaign", path, "--out", str(tmp_path / "b"), "--workers", "3"])
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_empty_campaign(tmp_path):
    out = tmp_path / "out"
    assert main(["campaign", "--campaign", campaign(tmp_path, seeds=[]), "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["runs"] == 0


def test_campaign_failure_lists_digests(tmp_path, capsys):
    path = write(
        tmp_path / "camp.json",
        {"algorithm": "delta", "seeds": {"count": 5}, "n": [4], "f": [1], "mutant": "weak_tally",
         "delays": [{"kind": "random", "max_delay": 4}]},
    )
    code = main(["campaign", "--campaign", path, "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2 and "FAIL " in err


def test_bad_campaign(tmp_path):
    assert main(["campaign", "--campaign", write(tmp_path / "x.json", {"algorithm": "alpha", "bogus": 1})]) == 1


def recorded(tmp_path):
    cfg = write(tmp_path / "c.json", {**CHAIN, "inputs": [["a"], ["b"], ["c"]], "delay": {"kind": "random", "max_delay": 5, "seed": 4}})
    main(["run", "--config", cfg, "--out", str(tmp_path / "r"), "--trace"])
    return tmp_path / "r" / "trace.jsonl"


def test_replay_identical(tmp_path):
    assert main(["replay", "--replay", str(recorded(tmp_path))]) == 0


def test_replay_edited_delay(tmp_path, capsys):
    path = recorded(tmp_path)
    lines = path.read_bytes().splitlines(keepends=True)
    for i, raw in enumerate(lines[1:], 1):
        d = json.loads(raw)
        if d["kind"] == "send" and d["detail"]["to"] != d["actor"]:
            d["detail"]["deliver_t"] += 7
            lines[i] = json.dumps(d, sort_keys=True, separators=(",", ":")).encode() + b"\n"
            break
    path.write_bytes(b"".join(lines))
    assert main(["replay", "--replay", str(path)]) == 3
    assert "first divergent line" in capsys.readouterr().err


def test_replay_truncated(tmp_path):
    path = recorded(tmp_path)
    path.write_bytes(path.read_bytes()[:-20])
    assert main(["replay", "--replay", str(path)]) == 1


def test_generate(tmp_path):
    out = tmp_path / "cfgs"
    assert main(["generate", "--campaign", campaign(tmp_path), "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 12
    assert main(["run", "--config", str(files[0]), "--out", str(tmp_path / "o")]) == 0


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
