import json

from teamplan.cli import main


def test_run_then_report_and_replay(tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["run", "--tasks", "Task1", "--trials", "1", "--no-failures", "--results-dir", str(out)]) == 0
    table = capsys.readouterr().out
    assert "scripted (full)" in table and "1.000     7.0" in table

    assert main(["report", str(tmp_path), "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["tasks"][0]["AS"] == 7.0

    assert main(["replay", str(out / "Task1_trial0.json")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["matches_log"] and summary["steps"] == 7


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("tasks: [Task2]\nbackend: wait\ntrials: 3\nformat: json\n")
    assert main(["run", "--config", str(cfg), "--trials", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["backend"] == "wait" and rep["tasks"][0]["trials"] == 1 and rep["tasks"][0]["task"] == "Task2"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("colour: blue\n")
    try:
        main(["run", "--config", str(cfg)])
    except SystemExit as exc:
        assert "colour" in str(exc)
    else:
        raise AssertionError("expected an error")


def test_live_backend_without_env(monkeypatch, capsys):
    monkeypatch.delenv("TEAMPLAN_API_URL", raising=False)
    monkeypatch.delenv("TEAMPLAN_API_KEY", raising=False)
    assert main(["run", "--tasks", "Task1", "--backend", "http", "--trials", "1"]) == 2
    assert "TEAMPLAN_API_URL" in capsys.readouterr().err


def test_replay_detects_tampering(tmp_path, capsys):
    out = tmp_path / "res"
    main(["run", "--tasks", "Task1", "--trials", "1", "--no-failures", "--results-dir", str(out)])
    log = json.loads((out / "Task1_trial0.json").read_text())
    log["seed"] += 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(log))
    capsys.readouterr()
    assert main(["replay", str(bad)]) == 1
    assert "divergence" in capsys.readouterr().err


def test_validate(capsys):
    assert main(["validate"]) == 0
    assert capsys.readouterr().out.strip().endswith("ok")
