import json

import pytest

from infopg.harness.cli import main, parse_seed_range
from infopg.errors import ConfigError

CFG = "[env]\nname = pistonline\nmax_cycles = 15\n[algo]\nname = adv_infopg\n[train]\nepochs = 2\nbatch_size = 2\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CFG)
    return p


def test_train_then_eval(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg_file), "--seed", "3", "--out", str(out), "--quiet"]) == 0
    assert (out / "metrics.jsonl").exists() and (out / "checkpoint.npz").exists()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--config", str(cfg_file), "--episodes", "4"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["episodes"] == 4 and 0.0 <= summary["solve_rate"] <= 1.0


def test_train_refuses_existing_out(tmp_path, cfg_file):
    out = tmp_path / "out"
    args = ["train", "--config", str(cfg_file), "--out", str(out), "--quiet"]
    assert main(args) == 0
    assert main(args) == 1
    assert main(args + ["--force"]) == 0


def test_train_identical_bytes(tmp_path, cfg_file):
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg_file), "--seed", "4", "--out", str(tmp_path / d), "--quiet"]) == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_usage_and_config_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["train", "--config", "x.cfg"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("[env]\nname = pistonline\n[algo]\nname = infopg\nk = -1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 5" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 1


def test_eval_errors(tmp_path, cfg_file):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"), "--config", str(cfg_file)]) == 1
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"junk")
    assert main(["eval", "--checkpoint", str(junk), "--config", str(cfg_file)]) == 2


def test_mi_audit(tmp_path, capsys):
    csv = tmp_path / "bounds.csv"
    assert main(["mi-audit", "--trials", "200", "--csv", str(csv)]) == 0
    out = capsys.readouterr().out
    assert "sandwich      PASS" in out and "chain oracle  PASS" in out
    assert len(csv.read_text().splitlines()) > 1


def test_grad_check(capsys):
    assert main(["grad-check", "--trials", "5"]) == 0
    assert "grad-check PASS" in capsys.readouterr().out


def test_sweep(tmp_path, capsys):
    configs = tmp_path / "configs"
    configs.mkdir()
    (configs / "a.cfg").write_text(CFG)
    (configs / "b.cfg").write_text(CFG.replace("adv_infopg", "nc_a2c"))
    out = tmp_path / "out"
    assert main(["sweep", "--configs", str(configs), "--seeds", "0..1", "--out", str(out)]) == 0
    for name in ("a", "b"):
        for s in (0, 1):
            assert (out / name / f"seed{s}" / "metrics.jsonl").exists()
    assert main(["sweep", "--configs", str(tmp_path / "empty"), "--seeds", "0..1", "--out", str(out)]) == 1
    assert main(["sweep", "--configs", str(configs), "--seeds", "3..1", "--out", str(out)]) == 1


def test_parse_seed_range():
    assert parse_seed_range("2..4") == [2, 3, 4]
    with pytest.raises(ConfigError):
        parse_seed_range("2-4")
