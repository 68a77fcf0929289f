import csv
import json
import subprocess
import sys

import pytest

from zsdet.cli import main

SMALL = ["--data.n_train_images", "15", "--data.n_test_images", "5", "--trainer.epochs", "2"]


def run(tmp_path, *args):
    return main([args[0], "--data-dir", str(tmp_path / "d"), "--run-dir", str(tmp_path / "r"),
                 *SMALL, *args[1:]])


def test_full_pipeline(tmp_path, capsys):
    assert run(tmp_path, "gen-data") == 0
    assert (tmp_path / "d" / "test_gzsd.jsonl").exists()
    assert run(tmp_path, "train") == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["steps"] > 0
    assert (tmp_path / "r" / "train_log.jsonl").exists()
    assert run(tmp_path, "eval", "--mode", "gzsd") == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["harmonic_mean"]) == {"0.5"}
    assert (tmp_path / "r" / "report_gzsd.csv").exists()


def test_gen_data_refuses_overwrite(tmp_path, capsys):
    assert run(tmp_path, "gen-data") == 0
    before = (tmp_path / "d" / "train.jsonl").read_bytes()
    assert run(tmp_path, "gen-data", "--data.seed", "5") == 2
    assert "force" in capsys.readouterr().err
    assert (tmp_path / "d" / "train.jsonl").read_bytes() == before
    assert run(tmp_path, "gen-data", "--data.seed", "5", "--force") == 0
    assert (tmp_path / "d" / "train.jsonl").read_bytes() != before


def test_gen_data_rejects_no_unseen_classes(tmp_path, capsys):
    assert run(tmp_path, "gen-data", "--data.n_u", "0") == 2
    assert "unseen" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trainer": {"epochs": 1}, "data": {"n_train_images": 10}}))
    assert main(["gen-data", "--config", str(cfg), "--data-dir", str(tmp_path / "d"),
                 "--set", "data.n_train_images=4"]) == 0
    lines = (tmp_path / "d" / "train.jsonl").read_text().splitlines()
    assert len(lines) == 4
    saved = json.loads((tmp_path / "d" / "config.json").read_text())
    assert saved["trainer"]["epochs"] == 1


def test_unknown_key_and_missing_data_fail(tmp_path, capsys):
    assert run(tmp_path, "train", "--set", "model.nope=1") == 2
    assert run(tmp_path, "train") == 2
    assert "gen-data" in capsys.readouterr().err


def test_eval_without_checkpoint_fails(tmp_path):
    assert run(tmp_path, "gen-data") == 0
    assert run(tmp_path, "eval", "--mode", "zsd") == 2


def test_sweep_writes_one_row_per_value(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run(tmp_path, "sweep", "--parameter", "beta", "--values", "0,0.5", "--out", str(out)) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["beta"] for r in rows] == ["0.0", "0.5"]
    assert run(tmp_path, "sweep", "--parameter", "beta", "--values", "", "--out", str(out)) == 2


def test_inspect_sim_dumps_matrix(tmp_path, capsys):
    assert main(["inspect-sim", "--data-dir", str(tmp_path / "nothing")]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["unseen"] == ["car", "dog", "sofa", "train"]
    assert d["rows"]["dog"]["dog"] == 1.0
    assert sum(d["rows"]["cat"].values()) == pytest.approx(1.0)


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "zsdet", "inspect-sim", "--data.n_u", "2", "--data.n_s", "3"],
                        capture_output=True, text=True, cwd=tmp_path)
    assert ok.returncode == 0 and "unseen_01" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "zsdet", "train", "--data-dir", str(tmp_path / "none")],
                         capture_output=True, text=True, cwd=tmp_path)
    assert bad.returncode != 0
