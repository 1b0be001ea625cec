import csv
import json
import subprocess
import sys

import pytest

from gpscl.cli import main, resolve

SMALL = ["--synth", "cycles_vs_cliques", "--per-class", "4", "--hidden", "8", "--batch", "4"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def trained(tmp_path, capsys):
    code, out, _ = run(capsys, "pretrain", *SMALL, "--epochs", "2", "--out", str(tmp_path / "run"))
    assert code == 0
    return tmp_path, json.loads(out)


def test_pretrain_writes_metrics(tmp_path, capsys):
    code, out, _ = run(capsys, "pretrain", *SMALL, "--epochs", "5", "--out", str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert set(json.loads(lines[0])) == {"epoch", "L_sl", "L_cl", "wall_ms"}
    assert payload["epochs"] == 5


def test_missing_dataset_dir(tmp_path, capsys):
    code, _, err = run(capsys, "pretrain", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))
    assert code == 1
    assert err.startswith("error: FileNotFoundError:")


def test_ablation_check(tmp_path, capsys):
    code, _, err = run(capsys, "pretrain", *SMALL, "--ablation", "no_weak", "--ablation-check", "--out", str(tmp_path))
    assert code == 1 and "ConfigError" in err
    code, _, _ = run(
        capsys, "pretrain", *SMALL, "--epochs", "1", "--ablation", "no_weak", "--ablation-check", "--no-cl", "--out", str(tmp_path)
    )
    assert code == 0


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "pretrain", "--bogus")
    assert code == 1 and err.startswith("error: ConfigError")


def test_embed_rows_and_determinism(trained, capsys):
    tmp, payload = trained
    ckpt = payload["checkpoint"]
    for name in ("a.tsv", "b.tsv"):
        code, out, _ = run(capsys, "embed", "--checkpoint", ckpt, *SMALL[:4], "--out", str(tmp / name))
        assert code == 0
    assert json.loads(out)["rows"] == 8
    assert (tmp / "a.tsv").read_bytes() == (tmp / "b.tsv").read_bytes()
    assert len((tmp / "a.tsv").read_text().splitlines()) == 9


def test_embed_dimension_mismatch(trained, capsys):
    tmp, payload = trained
    code, _, err = run(
        capsys, "embed", "--checkpoint", payload["checkpoint"], *SMALL[:4], "--max-degree", "3", "--out", str(tmp / "x.tsv")
    )
    assert code == 1 and "ConfigError" in err


def test_probe_and_cluster_json(tmp_path, capsys):
    lines = ["20\t2"]
    for i in range(20):
        sign = 1 if i < 10 else -1
        lines.append(f"{5.0 * sign + 0.01 * i}\t{5.0 * sign - 0.01 * i}\t{int(i >= 10)}")
    path = tmp_path / "e.tsv"
    path.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "probe", "--embeddings", str(path), "--folds", "5", "--runs", "2")
    assert code == 0
    report = json.loads(out)
    assert report["mean"] == 1.0 and report["runs"] == 2
    code, out, _ = run(capsys, "cluster", "--embeddings", str(path))
    assert code == 0
    assert json.loads(out) == {"acc": 1.0, "ari": 1.0, "nmi": pytest.approx(1.0)}


def test_probe_malformed(tmp_path, capsys):
    path = tmp_path / "bad.tsv"
    path.write_text("3\t2\n1.0\t2.0\t0\n")
    code, _, err = run(capsys, "probe", "--embeddings", str(path))
    assert code == 1 and "FormatError" in err


def test_sweep_grid(tmp_path, capsys):
    argv = [*SMALL, "--epochs", "1", "--folds", "2", "--runs", "1", "--rho-weak-values", "0.8,0.9",
            "--rho-strong-values", "0.3,0.4", "--out", str(tmp_path)]
    code, out, _ = run(capsys, "sweep", *argv)
    assert code == 0 and json.loads(out)["cells"] == 4
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert [(float(r["rho_weak"]), float(r["rho_strong"])) for r in rows] == [(0.8, 0.3), (0.8, 0.4), (0.9, 0.3), (0.9, 0.4)]
    assert all(0.0 <= float(r["probe_mean"]) <= 1.0 for r in rows)
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert text[0] == "rho_weak,rho_strong,batch_size,probe_mean,probe_std"


def test_sweep_skips_invalid_cell(tmp_path, capsys):
    argv = [*SMALL, "--epochs", "1", "--folds", "2", "--runs", "1", "--rho-weak-values", "0.4,0.9",
            "--rho-strong-values", "0.4", "--out", str(tmp_path)]
    code, out, err = run(capsys, "sweep", *argv)
    assert code == 0 and json.loads(out)["cells"] == 1
    assert err.startswith("warning: skipping cell rho_weak=0.4")
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 2


def test_batch_grid(tmp_path, capsys):
    argv = [*SMALL, "--epochs", "1", "--folds", "2", "--runs", "1", "--grid", "batch", "--batch-values", "2,4",
            "--out", str(tmp_path)]
    code, _, _ = run(capsys, "sweep", *argv)
    assert code == 0
    with open(tmp_path / "sweep.csv") as fh:
        assert [int(r["batch_size"]) for r in csv.DictReader(fh)] == [2, 4]


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nepochs=7\nrho-weak = 0.8\nlr=0.5\n")
    _, opts = resolve(["pretrain", "--config", str(cfg), "--epochs", "3"])
    assert opts["epochs"] == 3
    assert opts["rho_weak"] == 0.8
    assert opts["lr"] == 0.5
    assert opts["gamma"] == 0.99


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("nonsense=1\n")
    code, _, err = run(capsys, "pretrain", "--config", str(cfg))
    assert code == 1 and "FormatError" in err
    code, _, err = run(capsys, "pretrain", "--config", str(tmp_path / "missing.txt"))
    assert code == 1 and "FileNotFoundError" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "gpscl", "pretrain", *SMALL, "--epochs", "1", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["epochs"] == 1


def test_pretrain_default_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, out, _ = run(capsys, "pretrain", "--synth", "cycles_vs_cliques", "--epochs", "5", "--seed", "7", "--hidden", "16")
    assert code == 0
    assert len((tmp_path / "gpscl_run" / "metrics.jsonl").read_text().splitlines()) == 5
    assert (tmp_path / "gpscl_run" / "checkpoint.gps").is_file()
