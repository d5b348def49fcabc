import subprocess
import sys

import pytest

from tgn.cli import generate_instances, main
from tgn.dataio import read_dataset
from tgn.engine import read_trace_csv
from tgn.oracles import dpll_solve


def test_validate_spec_golden(capsys):
    assert main(["validate-spec", "neurosat"]) == 0
    out = capsys.readouterr().out
    assert "D(L)=128" in out and "D(C)=64" in out


def test_validate_spec_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"type_sizes": {"V": 2}, "matrices": {}, "messages": {}, "updates": {"V": [{"mat": "XY", "var": "V"}]}}')
    assert main(["validate-spec", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "XY" in err and len(err.strip().splitlines()) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["validate-spec", str(broken)]) == 1


def test_generate_sat(tmp_path, capsys):
    assert main(["generate", "sat", "--n", "8", "--count", "10", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
    task, insts = read_dataset(tmp_path / "d")
    assert task == "sat" and len(insts) == 20
    assert all(dpll_solve(c)[0] == c.label for c in insts)
    assert all(c.n_vars == 8 for c in insts)


def test_generate_is_seeded():
    assert generate_instances("kcolor", 3, 5, 6, 9) == generate_instances("kcolor", 3, 5, 6, 9)


def test_train_eval_trace(tmp_path, capsys):
    d = str(tmp_path)
    assert main(["generate", "kcolor", "--n-min", "5", "--n-max", "7", "--count", "4", "--out", d + "/tr"]) == 0
    assert main(["generate", "kcolor", "--n", "6", "--count", "2", "--seed", "9", "--out", d + "/te"]) == 0
    rc = main(
        ["train", "kcolor", "--train", d + "/tr", "--test", d + "/te", "--epochs", "2", "--d", "4", "--t-max", "2",
         "--checkpoint", d + "/ck.npz", "--metrics", d + "/m.csv"]
    )
    assert rc == 0
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 5
    assert main(["eval", d + "/ck.npz", d + "/te"]) == 0
    assert "accuracy" in capsys.readouterr().out
    assert main(["trace", d + "/ck.npz", d + "/te", "--index", "1", "--t-max", "3", "--out", d + "/t.csv"]) == 0
    with open(d + "/t.csv") as fh:
        assert len(read_trace_csv(fh)) == 4


def test_train_missing_dataset(tmp_path, capsys):
    rc = main(["train", "sat", "--train", str(tmp_path / "nope"), "--checkpoint", str(tmp_path / "ck.npz")])
    assert rc != 0
    assert not (tmp_path / "ck.npz").exists()
    assert "nope" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    with pytest.raises(SystemExit) as e:
        main(["generate", "sat", "--bogus"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "tgn.cli", "validate-spec", "kcolor"], capture_output=True, text=True)
    assert proc.returncode == 0 and "D(V)=128" in proc.stdout
