import subprocess
import sys

import numpy as np
import pytest

from ebgfn import checkpoint, tasks
from ebgfn.cli import run
from ebgfn.gfn import GFlowNet


def test_gen_data_ising_example(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["gen-data", "--task", "ising", "--grid-n", "3", "--sigma", "0.2", "--n", "100", "--seed", "7",
            "--burn-in", "200"]
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b)]) == 0
    lines = a.read_text().splitlines()
    assert lines[0] == "# ebgfn-dataset D=9 name=ising seed=7"
    assert len(lines[1:]) == 100 and all(len(line.split(",")) == 9 for line in lines[1:])
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_plane_and_truth(tmp_path):
    out = tmp_path / "cb.csv"
    assert run(["gen-data", "--task", "checkerboard", "--n", "50", "--out", str(out)]) == 0
    data, meta = tasks.read_dataset(out)
    assert data.shape == (50, 32) and meta["name"] == "checkerboard"
    truth = tmp_path / "J.csv"
    assert run(["gen-data", "--task", "ising", "--n", "10", "--burn-in", "5", "--out", str(tmp_path / "i.csv"),
                "--truth-j-out", str(truth)]) == 0
    J = np.loadtxt(truth, delimiter=",")
    np.testing.assert_array_equal(J, 0.25 * tasks.torus_adjacency(4))


def test_oracle_check_props(capsys):
    assert run(["oracle-check", "--suite", "props", "--d", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS ") for line in out)


def test_oracle_check_flows(capsys):
    assert run(["oracle-check", "--suite", "flows", "--d", "4", "--seed", "2"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def uniform_checkpoint(path, D):
    gfn = GFlowNet(D, (8,))
    for p in gfn.params.values():
        p[...] = 0.0
    checkpoint.save(path, gfn.state_dict())


def test_eval_uniform_nll(tmp_path, capsys):
    ckpt, data = tmp_path / "u.ckpt", tmp_path / "d.csv"
    uniform_checkpoint(ckpt, 32)
    tasks.write_dataset(data, tasks.plane_dataset("2spirals", 40, 0), "2spirals", 0)
    assert run(["eval", "--ckpt", str(ckpt), "--data", str(data), "--metric", "nll", "--M", "5"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header == "metric,value,stderr,n,M,seed"
    fields = row.split(",")
    assert fields[0] == "nll" and abs(float(fields[1]) - 22.18) < 0.01 and fields[3:5] == ["40", "5"]


def test_eval_mmd(tmp_path, capsys):
    ckpt, data = tmp_path / "u.ckpt", tmp_path / "d.csv"
    uniform_checkpoint(ckpt, 6)
    tasks.write_dataset(data, np.random.default_rng(0).integers(0, 2, (300, 6)), "uniform", 0)
    assert run(["eval", "--ckpt", str(ckpt), "--data", str(data), "--metric", "mmd-exp",
                "--reps", "3", "--n", "100"]) == 0
    fields = capsys.readouterr().out.splitlines()[1].split(",")
    assert fields[0] == "mmd-exp" and 0 <= float(fields[1]) < 0.01


def test_train_eval_sample_round_trip(tmp_path, capsys):
    data = tmp_path / "d.csv"
    run(["gen-data", "--task", "ising", "--grid-n", "2", "--sigma", "0.3", "--n", "200", "--burn-in", "50",
         "--out", str(data), "--truth-j-out", str(tmp_path / "J.csv")])
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("steps = 20\nbatch_size = 16\nalpha = 1\nenergy_model = ising\ngfn_hidden = 16\n"
                   "eval_n = 20\neval_M = 3\nk_mode = constant\n")
    out = tmp_path / "run"
    assert run(["train", "--config", str(cfg), "--data", str(data), "--val", str(data), "--out-dir", str(out)]) == 0
    assert {"log.csv", "final.ckpt", "best.ckpt"} <= {p.name for p in out.iterdir()}
    capsys.readouterr()
    assert run(["eval", "--ckpt", str(out / "final.ckpt"), "--data", str(data), "--metric", "j-rmse",
                "--truth-j", str(tmp_path / "J.csv")]) == 0
    fields = capsys.readouterr().out.splitlines()[1].split(",")
    assert fields[0] == "j-rmse" and float(fields[1]) >= 0 and fields[3] == "6"
    samples = tmp_path / "s.csv"
    assert run(["sample", "--ckpt", str(out / "final.ckpt"), "--n", "25", "--out", str(samples)]) == 0
    assert tasks.read_dataset(samples)[0].shape == (25, 4)


def test_export_plot(tmp_path):
    data = tmp_path / "d.csv"
    tasks.write_dataset(data, tasks.plane_dataset("moons", 50, 0), "moons", 0)
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("steps = 2\nbatch_size = 4\ngfn_hidden = 8\nenergy_hidden = 8\n")
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out-dir", str(tmp_path / "r")]) == 0
    out = tmp_path / "plot.csv"
    assert run(["export-plot", "--ckpt", str(tmp_path / "r" / "final.ckpt"), "--task", "moons",
                "--out", str(out), "--n", "30", "--grid", "10"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "kind,x,y,value"
    assert sum(line.startswith("sample,") for line in lines) == 30
    assert sum(line.startswith("energy,") for line in lines) == 100


def test_failure_leaves_no_partial_output(tmp_path, capsys):
    data = tmp_path / "d.csv"
    tasks.write_dataset(data, np.zeros((5, 3), np.int8), "zeros", 0)
    bad_cfg = tmp_path / "cfg.txt"
    bad_cfg.write_text("steps = 5\nbogus = 1\n")
    out = tmp_path / "run"
    assert run(["train", "--config", str(bad_cfg), "--data", str(data), "--out-dir", str(out)]) == 1
    assert not out.exists()
    err = capsys.readouterr().err.strip()
    assert err.startswith("ebgfn: error:") and "bogus" in err and "\n" not in err


def test_missing_sampler_is_reported(tmp_path, capsys):
    ckpt = tmp_path / "e.ckpt"
    from ebgfn.energy import IsingEnergy
    checkpoint.save(ckpt, IsingEnergy(3).state_dict())
    data = tmp_path / "d.csv"
    tasks.write_dataset(data, np.zeros((5, 3), np.int8), "zeros", 0)
    out = tmp_path / "s.csv"
    assert run(["sample", "--ckpt", str(ckpt), "--n", "3", "--out", str(out)]) == 1
    assert not out.exists() and "no sampler" in capsys.readouterr().err


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        run(["fly"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ebgfn", "oracle-check", "--suite", "props", "--d", "2"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and proc.stdout.startswith("PASS")
