import hashlib
import json

import pytest

from modeswitch import pipeline as pl
from modeswitch.cli import main
from modeswitch.config import load_config


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_verify_mdp(capsys):
    assert main(["verify-mdp"]) == 0
    out = capsys.readouterr().out
    assert "U* (optimal switching, DP) = 10" in out
    assert "fixed mode values (alpha=1.8, alpha=0.2): 0, 0" in out
    assert "[FAIL]" not in out


def test_collect_is_deterministic(tmp_path, capsys):
    paths = [tmp_path / f"d{k}.bin" for k in range(3)]
    for p, seed in zip(paths, (5, 5, 6)):
        argv = ["collect", "--mode", "timid", "--scenario", "merge", "--episodes", "3", "--seed", str(seed),
                "--out", str(p)]
        assert main(argv) == 0
    assert sha(paths[0]) == sha(paths[1]) != sha(paths[2])
    assert "3 episodes" in capsys.readouterr().out


@pytest.fixture(scope="module")
def saved_nets(small_models, tmp_path_factory):
    d = tmp_path_factory.mktemp("nets")
    cfg = load_config()
    pl.save_net(small_models.low_net, d / "low.bin", cfg, role="low-level")
    pl.save_net(small_models.il_net, d / "il.bin", cfg, role="il-baseline")
    return d


def test_eval_prints_summary(saved_nets, tmp_path, capsys):
    out = tmp_path / "m.json"
    argv = ["eval", "--policy", "timid", "--scenario", "cross-traffic", "--runs", "20", "--setting", "difficult",
            "--low-net", str(saved_nets / "low.bin"), "--out", str(out)]
    assert main(argv) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads(out.read_text())
    assert doc["runs"] == 20 and doc["n_difficult"] == 20 and doc["collision_rate"] < 0.05


def test_traces_and_frontier(saved_nets, tmp_path, capsys):
    low = str(saved_nets / "low.bin")
    assert main(["traces", "--policy", "random", "--scenario", "wrong-direction", "--seeds", "1,2",
                 "--low-net", low, "--out", str(tmp_path / "tr")]) == 0
    assert (tmp_path / "tr" / "positions.csv").exists()
    assert main(["frontier", "--policy", "aggressive", "--scenario", "cross-traffic", "--runs", "5",
                 "--limits", "0:10:5", "--low-net", low]) == 0
    rows = [ln.split() for ln in capsys.readouterr().out.splitlines() if ln.strip().endswith(tuple("0123456789"))
            and " s " in ln]
    assert [float(r[0]) for r in rows] == [0.0, 5.0, 10.0]


def test_hash_mismatch_exits_3(saved_nets, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"seed": 99}')
    argv = ["--config", str(cfg), "eval", "--policy", "timid", "--scenario", "merge", "--runs", "1",
            "--low-net", str(saved_nets / "low.bin")]
    assert main(argv) == 3
    assert "artifact mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["eval", "--scenario", "merge"],
                                  ["eval", "--policy", "timid", "--scenario", "merge"],
                                  ["frontier", "--policy", "timid", "--scenario", "merge", "--limits", "1:5",
                                   "--low-net", "x"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_config_error_exits_4(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"t_s": 0}')
    assert main(["--config", str(cfg), "verify-mdp"]) == 4
    assert "t_s: must satisfy t_s >= 1" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["eval", "--policy", "timid", "--scenario", "merge", "--low-net", str(tmp_path / "no.bin")]) == 1
    assert capsys.readouterr().err.startswith("modeswitch: error:")
