import glob
import json
import os

import numpy as np
import pytest

from stringavg import cli
from stringavg.experiment import (ConfigError, ExperimentConfig, batch_compare, dump_config,
                                  load_config, run_experiment)
from stringavg.linear import write_coo, write_vector


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def linear_dir(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 6))
    z = rng.normal(size=6)
    write_coo(tmp_path / "A.coo", A)
    write_vector(tmp_path / "b.txt", A @ z)
    write_vector(tmp_path / "z.txt", z)
    write_vector(tmp_path / "zero.txt", np.zeros(12))
    return tmp_path


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig("appendix", {"name": "wood", "broyden_classical": False}, E=3,
                           mode="we", tolerances=(1e-4, 1e-1), max_iters=77, lam=0.5)
    assert cfg.tolerances == (1e-1, 1e-4)
    assert cfg.label == "wood-we"
    back = load_config(write(tmp_path / "c.ini", dump_config(cfg)))
    assert back == cfg


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match=r"\[problem\]"):
        load_config(write(tmp_path / "a.ini", "[solver]\nmode = ue\n"))
    with pytest.raises(ConfigError, match="problem.kind"):
        load_config(write(tmp_path / "b.ini", "[problem]\nkind = nope\n"))
    with pytest.raises(ConfigError, match="solver.mode"):
        load_config(write(tmp_path / "c.ini", "[problem]\nkind = appendix\n[solver]\nmode = x\n"))
    with pytest.raises(ConfigError, match="lambda"):
        ExperimentConfig("appendix", {"name": "wood"}, lam=2.0)
    with pytest.raises(ConfigError):
        load_config(write(tmp_path / "d.ini", "[problem]\nkind = appendix\n[plan]\nE = four\n"))


def test_relative_paths_resolve_against_config(linear_dir):
    p = write(linear_dir / "lin.ini",
              "[problem]\nkind = linear\nmatrix = A.coo\nrhs = b.txt\nsolution = z.txt\n"
              "blocks = 3\n[solver]\ntolerances = 1e-8\nmax_iters = 3000\nguard = 1e-30\n")
    cfg = load_config(p)
    assert cfg.problem["matrix"] == str(linear_dir / "A.coo")
    res = run_experiment(cfg)
    assert res.exit_code == 0
    assert res.trace.rows[-1].violation < 1e-8


def test_trace_csv_is_byte_identical(tmp_path):
    cfg = ExperimentConfig("random-qc", {"n": 12, "M": 8, "seed": 5}, tolerances=(1e-4,))
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / f"{cfg.label}.csv").read_bytes()
    b = (tmp_path / "b" / f"{cfg.label}.csv").read_bytes()
    assert a == b and a.startswith(b"k,sigma,lambda,step_norm,violation,distance\n")
    summary = json.loads((tmp_path / "a" / f"{cfg.label}.json").read_text())
    assert summary["rng"].startswith("numpy") and summary["seed"] == 5
    assert "[solver]" in summary["config"]


def test_batch_compare_pairs_and_ratio(linear_dir):
    base = ExperimentConfig("linear", {"matrix": str(linear_dir / "A.coo"),
                                       "rhs": str(linear_dir / "zero.txt")})
    results = [run_experiment(base.with_mode(m)) for m in ("ue", "we")]
    cmp = batch_compare(results)
    assert cmp.rows == [("A.coo", 0, 0, 1.0)]
    with pytest.raises(ValueError, match="unpaired"):
        batch_compare(results[:1])


def test_tomography_summary_has_relative_error():
    cfg = ExperimentConfig("tomography", {"grid": 16, "views": 4, "rays": 25},
                           tolerances=(1e-12,), max_iters=5)
    res = run_experiment(cfg)
    err = res.summary()["relative_error"]
    assert len(err) == 6 and err[0] == pytest.approx(1.0)
    assert res.exit_code == 2


def test_cli_solve_exit_codes(tmp_path, capsys):
    ok = write(tmp_path / "ok.ini", "[problem]\nkind = appendix\nname = broyden\n"
                                    "[solver]\ntolerances = 1e-1\n")
    assert cli.main(["solve", ok]) == 0
    short = write(tmp_path / "short.ini", "[problem]\nkind = appendix\nname = powell\n"
                                          "[solver]\nmax_iters = 1\n")
    assert cli.main(["solve", short]) == 2
    guard = write(tmp_path / "guard.ini", "[problem]\nkind = appendix\nname = rosenbrock\n")
    assert cli.main(["solve", guard, "--out", str(tmp_path / "o")]) == 3
    assert os.path.exists(tmp_path / "o" / "rosenbrock-ue.csv")
    assert cli.main(["solve", str(tmp_path / "missing.ini")]) == 1
    assert "GuardTriggered" in capsys.readouterr().out


def test_cli_overrides(tmp_path):
    p = write(tmp_path / "c.ini", "[problem]\nkind = appendix\nname = powell\n")
    out = tmp_path / "o"
    cli.main(["solve", p, "--mode", "we", "--max-iters", "3", "--tol", "1e-2", "--out",
              str(out)])
    rows = (out / "powell-we.csv").read_text().splitlines()
    assert len(rows) == 1 + 4


def test_cli_gen_and_batch(tmp_path, capsys):
    d = tmp_path / "qc"
    assert cli.main(["gen", "random-qc", "--small", "--count", "2", "--out", str(d)]) == 0
    assert len(glob.glob(str(d / "*.ini"))) == 4
    assert len(glob.glob(str(d / "*.manifest"))) == 2
    out = tmp_path / "res"
    assert cli.main(["batch", str(d), "--out", str(out)]) == 0
    text = (out / "comparison.csv").read_text().splitlines()
    assert text[0] == "name,ue_iters,we_iters,ratio"
    assert len(text) == 4 and text[-1].startswith("MEAN,")
    assert (out / "comparison_tol0.0001.csv").exists()


def test_cli_gen_appendix_files(tmp_path):
    assert cli.main(["gen", "appendix", "--out", str(tmp_path)]) == 0
    assert len(glob.glob(str(tmp_path / "*.ini"))) == 12
    cfg = load_config(str(tmp_path / "wood-ue.ini"))
    assert cfg.problem["name"] == "wood" and cfg.mode == "ue"


def test_cli_gen_tomography_and_solve(tmp_path):
    assert cli.main(["gen", "tomography", "--out", str(tmp_path)]) == 0
    for f in ("A.coo", "b.txt", "x_true.txt", "views.txt", "geometry.manifest"):
        assert (tmp_path / f).exists()
    code = cli.main(["solve", str(tmp_path / "tomography-ue.ini"), "--max-iters", "3"])
    assert code == 2


def test_cli_verify(tmp_path, capsys):
    p = write(tmp_path / "v.ini", "[problem]\nkind = random-qc\nn = 10\nM = 6\nseed = 1\n")
    assert cli.main(["verify", p, "--samples", "20"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS QNE") == 4 and "FAIL" not in out
