import csv
import json

import numpy as np
import pytest

from uotkit import cli
from uotkit.cli import main
from uotkit.color import write_ppm
from uotkit.core import UotProblem
from uotkit.exceptions import DivergenceError
from uotkit.io import read_plan_csv, save_problem

from .test_color_io import gradient_image


@pytest.fixture
def problem_file(tmp_path):
    p = UotProblem([[0.0, 1.0, 0.5], [1.0, 0.0, 0.4], [0.5, 0.4, 0.0]], [0.3, 0.3, 0.4], [0.2, 0.5, 0.3], 5.0)
    path = tmp_path / "p.json"
    save_problem(path, p)
    return path


def _strip_timing(path):
    d = json.loads(path.read_text())
    d.pop("wall_time", None)
    return d


@pytest.mark.parametrize("solver", ["gem-uot", "gem-ruot", "sinkhorn"])
def test_solve(tmp_path, problem_file, solver):
    plan, rep, trace = tmp_path / "x.csv", tmp_path / "r.json", tmp_path / "t.csv"
    rc = main(["solve", "--problem", str(problem_file), "--solver", solver, "--epsilon", "1e-3",
               "--plan", str(plan), "--report", str(rep), "--trace", str(trace)])
    assert rc == 0
    X = read_plan_csv(plan)
    assert X.shape == (3, 3) and np.all(X >= 0)
    d = json.loads(rep.read_text())
    assert d["version"] == "0.1.0" and d["solver"] == solver
    with open(trace, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "f", "g_eta", "dual_gap", "marginal_gap"]
    assert len(rows) - 1 == d["iterations"]


def test_solve_reproducible(tmp_path, problem_file):
    outs = []
    for k in range(2):
        plan, rep = tmp_path / f"x{k}.csv", tmp_path / f"r{k}.json"
        assert main(["solve", "--problem", str(problem_file), "--plan", str(plan), "--report", str(rep)]) == 0
        outs.append((plan.read_bytes(), _strip_timing(rep)))
    assert outs[0] == outs[1]


def test_generate_and_retrieve(tmp_path):
    prob = tmp_path / "g.json"
    assert main(["generate", "--n", "4", "--seed", "3", "--alpha", "1", "--beta", "1", "--out", str(prob)]) == 0
    rep = tmp_path / "ot.json"
    rc = main(["retrieve-ot", "--problem", str(prob), "--epsilon", "0.05",
               "--plan", str(tmp_path / "ot.csv"), "--report", str(rep)])
    assert rc == 0
    d = json.loads(rep.read_text())
    assert {"ot_gap_bound", "tau_used", "eta_used", "objective"} <= set(d)


def test_check_distance_bound_command(tmp_path):
    out = tmp_path / "t4.csv"
    assert main(["check-thm4", "--n", "5", "--taus", "1,10,100,1000", "--seed", "7", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == ["tau", "empirical", "bound", "satisfied"]
    assert all(r["satisfied"] == "true" for r in rows)


def test_check_marginal_bound_command(tmp_path):
    out = tmp_path / "t2.csv"
    assert main(["check-thm2", "--n", "4", "--taus", "10,100", "--out", str(out)]) == 0
    assert out.read_text().count("true") == 2


def test_color_transfer(tmp_path):
    write_ppm(tmp_path / "a.ppm", gradient_image(1))
    write_ppm(tmp_path / "b.ppm", gradient_image(2))
    digests = []
    for k in range(2):
        out, rep = tmp_path / f"o{k}.ppm", tmp_path / f"o{k}.json"
        rc = main(["color-transfer", "--src", str(tmp_path / "a.ppm"), "--dst", str(tmp_path / "b.ppm"),
                   "--n", "8", "--out", str(out), "--report", str(rep)])
        assert rc == 0
        digests.append((out.read_bytes(), rep.read_bytes()))
    assert digests[0] == digests[1]
    d = json.loads(digests[0][1])
    assert d["sparsity"] == 0.765625


def test_sparsity_command(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sparsity", "--n", "8", "--instances", "2", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["gem_sparsity"]) > float(r["sinkhorn_sparsity"]) for r in rows)


def test_validation_errors_exit_one(tmp_path, problem_file, capsys):
    assert main(["solve", "--problem", str(tmp_path / "missing.json")]) == 1
    assert main(["solve", "--problem", str(problem_file), "--epsilon", "-1"]) == 1
    assert main(["solve", "--bogus-flag"]) == 1
    assert main(["check-thm4", "--taus", "10,abc"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"a": [0.5, 0.0], "b": [0.5, 0.5], "C": [[0, 1], [1, 0]], "tau": 1}))
    assert main(["solve", "--problem", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_divergence_exit_two(tmp_path, problem_file, monkeypatch, capsys):
    # the stabilized solvers do not overflow on representable inputs, so the
    # exit-code mapping is exercised by having the solver report divergence
    def diverge(*args, **kwargs):
        raise DivergenceError("non-finite iterate at iteration 3")

    monkeypatch.setattr(cli, "sinkhorn_uot", diverge)
    rc = main(["solve", "--problem", str(problem_file), "--solver", "sinkhorn",
               "--plan", str(tmp_path / "x.csv"), "--report", str(tmp_path / "r.json")])
    assert rc == 2
    assert "diverged" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_thread_cap(tmp_path, problem_file, monkeypatch):
    monkeypatch.setenv("UOTKIT_THREADS", "zero")
    assert main(["solve", "--problem", str(problem_file), "--plan", str(tmp_path / "x.csv"),
                 "--report", str(tmp_path / "r.json")]) == 1
    monkeypatch.setenv("UOTKIT_THREADS", "1")
    assert main(["solve", "--problem", str(problem_file), "--plan", str(tmp_path / "x.csv"),
                 "--report", str(tmp_path / "r.json")]) == 0
