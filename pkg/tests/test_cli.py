import csv
import json

from certipomdp.cli import main
from certipomdp.core import load_model, validate_model


def test_plan_writes_csv_and_artifacts(tmp_path, capsys):
    out = tmp_path / "ep.csv"
    code = main([
        "plan", "--env", "tiger", "--solver", "db-pomcp", "--horizon", "3", "--iterations", "80", "--seed", "2",
        "--episodes", "3", "--output", str(out), "--trace-bounds", str(tmp_path / "tr.csv"),
        "--dump-tree", str(tmp_path / "tree.txt"), "--dump-model", str(tmp_path / "m.pomdp"),
    ])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["episode"] for r in rows] == ["0", "1", "2"]
    assert [r["seed"] for r in rows] == ["2", "3", "4"]
    trace = list(csv.DictReader((tmp_path / "tr.csv").open()))
    assert trace and all(float(t["L"]) <= float(t["U"]) for t in trace)
    assert (tmp_path / "tree.txt").read_text().startswith("h:root")
    assert validate_model(load_model(tmp_path / "m.pomdp")) == []


def test_plan_is_deterministic(capsys):
    args = ["plan", "--env", "baby", "--solver", "rb-pomcp", "--horizon", "4", "--iterations", "50",
            "--episodes", "2", "--seed", "9"]
    main(args)
    first = capsys.readouterr().out
    main(args)
    assert capsys.readouterr().out == first


def test_exact_refuses_large_instances(capsys):
    assert main(["plan", "--env", "rocksample", "--solver", "exact", "--horizon", "10"]) == 2
    assert "refusing" in capsys.readouterr().err


def test_certify_command(capsys):
    code = main(["certify", "--env", "tiger", "--horizon", "3", "--solver", "rb-pomcp", "--seed", "0",
                 "--iterations", "20000"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["certified"] and report["chosen_action"] == report["optimal_action"] == 2
    assert report["lower"] - 1e-9 <= report["v_star"] <= report["upper"] + 1e-9


def test_certify_refuses_infeasible_oracle(capsys):
    assert main(["certify", "--env", "rocksample", "--horizon", "12", "--solver", "db-pomcp"]) == 2


def test_bench_and_ttc_commands(tmp_path, capsys):
    suite = tmp_path / "s.suite"
    suite.write_text("[cell]\nenv = tiger\nsolver = pomcp\nhorizon = 2\nepisodes = 2\nbudget = 20\n")
    assert main(["bench", "--suite", str(suite), "--output", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "episodes.csv").exists()
    assert main(["ttc", "--horizons", "2", "--solvers", "rb-pomcp", "--seeds", "0", "--cap-s", "5",
                 "--output", str(tmp_path / "ttc.csv")]) == 0
    assert (tmp_path / "ttc.csv").read_text().startswith("instance,solver,uct_c,seconds,iterations")


def test_bad_parameters_exit_2(capsys):
    assert main(["plan", "--env", "tiger", "--horizon", "0"]) == 2
