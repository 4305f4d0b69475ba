import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from qosa_forest.cli import main, ranked_report
from qosa_forest.oracle import expdiff_qosa_true


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ozone_like(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(600, 9))
    y = X[:, 0] + 0.5 * X[:, 3] ** 2 + 0.3 * rng.normal(size=600)
    path = tmp_path / "ozone.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"V{i}" for i in range(9)] + ["O3obs"])
        w.writerows(np.column_stack([X, y]).tolist())
    return path


def test_estimate_model_example(capsys):
    code, out, _ = run(capsys, "estimate", "--model", "exp-diff", "--n", "10000", "--alpha", "0.5",
                       "--estimator", "q2o", "--trees", "100", "--tuning", "cv", "--folds", "3",
                       "--seed", "42")
    assert code == 0
    est = json.loads(out)["estimates"]
    assert len(est) == 2
    for e in est:
        assert e["s_hat"] == pytest.approx(0.307, abs=0.03)


def test_estimate_csv_workflow(capsys, ozone_like):
    code, out, _ = run(capsys, "estimate", "--csv", str(ozone_like), "--output", "O3obs",
                       "--alpha", "0.3,0.6,0.9", "--estimator", "q2o", "--trees", "10",
                       "--grid", "10:100:4")
    assert code == 0
    est = json.loads(out)["estimates"]
    assert len(est) == 27
    assert all(np.isfinite(e["s_hat"]) for e in est)
    assert {e["input_name"] for e in est} == {f"V{i}" for i in range(9)}


def test_missing_output_column_is_usage_error(capsys, ozone_like):
    code, _, err = run(capsys, "estimate", "--csv", str(ozone_like), "--alpha", "0.5")
    assert code == 2
    assert json.loads(err)["exit_code"] == 2


@pytest.mark.parametrize("argv, code", [
    (["estimate", "--model", "exp-diff", "--alpha", "1.5"], 2),
    (["estimate", "--model", "exp-diff", "--csv", "x.csv", "--output", "Y"], 2),
    (["estimate", "--model", "nope"], 2),
    (["estimate", "--model", "exp-diff", "--estimator", "Q9o"], 2),
    (["frobnicate"], 2),
    (["report", "/nonexistent/estimates.json"], 2),
    (["oracle", "--model", "exp-diff", "--input", "3"], 2),
])
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_data_error_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,Y\n1,2,3\n4,oops,6\n")
    assert run(capsys, "estimate", "--csv", str(bad), "--output", "Y")[0] == 3
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert run(capsys, "report", str(junk))[0] == 3


def test_degenerate_exit_code(capsys, tmp_path):
    flat = tmp_path / "flat.csv"
    rows = "\n".join(f"{i},{i % 7},1.0" for i in range(50))
    flat.write_text("a,b,Y\n" + rows + "\n")
    code = run(capsys, "estimate", "--csv", str(flat), "--output", "Y", "--tuning", "none",
               "--leaf-size", "5", "--trees", "3")[0]
    assert code == 4


def small_estimate(tmp_path, name, fmt="json"):
    out = tmp_path / name
    argv = ["estimate", "--model", "exp-diff", "--n", "800", "--alpha", "0.3,0.8",
            "--estimator", "Q1o", "--trees", "10", "--grid", "10,40", "--seed", "3",
            "--format", fmt, "--out", str(out)]
    assert main(argv) == 0
    return out


def test_same_seed_same_bytes(tmp_path):
    a = small_estimate(tmp_path, "a.json").read_bytes()
    b = small_estimate(tmp_path, "b.json").read_bytes()
    assert a == b


def test_json_round_trip(tmp_path):
    from qosa_forest.qosa import QosaResult

    text = small_estimate(tmp_path, "a.json").read_text()
    res = QosaResult.from_dict(json.loads(text))
    again = res.to_dict()
    for t in again["tuning"]:
        t.pop("wall_time")
    assert json.loads(json.dumps(again)) == json.loads(text)
    assert len(res.estimates) == 4


def test_csv_format(tmp_path):
    rows = list(csv.DictReader(io.StringIO(small_estimate(tmp_path, "a.csv", "csv").read_text())))
    assert len(rows) == 4 and rows[0]["estimator"] == "Q1o"


def test_report_command(tmp_path, capsys):
    path = small_estimate(tmp_path, "a.json")
    code, out, _ = run(capsys, "report", str(path))
    assert code == 0
    rows = json.loads(out)
    assert [r["rank"] for r in rows] == [1, 2, 1, 2]
    for a in (0.3, 0.8):
        shares = [r["share"] for r in rows if r["alpha"] == a]
        assert sum(shares) == pytest.approx(1.0)


def rec(i, s, alpha=0.5):
    return {"input_index": i, "alpha": alpha, "s_hat": s}


def test_ranked_shares():
    rows = ranked_report([rec(0, 0.1), rec(1, 0.3)])
    assert [r["input_index"] for r in rows] == [1, 0]
    assert [r["share"] for r in rows] == pytest.approx([0.75, 0.25])
    assert ranked_report([rec(0, 0.4)])[0]["share"] == 1.0


def test_ranked_floors_negative():
    rows = ranked_report([rec(0, 0.2), rec(1, -0.05)])
    assert rows[1]["floored"] and rows[1]["share"] == 0.0 and rows[1]["s_hat"] == -0.05
    with pytest.warns(UserWarning):
        rows = ranked_report([rec(0, 0.0), rec(1, -0.1)])
    assert all(r["share"] is None for r in rows)


def test_ranking_at_high_level(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "exp-diff", "--alpha", "0.9")
    rows = json.loads(out)
    assert rows[0]["value"] == pytest.approx(expdiff_qosa_true(0.9, 1))
    ranked = ranked_report([rec(r["input"] - 1, r["value"], 0.9) for r in rows])
    assert ranked[0]["input_index"] == 0


def test_oracle_with_mc(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "additive-exp:0.3,1.25", "--input", "1",
                       "--mc", "--n-outer", "300", "--n-inner", "300")
    row = json.loads(out)[0]
    assert code == 0 and abs(row["mc_value"] - row["value"]) < 5 * row["mc_stderr"] + 0.01


def test_tune_command(capsys):
    code, out, _ = run(capsys, "tune", "--model", "exp-diff", "--n", "600", "--alpha", "0.5",
                       "--trees", "5", "--grid", "10,30", "--tuning", "oob", "--inputs", "X2")
    rows = json.loads(out)
    assert code == 0 and len(rows) == 1 and rows[0]["input_name"] == "X2"
    assert rows[0]["selected"] in (10, 30) and "wall_time" not in rows[0]


def test_benchmark_command(capsys):
    code, out, _ = run(capsys, "benchmark", "--model", "exp-diff", "--estimators", "Q2o",
                       "--n", "300", "--trees", "5", "--replications", "2", "--tuning", "none",
                       "--leaf-size", "20", "--format", "csv")
    assert code == 0
    assert len(list(csv.DictReader(io.StringIO(out)))) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qosa_forest", "oracle", "--model", "exp-diff"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and len(json.loads(proc.stdout)) == 2
