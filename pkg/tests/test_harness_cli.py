import json

import numpy as np
import pytest

from cnnsgd import harness
from cnnsgd.cli import main

SMALL_CNN = {"channels": [2], "filter_sizes": [2], "L2": 2, "beta": 1.0}


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def small_sweep_cfg():
    return harness.merge_config(harness.DEFAULT_CONFIG, {
        "cnn": SMALL_CNN,
        "generator": {"n": 40},
        "train": {"K": 2, "t_per_n": 2},
        "sweep": {"n": [20, 40], "seeds": 2, "test_size": 300},
    })


def test_csv_and_checks():
    assert harness.csv_text(["a", "b"], [[1, 0.1], [True, "x"]]) == "a,b\n1,0.1\n1,x\n"
    rep = harness.VerifyReport("s")
    rep.add("le", 0.5, 1.0)
    rep.add("in", 0.5, 0.3, "in", 0.8)
    rep.add("gt", 0.0, 0.0, ">")
    assert not rep.ok and rep.n_failed == 1 and "FAILED gt" in rep.summary()


def test_merge_config():
    out = harness.merge_config({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}, "d": 4})
    assert out == {"a": {"b": 1, "c": 3}, "d": 4}


def test_infeasible_architecture():
    cfg = harness.merge_config(harness.DEFAULT_CONFIG, {"max_params": 10})
    with pytest.raises(harness.InfeasibleArchitecture, match="K \\* P"):
        harness.run_rate_sweep(cfg)


def test_sweep_deterministic_and_worker_independent():
    cfg = small_sweep_cfg()
    a = harness.run_rate_sweep(cfg, 3)
    b = harness.run_rate_sweep(cfg, 3)
    assert a.rows_csv() == b.rows_csv() and a.summary_csv() == b.summary_csv()
    cfg["sweep"]["workers"] = 2
    c = harness.run_rate_sweep(cfg, 3)
    assert c.rows_csv() == a.rows_csv()
    assert [r[:2] for r in a.rows] == [[20, 3], [20, 4], [40, 3], [40, 4]]
    assert all(0 <= r[5] <= 1 for r in a.rows)


def test_acceptance_architecture_depth():
    cfg = harness.merge_config(harness.DEFAULT_CONFIG, harness.ACCEPTANCE_SWEEP)
    archs = [harness.architecture_for(cfg, n) for n in cfg["sweep"]["n"]]
    assert {a.L1 for a in archs} == {3}
    assert [a.L2 for a in archs] == [4, 5, 6, 7]


def test_run_verify_writes_csv(tmp_path):
    rep = harness.run_verify("embedding", 0, tmp_path, images=10)
    assert rep.ok
    text = (tmp_path / "verify_embedding.csv").read_text()
    assert text.startswith("check,measured,tolerance,relation,passed\n")
    assert (tmp_path / "timings_verify_embedding.csv").exists()
    with pytest.raises(ValueError):
        harness.run_verify("nope")


def test_grid_projection_oracle():
    # the projection of a feasible point is itself
    w = np.array([0.1, 0.2])
    np.testing.assert_allclose(harness.grid_projection(w, 1.0), w, atol=1e-8)
    # outside the ball but inside the simplex: radial shrink
    z = np.array([0.5, 0.5])
    np.testing.assert_allclose(harness.grid_projection(z, 0.125), z / np.linalg.norm(z) * np.sqrt(0.125),
                               atol=1e-7)


def test_cli_pipeline(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path, {"generator": {"n": 30}})
    assert main(["generate", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    assert (out / "dataset.csv").exists() and (out / "manifest.txt").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "command: generate" in manifest and "seeds: 5" in manifest

    cfg2 = write_cfg(tmp_path, {"generator": {"n": 30}, "dataset": str(out / "dataset.csv"),
                                "cnn": SMALL_CNN, "train": {"K": 2, "t_per_n": 2}}, "c2.json")
    assert main(["train", "--config", str(cfg2), "--out", str(out)]) == 0
    loss = (out / "train_loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,mean_loss" and len(loss) == 3

    cfg3 = write_cfg(tmp_path, {"checkpoint": str(out / "checkpoint.json"),
                                "evaluate": {"test_size": 200}}, "c3.json")
    assert main(["evaluate", "--config", str(cfg3), "--out", str(out)]) == 0
    head, row = (out / "evaluate.csv").read_text().splitlines()
    assert head == "test_size,empirical_regret,mc_regret,test_error" and row.startswith("200,")


def test_cli_errors(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    assert "dataset" in capsys.readouterr().err
    assert main(["generate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["verify", "unknown-suite"])


def test_cli_sweep_and_bounds(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"cnn": SMALL_CNN, "train": {"K": 2, "t_per_n": 2},
                               "sweep": {"n": [20, 40], "seeds": 1, "test_size": 200},
                               "bounds": {"instances": 2}})
    assert main(["rate-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("sweep.csv", "sweep_summary.csv", "sweep_fit.csv", "timings_sweep.csv"):
        assert (tmp_path / name).exists()
    assert "log-log slope" in capsys.readouterr().out
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "bounds.csv").read_text().splitlines()
    assert lines[0] == "name,formula_value,empirical_value,margin" and len(lines) >= 5


def test_cli_verify_exit_code(tmp_path, capsys):
    assert main(["verify", "embedding", "--out", str(tmp_path)]) == 0
    assert "3/3 checks passed" in capsys.readouterr().out
