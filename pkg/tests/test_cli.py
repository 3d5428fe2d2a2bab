import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from lpvss import bench, cli, ident, lpvmodel
from lpvss.lpvmodel import LpvLfrModel
from lpvss.verify import read_cert_csv


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert cli.main(["generate", "--set", "all", "--out", str(root), "--seed", "0", "--n-b", "16"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "lip.lpvss"
    code = cli.main(["train", "--variant", "lipschitz", "--gamma", "1", "--data", str(data / "training"),
                     "--val", str(data / "validation"), "--out", str(out), "--epochs", "1",
                     "--seed", "0", "--coeff", "affine"])
    assert code == 0
    return out


def test_generate_all_writes_four_sets(data):
    assert sorted(os.listdir(data)) == ["test-a", "test-b", "training", "validation"]
    assert bench.read_meta(data / "test-b")["T"] == 6000
    assert bench.read_meta(data / "test-a")["N_b"] == 16


def test_generate_is_idempotent_per_seed(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["generate", "--set", "test-a", "--seed", "7", "--out", str(tmp_path / d)]) == 0
    cmp = filecmp.dircmp(tmp_path / "a" / "test-a", tmp_path / "b" / "test-a")
    assert len(cmp.left_list) == 31
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "test-a", tmp_path / "b" / "test-a",
                                           cmp.left_list, shallow=False)
    assert mismatch == [] and errors == []


def test_missing_out_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["generate", "--set", "test-a"])
    assert exc.value.code == 2


def test_console_script_exit_codes(tmp_path):
    run = [sys.executable, "-m", "lpvss.cli"]
    assert subprocess.run(run + ["verify"], capture_output=True).returncode == 2
    missing = subprocess.run(run + ["eval", "--model", str(tmp_path / "none"), "--data", str(tmp_path),
                                    "--out", str(tmp_path / "e.csv")], capture_output=True)
    assert missing.returncode == 1


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nseed = 5\n")

    def seed_of(argv):
        args = cli._parser().parse_args(argv)
        args.config_values = cli.read_config(args.config) if args.config else {}
        return cli.resolve(args, "seed", int)

    base = ["generate", "--set", "test-a", "--out", "x"]
    monkeypatch.setenv("LPV_SEED", "9")
    assert seed_of(base) == 9
    assert seed_of(["--config", str(cfg)] + base) == 5
    assert seed_of(["--config", str(cfg)] + base + ["--seed", "3"]) == 3
    monkeypatch.delenv("LPV_SEED")
    assert seed_of(base) == 0


def test_bad_config_file_is_a_usage_error(tmp_path, data):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no equals sign here\n")
    assert cli.main(["--config", str(cfg), "generate", "--set", "test-a", "--out", str(tmp_path)]) == 2


def test_zero_epochs_writes_the_initial_model(data, tmp_path):
    out = tmp_path / "m.lpvss"
    assert cli.main(["train", "--variant", "contracting", "--data", str(data / "training"),
                     "--out", str(out), "--epochs", "0", "--seed", "4"]) == 0
    fresh = cli.build_model("contracting", 3, 1, 1, 3, seed=4)
    assert out.read_text() == lpvmodel.dumps_model(fresh)


def test_trained_model_verifies_at_its_gamma(trained, tmp_path):
    csv_path = tmp_path / "cert.csv"
    assert cli.main(["verify", "--model", str(trained), "--property", "lipschitz", "--samples", "200",
                     "--trials", "20", "--out", str(csv_path)]) == 0
    rep = read_cert_csv(csv_path)
    assert rep.passed and rep.bound == 1.0
    assert cli.main(["verify", "--model", str(trained), "--property", "lipschitz", "--gamma", "0.01",
                     "--samples", "50", "--trials", "5"]) == 1
    report = ident.read_report_csv(str(trained) + ".report.csv")
    assert [r.epoch for r in report] == [1]


def test_fresh_lipschitz_model_verifies_before_training(tmp_path, data):
    out = tmp_path / "init.lpvss"
    cli.main(["train", "--data", str(data / "training"), "--out", str(out), "--epochs", "0"])
    assert cli.main(["verify", "--model", str(out), "--property", "contraction", "--samples", "100",
                     "--trials", "10"]) == 0


def test_eval_writes_one_row_per_trajectory_plus_mean(trained, data, tmp_path):
    out = tmp_path / "eval.csv"
    assert cli.main(["eval", "--model", str(trained), "--data", str(data / "test-a"), "--out", str(out)]) == 0
    rows, mean = cli.read_eval_csv(out)
    assert rows.shape == (16,) and mean == pytest.approx(rows.mean())


def test_trace_reports_divergence_marker(data, tmp_path):
    m = LpvLfrModel(3, 1, 1, 3, n_w=4, seed=0)
    m.params["phi.S0"][:9] = 0.0
    m.params["phi.S0"][[0, 4, 8]] = 1.5  # A = 1.5 I: unstable for every p
    m.params["phi.S1"][:9] = 0.0
    path = tmp_path / "lfr.lpvss"
    lpvmodel.save_model(m, path)
    out = tmp_path / "trace.csv"
    assert cli.main(["trace", "--model", str(path), "--data", str(data / "test-b"), "--traj", "0",
                     "--out", str(out)]) == 0
    t, y_true, y_pred, failed = cli.read_trace_csv(out)
    assert failed is not None and len(t) == failed
    assert np.all(np.isfinite(y_pred))
    assert out.read_text().rstrip().endswith(f"# NonFiniteState at t={failed}")


def test_trace_of_stable_model_covers_whole_horizon(trained, data, tmp_path):
    out = tmp_path / "trace.csv"
    assert cli.main(["trace", "--model", str(trained), "--data", str(data / "test-a"), "--traj", "2",
                     "--out", str(out)]) == 0
    t, y_true, y_pred, failed = cli.read_trace_csv(out)
    assert failed is None and len(t) == 200
    np.testing.assert_array_equal(y_true, bench.read_dataset(data / "test-a", limit=3).y[2, :, 0])


def test_verify_rejects_lfr_model(tmp_path):
    path = tmp_path / "lfr.lpvss"
    lpvmodel.save_model(LpvLfrModel(3, 1, 1, 3, n_w=4), path)
    assert cli.main(["verify", "--model", str(path), "--property", "lipschitz"]) == 1
