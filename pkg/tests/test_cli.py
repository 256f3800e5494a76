from __future__ import annotations

import json

import numpy as np
import pytest

from eigenshield.cli import RunConfig, InputError, main
from eigenshield.fileio import read_matrix, write_csv_matrix, write_matrix
from eigenshield.validation import FILTER_FIXTURE

ROWS = FILTER_FIXTURE["rows"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, planted_data):
    root = tmp_path_factory.mktemp("cli")
    write_matrix(root / "data.esmx", np.vstack(planted_data.inputs))
    (root / "config.json").write_text(json.dumps({"seed": 0, "rows_per_input": ROWS}))
    assert main(["calibrate", "--data", str(root / "data.esmx"), "--config", str(root / "config.json"),
                 "--out", str(root / "calib.json")]) == 0
    return root


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_mp_matches_edge(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "mp", "--n", 4000, "--p", 1000, "--sigma2", 1, "--seed", 7,
                     "--out", tmp_path / "mp.json")
    assert code == 0
    doc = json.loads((tmp_path / "mp.json").read_text())
    assert doc["predicted"]["lambda_plus"] == pytest.approx(2.25, abs=1e-12)
    assert doc["relative_error"]["max"] <= 0.03
    assert doc["run_config"] == {"n": 4000, "p": 1000, "sigma2": 1.0, "seed": 7, "bins": 50}
    assert sum(doc["histogram"]["counts"]) == 1000


def test_simulate_spike_matches_prediction(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "spike", "--beta", 9, "--c", 0.25, "--n", 4000, "--seed", 7,
                     "--out", tmp_path / "spike.json")
    assert code == 0
    (spike,) = json.loads((tmp_path / "spike.json").read_text())["spikes"]
    assert spike["predicted_location"] == pytest.approx(9.28125, abs=1e-12)
    assert spike["relative_error"] <= 0.05


def test_simulate_wigner_writes_to_stdout(capsys):
    code, out, _ = run(capsys, "simulate", "wigner", "--p", 400, "--seed", 1)
    assert code == 0
    doc = json.loads(out)
    assert doc["predicted"]["upper_edge"] == 2.0
    assert doc["moments"]["2"]["relative_error"] < 0.05


def test_simulate_is_byte_identical_on_rerun(capsys, tmp_path):
    for name in ("a.json", "b.json"):
        run(capsys, "simulate", "mp", "--n", 300, "--p", 100, "--seed", 3, "--out", tmp_path / name)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_missing_required_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "simulate", "mp", "--n", 100)
    assert code == 2
    assert "usage" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "mp", "--n", "1", "--p", "10"],
        ["simulate", "mp", "--n", "10", "--p", "10", "--sigma2", "-1"],
        ["simulate", "spike", "--beta", "0", "--c", "0.25", "--n", "100"],
        ["simulate", "spike", "--beta", "9", "--c", "0.001", "--n", "100"],
        ["simulate", "wigner", "--p", "1"],
    ],
)
def test_bad_simulation_parameters(capsys, argv):
    assert run(capsys, *argv)[0] == 2


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def test_calibrate_on_spiked_fixture(workspace):
    doc = json.loads((workspace / "calib.json").read_text())
    causal = [d for d in doc["directions"] if d["rho"] <= doc["log_t_hat"]]
    assert len(causal) >= 1
    assert doc["tau_star"] > doc["lambda_plus"]
    assert doc["run_config"] == {**RunConfig().to_dict(), "rows_per_input": ROWS}


def test_calibrate_prints_summary(capsys, workspace, tmp_path):
    code, out, _ = run(capsys, "calibrate", "--data", workspace / "data.esmx", "--config",
                       workspace / "config.json", "--out", tmp_path / "again.json")
    assert code == 0
    assert out.startswith("tau_star=")
    assert "causal=" in out and "outliers=" in out
    assert (tmp_path / "again.json").read_bytes() == (workspace / "calib.json").read_bytes()


def test_calibrate_accepts_csv(capsys, workspace, tmp_path, planted_data):
    write_csv_matrix(tmp_path / "data.csv", np.vstack(planted_data.inputs))
    code, _, _ = run(capsys, "calibrate", "--data", tmp_path / "data.csv", "--config",
                     workspace / "config.json", "--out", tmp_path / "calib.json")
    assert code == 0
    csv_doc = json.loads((tmp_path / "calib.json").read_text())
    bin_doc = json.loads((workspace / "calib.json").read_text())
    assert csv_doc["tau_star"] == pytest.approx(bin_doc["tau_star"], rel=1e-12)


def test_calibrate_pure_noise_exits_numeric(capsys, tmp_path):
    write_matrix(tmp_path / "noise.esmx", np.random.default_rng(0).standard_normal((30 * 64, 16)))
    (tmp_path / "cfg.json").write_text(json.dumps({"rows_per_input": 64, "epochs": 5}))
    code, _, err = run(capsys, "calibrate", "--data", tmp_path / "noise.esmx", "--config", tmp_path / "cfg.json",
                       "--out", tmp_path / "calib.json")
    assert code == 3
    assert "no outliers" in err
    assert '"spectrum"' in err
    assert not (tmp_path / "calib.json").exists()


@pytest.mark.parametrize(
    "config",
    [
        {"seed": 0},
        {"rows_per_input": ROWS, "gamma": 0.0},
        {"rows_per_input": ROWS, "folds": 1},
        {"rows_per_input": ROWS, "epochs": 2.5},
        {"rows_per_input": ROWS, "colour": "red"},
        {"rows_per_input": ROWS, "mode": "sideways"},
        {"rows_per_input": 7},
    ],
)
def test_calibrate_rejects_bad_configs(capsys, workspace, tmp_path, config):
    (tmp_path / "cfg.json").write_text(json.dumps(config))
    code, _, _ = run(capsys, "calibrate", "--data", workspace / "data.esmx", "--config", tmp_path / "cfg.json",
                     "--out", tmp_path / "calib.json")
    assert code == 2


def test_calibrate_missing_data_file(capsys, workspace, tmp_path):
    code, _, _ = run(capsys, "calibrate", "--data", tmp_path / "nope.esmx", "--config", workspace / "config.json",
                     "--out", tmp_path / "calib.json")
    assert code == 2


def test_run_config_rejects_bad_values():
    with pytest.raises(InputError):
        RunConfig.from_dict({"lower_q": 0.9})
    with pytest.raises(InputError):
        RunConfig.from_dict([])
    assert RunConfig.from_dict({}) == RunConfig()


def test_thread_cap_env(capsys, workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("ESHIELD_THREADS", "lots")
    code, _, _ = run(capsys, "calibrate", "--data", workspace / "data.esmx", "--config", workspace / "config.json",
                     "--out", tmp_path / "calib.json")
    assert code == 2
    monkeypatch.setenv("ESHIELD_THREADS", "2")
    code, _, _ = run(capsys, "calibrate", "--data", workspace / "data.esmx", "--config", workspace / "config.json",
                     "--out", tmp_path / "calib.json")
    assert code == 0
    assert (tmp_path / "calib.json").read_bytes() == (workspace / "calib.json").read_bytes()


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------


def test_filter_spiked_inputs(capsys, workspace, tmp_path, planted_data):
    write_matrix(tmp_path / "in.esmx", np.vstack(planted_data.inputs[:6]))
    code, out, _ = run(capsys, "filter", "--data", tmp_path / "in.esmx", "--calib", workspace / "calib.json",
                       "--out", tmp_path / "out.esmx")
    assert code == 0
    assert "filtered 6 inputs" in out
    assert read_matrix(tmp_path / "out.esmx").shape == (6 * ROWS, 64)
    doc = json.loads((tmp_path / "out.esmx.reports.json").read_text())
    assert doc["run_config"]["mode"] == "per_input"
    assert doc["run_config"]["rows_per_input"] == ROWS
    for report in doc["reports"]:
        assert 0 < report["energy_retained"] <= 1
        assert report["retained_rank"] >= 1
        assert not report["passthrough"]


def test_filter_noise_passes_through(capsys, workspace, tmp_path):
    noise = np.random.default_rng(2).standard_normal((ROWS, 64))
    write_matrix(tmp_path / "noise.esmx", noise)
    code, _, _ = run(capsys, "filter", "--data", tmp_path / "noise.esmx", "--calib", workspace / "calib.json",
                     "--out", tmp_path / "out.esmx", "--reports", tmp_path / "rep.json")
    assert code == 0
    (report,) = json.loads((tmp_path / "rep.json").read_text())["reports"]
    assert report["passthrough"]
    np.testing.assert_array_equal(read_matrix(tmp_path / "out.esmx"), noise)


def test_filter_global_mode(capsys, workspace, tmp_path, planted_data):
    write_matrix(tmp_path / "in.esmx", planted_data.inputs[0])
    code, _, _ = run(capsys, "filter", "--data", tmp_path / "in.esmx", "--calib", workspace / "calib.json",
                     "--out", tmp_path / "out.esmx", "--mode", "global")
    assert code == 0
    doc = json.loads((tmp_path / "out.esmx.reports.json").read_text())
    assert doc["run_config"]["mode"] == "global"


def test_filter_corrupt_calibration(capsys, workspace, tmp_path):
    text = (workspace / "calib.json").read_text()
    (tmp_path / "bad.json").write_text(text[: len(text) // 3])
    write_matrix(tmp_path / "in.esmx", np.zeros((ROWS, 64)))
    code, _, _ = run(capsys, "filter", "--data", tmp_path / "in.esmx", "--calib", tmp_path / "bad.json",
                     "--out", tmp_path / "out.esmx")
    assert code == 2
    assert not (tmp_path / "out.esmx").exists()


def test_filter_dimension_mismatch(capsys, workspace, tmp_path):
    write_matrix(tmp_path / "in.esmx", np.zeros((ROWS, 32)))
    code, _, _ = run(capsys, "filter", "--data", tmp_path / "in.esmx", "--calib", workspace / "calib.json",
                     "--out", tmp_path / "out.esmx")
    assert code == 2


def test_filter_rows_not_divisible(capsys, workspace, tmp_path):
    write_matrix(tmp_path / "in.esmx", np.zeros((ROWS + 3, 64)))
    code, _, _ = run(capsys, "filter", "--data", tmp_path / "in.esmx", "--calib", workspace / "calib.json",
                     "--out", tmp_path / "out.esmx")
    assert code == 2


# ---------------------------------------------------------------------------
# validate / metrics
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_validate_rmt_suite_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", "--suite", "rmt", "--seed", 7, "--out", tmp_path / "v.json")
    doc = json.loads((tmp_path / "v.json").read_text())
    assert len(doc["checks"]) == 6
    assert out.count("[PASS]") + out.count("[FAIL]") == 6
    assert doc["run_config"] == {"suite": "rmt", "seed": 7}
    assert code == 0


def test_validate_unknown_suite(capsys):
    assert run(capsys, "validate", "--suite", "everything")[0] == 2


def test_metrics_asr(capsys, tmp_path):
    (tmp_path / "ind.txt").write_text("1\n0\n0\n1\n")
    code, out, _ = run(capsys, "metrics", "asr", "--input", tmp_path / "ind.txt", "--out", tmp_path / "m.json")
    assert code == 0
    assert "ASR = 0.5" in out
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["value"] == 0.5 and doc["units"] == "fraction"


def test_metrics_mi(capsys, tmp_path):
    table = np.outer([0.25, 0.75], [0.5, 0.5])
    (tmp_path / "joint.csv").write_text("\n".join(",".join(map(str, r)) for r in table))
    code, out, _ = run(capsys, "metrics", "mi", "--input", tmp_path / "joint.csv")
    assert code == 0
    assert "MI = 0.0 bits" in out
    doc = json.loads(out[out.index("{"):])
    assert doc["value"] == 0.0 and doc["units"] == "bits"


@pytest.mark.parametrize("kind", ["asr", "mi"])
def test_metrics_empty_file(capsys, tmp_path, kind):
    (tmp_path / "empty").write_text("")
    assert run(capsys, "metrics", kind, "--input", tmp_path / "empty")[0] == 2


def test_metrics_missing_file(capsys, tmp_path):
    assert run(capsys, "metrics", "asr", "--input", tmp_path / "absent")[0] == 2
