import json

import numpy as np
import pandas as pd
import pytest

from stochmed import __version__
from stochmed.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from stochmed.model import InterventionSpec
from stochmed.sim import generate, oracle_truth


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def strip_time(payload):
    return {k: v for k, v in payload.items() if k != "timestamp"}


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--reps", "1", "--n", "4900", "--estimator", "onestep", "--emit-data",
                 "--output", str(d / "run.json"), "--seed", "3"]) == EXIT_OK
    return d


class TestOracle:
    def test_half(self, capsys):
        code, out, _ = run(["oracle", "--delta", 0.5], capsys)
        payload = json.loads(out)
        assert code == EXIT_OK
        assert payload["truth"][0]["direct"] == pytest.approx(-0.13746953847, abs=1e-10)
        assert payload["schema_version"] == 1 and payload["version"] == __version__ and payload["seed"] == 0

    def test_identity(self, capsys):
        truth = json.loads(run(["oracle", "--delta", 1], capsys)[1])["truth"][0]
        assert max(abs(truth[k]) for k in ("direct", "indirect", "total")) <= 1e-14

    def test_two(self, capsys):
        truth = json.loads(run(["oracle", "--delta", 2], capsys)[1])["truth"][0]
        assert truth["direct"] == pytest.approx(oracle_truth(InterventionSpec.ips(2.0)).direct, abs=1e-15)
        assert truth["direct"] > 0

    def test_grid(self, capsys):
        truth = json.loads(run(["oracle", "--delta-grid", "0.5:2:3"], capsys)[1])["truth"]
        assert [t["delta"] for t in truth] == pytest.approx([0.5, 1.0, 2.0])

    def test_byte_identical_payloads(self, capsys):
        a = json.loads(run(["oracle", "--delta", 0.5], capsys)[1])
        b = json.loads(run(["oracle", "--delta", 0.5], capsys)[1])
        assert json.dumps(strip_time(a)) == json.dumps(strip_time(b))

    def test_shift_is_input_error(self, capsys):
        code, _, err = run(["oracle", "--intervention", "shift", "--delta", 1], capsys)
        assert code == EXIT_INPUT and json.loads(err)["error"] == "UnsupportedForContinuous"


class TestSimulate:
    def test_single_rep(self, emitted):
        table = pd.read_csv(emitted / "run.csv")
        assert list(table.columns[:4]) == ["estimator", "toggle", "n", "reps"]
        assert (table["reps"] == 1).all()
        assert table[["bias", "se", "mse", "n_mse"]].notna().all().all()

    def test_json_echoes_config(self, emitted):
        payload = json.loads((emitted / "run.json").read_text())
        assert payload["config"]["reps"] == 1 and payload["seed"] == 3
        assert payload["result"]["rows"][0]["n"] == 4900

    def test_emit_data(self, emitted):
        frame = pd.read_csv(emitted / "run_data_n4900.csv")
        assert len(frame) == 4900 and {"A", "Y"} <= set(frame.columns)

    def test_stdout_without_output(self, capsys):
        code, out, _ = run(["simulate", "--reps", "1", "--n", "200", "--estimator", "sub"], capsys)
        assert code == EXIT_OK and json.loads(out)["result"]["rows"][0]["estimator"] == "sub"


class TestAnalyze:
    def test_ci_covers_oracle(self, emitted, capsys):
        out_path = emitted / "report.json"
        code, _, _ = run(["analyze", "--input", emitted / "run_data_n4900.csv", "--delta", 2,
                          "--estimator", "onestep", "--output", out_path], capsys)
        rep = json.loads(out_path.read_text())["report"]
        truth = oracle_truth(InterventionSpec.ips(2.0)).direct
        assert code == EXIT_OK
        assert rep["ci_lo"][0] <= truth <= rep["ci_hi"][0]

    def test_grid_has_band(self, emitted, capsys):
        code, out, _ = run(["analyze", "--input", emitted / "run_data_n4900.csv", "--delta-grid", "0.5:2:2",
                            "--boot", 1000], capsys)
        rep = json.loads(out)["report"]
        assert code == EXIT_OK
        assert len(rep["band_lo"]) == 2 and len(rep["band_hi"]) == 2
        assert rep["sup_test_p"] is not None and rep["critical_value"] is not None

    def test_without_mediators(self, tmp_path, capsys):
        frame = generate(800, seed=1).to_frame()
        frame = frame[[c for c in frame.columns if not c.upper().startswith("Z")]]
        frame.to_csv(tmp_path / "noz.csv", index=False)
        code, out, _ = run(["analyze", "--input", tmp_path / "noz.csv"], capsys)
        rep = json.loads(out)["report"]
        assert code == EXIT_OK
        assert rep["indirect"] == [0.0] and rep["direct"] == rep["total"]

    def test_decomposition_identity(self, tmp_path, capsys):
        generate(800, seed=2).to_frame().to_csv(tmp_path / "d.csv", index=False)
        rep = json.loads(run(["analyze", "--input", tmp_path / "d.csv", "--delta-grid", "0.5:2:4",
                              "--boot", 1000], capsys)[1])["report"]
        d, i, t = (np.array(rep[k]) for k in ("direct", "indirect", "total"))
        assert np.max(np.abs(d + i - t)) <= 1e-12

    def test_config_file_and_override(self, tmp_path, capsys):
        generate(600, seed=4).to_frame().to_csv(tmp_path / "d.csv", index=False)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"input": str(tmp_path / "d.csv"), "delta": 2.0, "estimator": "sub"}))
        payload = json.loads(run(["analyze", "--config", cfg, "--delta", 0.5], capsys)[1])
        assert payload["config"]["delta"] == 0.5 and payload["config"]["estimator"] == "sub"
        assert payload["report"]["delta_grid"] == [0.5]

    def test_reproducible_payload(self, tmp_path, capsys):
        generate(600, seed=5).to_frame().to_csv(tmp_path / "d.csv", index=False)
        argv = ["analyze", "--input", tmp_path / "d.csv", "--delta-grid", "0.5:2:3", "--boot", 1000, "--seed", 7]
        a = json.loads(run(argv, capsys)[1])
        b = json.loads(run(argv, capsys)[1])
        assert json.dumps(strip_time(a)) == json.dumps(strip_time(b))


class TestExitCodes:
    def test_missing_input(self, capsys):
        code, _, err = run(["analyze"], capsys)
        assert code == EXIT_INPUT and json.loads(err)["exit_code"] == EXIT_INPUT

    def test_unreadable_file(self, tmp_path, capsys):
        code, _, _ = run(["analyze", "--input", tmp_path / "missing.csv"], capsys)
        assert code == EXIT_INPUT

    def test_bad_flag(self, capsys):
        assert run(["analyze", "--estimator", "tmle"], capsys)[0] == EXIT_INPUT

    def test_bad_grid(self, capsys):
        assert run(["oracle", "--delta-grid", "2:1"], capsys)[0] == EXIT_INPUT

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(["oracle", "--config", cfg], capsys)[0] == EXIT_INPUT

    def test_invalid_values(self, tmp_path, capsys):
        frame = generate(300, seed=1).to_frame()
        frame.loc[3, "Y"] = np.nan
        frame.to_csv(tmp_path / "bad.csv", index=False)
        code, _, err = run(["analyze", "--input", tmp_path / "bad.csv"], capsys)
        assert code == EXIT_INPUT and "error" in json.loads(err)

    def test_numeric_failure(self, tmp_path, capsys):
        # constant outcome gives zero variance on every grid point
        frame = generate(400, seed=1).to_frame()
        frame["Y"] = 1.75
        frame.to_csv(tmp_path / "flat.csv", index=False)
        code, _, err = run(["analyze", "--input", tmp_path / "flat.csv", "--delta-grid", "0.5:2:2",
                            "--boot", 1000], capsys)
        assert code == EXIT_NUMERIC and json.loads(err)["error"] == "DegenerateVariance"

    def test_tilt_overflow(self, tmp_path, capsys):
        generate(300, seed=1).to_frame().to_csv(tmp_path / "d.csv", index=False)
        code, _, err = run(["analyze", "--input", tmp_path / "d.csv", "--intervention", "tilt", "--delta", 900], capsys)
        assert code == EXIT_NUMERIC and json.loads(err)["nuisance"] == "g_delta"

    def test_version(self, capsys):
        assert run(["--version"], capsys)[0] == EXIT_OK
