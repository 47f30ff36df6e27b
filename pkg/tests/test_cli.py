from pathlib import Path
import json
import pytest

from main import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, main
from drift_camouflage.discrete import ExactLaw
from drift_camouflage.files import verify_manifest


def load_json(p: Path):
    return json.loads(p.read_text(encoding="utf-8"))


def test_discrete_fair_law_exits_ok(tmp_path, write_config):
    write_config(
        """
        command: discrete
        seed: 1
        out: ./out
        params:
          law: {kind: constant, p: 1/2}
          window: 2
          bits_per_set: 1
          samples: 50
        """,
    )
    assert main(["--config", str(tmp_path)]) == EXIT_OK

    out = tmp_path / "out"
    report = load_json(out / "report.json")
    assert report["passed"] is True
    assert report["fair_extraction"] is True
    assert report["factorizes"] is True
    assert report["extractor"]["0"]["p_plus"] == "1/2"
    assert report["undecided_mass"] == "0"
    exact = load_json(out / "exact.json")
    assert set(exact["products"].values()) == {"1/4"}
    assert (out / "monte_carlo.csv").exists()
    assert verify_manifest(str(out)) == []


def test_discrete_fair_extraction_requires_product_law(tmp_path, write_config, monkeypatch):
    write_config(
        """
        command: discrete
        seed: 1
        params:
          law: {kind: constant, p: 1/2}
          window: 2
          bits_per_set: 1
        """
    )
    monkeypatch.setattr(ExactLaw, "factorizes", lambda self: False)
    out = tmp_path / "out"
    assert main(["--config", str(tmp_path), "--out", str(out)]) == EXIT_ACCEPTANCE
    report = load_json(out / "report.json")
    assert report["fair_extraction"] is True
    assert report["factorizes"] is False
    assert report["passed"] is False


def test_discrete_over_budget_is_config_error(tmp_path, write_config):
    write_config(
        """
        command: discrete
        seed: 1
        params:
          law: {kind: constant, p: 7/10}
          window: 8
          bits_per_set: 3
        """,
    )
    assert main(["discrete", "--config", str(tmp_path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


@pytest.mark.parametrize(
    "content",
    [
        """
        command: hidden
        seed: 1
        params: {mu: 1.0, dt: 0, horizon: 1.0, n_paths: 100}
        """,
        """
        command: concat
        seed: 1
        params: {mu: 1.0, delta: 0, dt: 0.01, horizon: 1.0, n_paths: 100}
        """,
        """
        command: calibrate
        seed: 1
        params: {dt: 0.01, horizon: 1.0, n_paths: 100, n_runs: 0}
        """,
    ],
)
def test_invalid_parameters_are_config_errors(tmp_path, write_config, content):
    write_config(content)
    assert main(["--config", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_is_config_error(tmp_path):
    assert main(["--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_command_mismatch_is_config_error(tmp_path, write_config):
    write_config(
        """
        command: discrete
        seed: 1
        params: {law: {kind: constant, p: 1/2}, window: 1, bits_per_set: 1}
        """,
    )
    assert main(["hidden", "--config", str(tmp_path)]) == EXIT_CONFIG


def test_hidden_run_is_reproducible(tmp_path, write_config):
    write_config(
        """
        command: hidden
        seed: 5
        params: {mu: 1.0, dt: 0.05, horizon: 1.0, n_paths: 100, csv_paths: 2}
        """,
    )
    first = main(["--config", str(tmp_path), "--out", str(tmp_path / "a")])
    second = main(["--config", str(tmp_path), "--out", str(tmp_path / "b")])
    assert first in (EXIT_OK, EXIT_ACCEPTANCE)
    assert first == second
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    report = load_json(tmp_path / "a" / "report.json")
    assert report["filter"]["drift_range_violations"] == 0
    assert report["filter"]["max_filter_error"] <= 1e-9
    assert (tmp_path / "a" / "paths" / "hidden_0001.csv").exists()
    sidecar = load_json(tmp_path / "a" / "paths" / "hidden_0001.json")
    assert (sidecar["seed"], sidecar["epsilon_mode"], sidecar["mu"]) == (5, "random", 1.0)
    assert sidecar["horizon"] == pytest.approx(1.0)
    assert sidecar["epsilon"] in (-1, 1)
    assert not (tmp_path / "a" / "paths" / "hidden_0002.csv").exists()
    assert (tmp_path / "a" / "battery_Y.csv").exists()


def test_concat_run_reports_bounds(tmp_path, write_config):
    write_config(
        """
        command: concat
        seed: 2
        params: {mu: 1.0, delta: 0.1, dt: 0.01, horizon: 1.0, n_paths: 3, run_battery: false}
        """,
    )
    out = tmp_path / "out"
    assert main(["concat", "--config", str(tmp_path), "--out", str(out)]) == EXIT_OK
    report = load_json(out / "report.json")
    assert report["drift_bound"]["nominal_bound"] == pytest.approx(0.5)
    assert report["drift_bound"]["violations"] == 0
    assert report["segments"]["required_min"] == 10
    assert report["segments"]["min"] >= 10
    assert "battery_M" not in report
    assert (out / "lemma_bounds.csv").exists()
    assert (out / "tail_truncation.csv").exists()


def test_calibrate_does_not_depend_on_jobs(tmp_path, write_config):
    write_config(
        """
        command: calibrate
        seed: 11
        params: {dt: 0.05, horizon: 1.0, n_paths: 100, n_runs: 4}
        """,
    )
    serial = main(["--config", str(tmp_path), "--jobs", "1", "--out", str(tmp_path / "serial")])
    parallel = main(["--config", str(tmp_path), "--jobs", "2", "--out", str(tmp_path / "parallel")])
    assert serial in (EXIT_OK, EXIT_ACCEPTANCE)
    assert serial == parallel
    a = load_json(tmp_path / "serial" / "report.json")
    b = load_json(tmp_path / "parallel" / "report.json")
    assert a["rates"] == b["rates"]
    assert (tmp_path / "serial" / "calibration.csv").read_bytes() == (tmp_path / "parallel" / "calibration.csv").read_bytes()
