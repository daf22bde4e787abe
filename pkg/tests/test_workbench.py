import csv
import json
import logging
import os

import pytest
import yaml

from fermion_limits.artifacts import Artifact, read_hash
from fermion_limits.comparison import RateStudy
from fermion_limits.config import ExperimentConfig
from fermion_limits.errors import AcceptanceError
from fermion_limits.experiments import RunResult
from fermion_limits.workbench import Workbench, package_versions


@pytest.fixture
def hf_config(quick_hf_config):
    return ExperimentConfig.from_text(yaml.safe_dump(quick_hf_config), source="test")


def read_table(path):
    with open(path, "r", encoding="utf-8", newline="") as stream:
        lines = stream.read().split("\r\n")
    return list(csv.reader(line for line in lines[1:] if line))


def test_package_versions():
    versions = package_versions()
    assert set(versions) == {"fermion-limits", "python", "numpy", "scipy", "pyyaml"}


class TestWorkbench:
    """Test running experiments through the Workbench."""

    def test_Workbench(self, hf_config):
        with Workbench(hf_config) as bench:
            assert bench.name == "HF-RUN"
            assert bench.output == hf_config["output"]
            assert bench.written == []
        assert os.path.exists(os.path.join(hf_config["output"], "run.log"))

    def test_Workbench_output_override(self, hf_config, tmp_path):
        with Workbench(hf_config, output=str(tmp_path / "elsewhere")) as bench:
            assert bench.output == str(tmp_path / "elsewhere")
        assert os.path.exists(tmp_path / "elsewhere" / "run.log")

    def test_close_detaches_run_log(self, hf_config):
        package = logging.getLogger("fermion_limits")
        before = list(package.handlers)
        with Workbench(hf_config):
            assert len(package.handlers) == len(before) + 1
        assert package.handlers == before

    def test_run(self, hf_config):
        with Workbench(hf_config) as bench:
            summary = bench.run()
        output = hf_config["output"]
        names = sorted(os.listdir(output))
        assert names == ["config.yaml", "hf_series.csv", "run.log", "summary.json"]
        assert [info.artifact_name for info in bench.written] == [
            "config.yaml",
            "hf_series.csv",
            "summary.json",
        ]
        for name in ("config.yaml", "hf_series.csv", "summary.json"):
            assert read_hash(os.path.join(output, name)) == hf_config.config_hash
        assert summary["kind"] == "hf-run"
        assert summary["passed"] is True
        assert "output" not in summary["config"]
        assert set(bench.timings) == {"experiment", "artifacts"}

    def test_run_tables(self, hf_config):
        with Workbench(hf_config) as bench:
            summary = bench.run()
        rows = read_table(os.path.join(hf_config["output"], "hf_series.csv"))
        assert rows[0] == ["t", "trace", "density_mass", "phase_mass", "energy", "hermiticity"]
        assert len(rows) - 1 == summary["results"]["snapshots"]
        with open(os.path.join(hf_config["output"], "summary.json"), encoding="utf-8") as f:
            written = json.load(f)
        assert written["measurements"] == pytest.approx(summary["measurements"])
        assert written["config_hash"] == hf_config.config_hash

    def test_run_deterministic(self, hf_config, tmp_path):
        outputs = [str(tmp_path / "first"), str(tmp_path / "second")]
        for output in outputs:
            with Workbench(hf_config, output=output) as bench:
                bench.run()
        for name in ("config.yaml", "hf_series.csv", "summary.json"):
            with open(os.path.join(outputs[0], name), "rb") as first:
                with open(os.path.join(outputs[1], name), "rb") as second:
                    assert first.read() == second.read()

    def test_run_log(self, hf_config):
        with Workbench(hf_config) as bench:
            bench.run()
        with open(os.path.join(hf_config["output"], "run.log"), encoding="utf-8") as f:
            log = f.read()
        assert f"(HF-RUN) config hash {hf_config.config_hash}" in log
        assert "(HF-RUN) versions: fermion-limits" in log
        assert "run complete, 3 artifacts written" in log

    def test_run_acceptance_failure(self, quick_hf_config, caplog):
        quick_hf_config["acceptance"] = {"energy_drift": [-2.0, -1.0]}
        config = ExperimentConfig.from_text(yaml.safe_dump(quick_hf_config))
        with Workbench(config) as bench:
            with pytest.raises(AcceptanceError) as exc:
                bench.run()
        assert "Acceptance bands failed: energy_drift" in str(exc.value)
        assert "acceptance failed: ['energy_drift']" in caplog.text
        with open(os.path.join(config["output"], "summary.json"), encoding="utf-8") as f:
            summary = json.load(f)
        assert summary["passed"] is False
        assert summary["acceptance"]["energy_drift"]["passed"] is False

    def test_run_invalid_kind(self, hf_config, caplog):
        config = hf_config.override(kind="bogus")
        with Workbench(config) as bench:
            with pytest.raises(ValueError) as exc:
                bench.run()
        assert "Invalid experiment kind: bogus" in str(exc.value)
        assert "Invalid experiment kind: bogus" in caplog.text

    def test_run_mocked_experiment(self, hf_config, mocker):
        result = RunResult(
            "hf-run",
            {"a.csv": {"t": [0.0, 1.0]}, "b.csv": {"x": [2.0]}},
            {"note": "mocked"},
            {"energy_drift": 0.0},
        )
        mock_run = mocker.patch("fermion_limits.workbench.run_hf", return_value=result)
        with Workbench(hf_config) as bench:
            summary = bench.run()
        mock_run.assert_called_once_with(hf_config)
        assert summary["results"] == {"note": "mocked"}
        assert sorted(os.listdir(hf_config["output"])) == [
            "a.csv",
            "b.csv",
            "config.yaml",
            "run.log",
            "summary.json",
        ]


class TestArtifactChecks:
    """Test skipping artifacts that are already written."""

    def test_check_artifact(self, hf_config):
        artifact = Artifact.from_series("t.csv", hf_config.config_hash, {"t": [0.0]})
        with Workbench(hf_config) as bench:
            assert bench.check_artifact(artifact) is False
            info = bench.put_artifact(artifact)
            assert info.artifact_name == "t.csv"
            assert bench.check_artifact(artifact) is True

    def test_check_artifact_other_hash(self, hf_config):
        first = Artifact.from_series("t.csv", "a" * 64, {"t": [0.0]})
        second = Artifact.from_series("t.csv", "b" * 64, {"t": [0.0]})
        with Workbench(hf_config) as bench:
            bench.put_artifact(first)
            assert bench.check_artifact(second) is False

    def test_put_artifact_skips(self, hf_config, caplog):
        artifact = Artifact.from_series("t.csv", hf_config.config_hash, {"t": [0.0]})
        with Workbench(hf_config) as bench:
            bench.put_artifact(artifact)
            assert bench.put_artifact(artifact, check=True) is None
            assert len(bench.written) == 1
        assert "t.csv already exists" in caplog.text


def rate_sweep_config(output):
    return ExperimentConfig.from_text(
        yaml.safe_dump(
            {
                "kind": "rate-sweep",
                "output": output,
                "hbar_values": [0.5, 0.25, 0.125, 0.0625],
                "dt": 0.005,
                "t_end": 0.01,
                "snapshots": 1,
                "sweep": {"commutator_points": 2},
            }
        ),
        source="test",
    )


def synthetic_study(hbar_values):
    members = [
        {
            "hbar": h,
            "t": [0.0, 0.01],
            "distance_L1": [0.0, h],
            "distance_L2_phase": [0.0, h],
            "density_L1": [0.0, h],
            "B_L1": [h**2, h**2],
            "exchange_L1": [0.0, h],
            "commutator_L1": h,
            "duhamel": None,
        }
        for h in hbar_values
    ]
    return {
        "members": members,
        "distance": RateStudy(list(hbar_values), list(hbar_values), 1.0, 0.0),
        "remainder": RateStudy(list(hbar_values), [h**2 for h in hbar_values], 2.0, 0.0),
        "commutator": RateStudy(list(hbar_values), list(hbar_values), 1.0, 0.0),
        "exchange_max": list(hbar_values),
        "hartree_vs_hf": [0.01 * h for h in hbar_values],
    }


class TestRateSweep:
    """Test rate sweeps end to end through the Workbench."""

    def test_run_rate_sweep_tables(self, tmp_path, mocker):
        config = rate_sweep_config(str(tmp_path / "sweep"))
        mock_study = mocker.patch(
            "fermion_limits.experiments.run_rate_study",
            return_value=synthetic_study(config["hbar_values"]),
        )
        with Workbench(config) as bench:
            summary = bench.run()
        mock_study.assert_called_once()
        rows = read_table(os.path.join(config["output"], "rate_fits.csv"))
        assert rows == [
            ["quantity", "slope", "residual", "intercept", "excluded"],
            ["commutator", "1", "0", "0", "0"],
            ["distance", "1", "0", "0", "0"],
            ["remainder", "2", "0", "0", "0"],
        ]
        series = read_table(os.path.join(config["output"], "rate_series.csv"))
        assert len(series) - 1 == 8
        assert summary["measurements"]["remainder_slope"] == 2.0
        assert summary["measurements"]["hartree_ratio"] == pytest.approx(0.01)
        assert summary["passed"] is True

    @pytest.mark.slow
    def test_run_rate_sweep(self, tmp_path):
        config = rate_sweep_config(str(tmp_path / "sweep"))
        with Workbench(config) as bench:
            summary = bench.run()
        names = sorted(os.listdir(config["output"]))
        assert names == [
            "config.yaml",
            "rate_fits.csv",
            "rate_series.csv",
            "run.log",
            "summary.json",
        ]
        rows = read_table(os.path.join(config["output"], "rate_fits.csv"))
        assert [row[0] for row in rows[1:]] == ["commutator", "distance", "remainder"]
        assert summary["measurements"]["remainder_slope"] > 0
        assert summary["results"]["hbar_values"] == [0.5, 0.25, 0.125, 0.0625]


class TestPresets:
    """Test that shipped presets run and pass their acceptance bands."""

    @pytest.mark.parametrize(
        "name",
        [
            "quick",
            "wigner-roundtrip",
            pytest.param("free-flow", marks=pytest.mark.slow),
            pytest.param("fock-verify", marks=pytest.mark.slow),
        ],
    )
    def test_preset_runs(self, name, tmp_path):
        config = ExperimentConfig.from_preset(name)
        with Workbench(config, output=str(tmp_path / name)) as bench:
            summary = bench.run()
        assert summary["passed"] is True
        assert summary["acceptance"]
        assert os.path.exists(tmp_path / name / "summary.json")
