import logging
import os

import pytest

from fermion_limits.cli import (
    EXIT_ACCEPTANCE,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    configure_logging,
    main,
)
from fermion_limits.config import list_presets
from fermion_limits.errors import NumericalError


@pytest.fixture(autouse=True)
def restore_package_logger():
    package = logging.getLogger("fermion_limits")
    handlers, level = list(package.handlers), package.level
    yield
    for handler in list(package.handlers):
        if handler not in handlers:
            package.removeHandler(handler)
    package.setLevel(level)


class TestMain:
    """Test the command-line entry point and its exit codes."""

    def test_list_presets(self, capsys):
        assert main(["--list-presets"]) == EXIT_OK
        assert capsys.readouterr().out.split() == list_presets()

    def test_run_config(self, write_config, quick_hf_config):
        assert main(["--config", write_config(quick_hf_config)]) == EXIT_OK
        assert os.path.exists(os.path.join(quick_hf_config["output"], "summary.json"))

    def test_output_override(self, write_config, quick_hf_config, tmp_path):
        output = str(tmp_path / "override")
        assert main(["--config", write_config(quick_hf_config), "--output", output]) == 0
        assert os.path.exists(os.path.join(output, "hf_series.csv"))
        assert not os.path.exists(quick_hf_config["output"])

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["--preset", "quick", "--config", "experiment.yaml"],
            ["--preset", "no-such-preset"],
            ["--preset", "quick", "--jobs", "0"],
            ["--preset", "quick", "--seed", "-1"],
        ],
    )
    def test_config_errors(self, argv, caplog):
        assert main(argv) == EXIT_CONFIG
        assert "(CLI) configuration error" in caplog.text

    def test_missing_file(self, tmp_path, caplog):
        assert main(["--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
        assert "Cannot read configuration file" in caplog.text

    def test_schema_error(self, write_config, quick_hf_config):
        quick_hf_config["grid"] = {"n": 48}
        assert main(["--config", write_config(quick_hf_config)]) == EXIT_CONFIG

    def test_acceptance_failure(self, write_config, quick_hf_config, caplog):
        quick_hf_config["acceptance"] = {"energy_drift": [-2.0, -1.0]}
        assert main(["--config", write_config(quick_hf_config)]) == EXIT_ACCEPTANCE
        assert "(CLI) Acceptance bands failed: energy_drift" in caplog.text

    def test_numerical_failure(self, write_config, quick_hf_config, mocker, caplog):
        mocker.patch(
            "fermion_limits.workbench.run_hf", side_effect=NumericalError("solver diverged")
        )
        assert main(["--config", write_config(quick_hf_config)]) == EXIT_NUMERICAL
        assert "(CLI) NumericalError: solver diverged" in caplog.text


class TestLogging:
    """Test the stderr log handler installed by the entry point."""

    def test_configure_logging_once(self):
        configure_logging()
        configure_logging(verbose=True)
        package = logging.getLogger("fermion_limits")
        named = [h for h in package.handlers if h.get_name() == "fermion-limits-stderr"]
        assert len(named) == 1
        assert named[0].level == logging.DEBUG
        assert package.level == logging.DEBUG

    def test_configure_logging_quiet(self):
        configure_logging()
        assert logging.getLogger("fermion_limits").level == logging.INFO
