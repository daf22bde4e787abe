"""
This module contains the `Workbench` class which runs one configured
experiment and writes its artifacts (config echo, CSV tables, JSON summary
and run log) to an output directory.
"""

from importlib import metadata
import logging
import os
import platform
import time
from typing import Optional

import numpy as np
import scipy
import yaml

from fermion_limits.artifacts import Artifact, ArtifactInfo, read_hash
from fermion_limits.config import HASH_EXCLUDED, ExperimentConfig
from fermion_limits.errors import AcceptanceError
from fermion_limits.experiments import (
    RunResult,
    evaluate_acceptance,
    run_compare,
    run_fock_verify,
    run_hf,
    run_nbody,
    run_newton,
    run_rate_sweep,
    run_vlasov,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def package_versions() -> dict[str, str]:
    try:
        own = metadata.version("fermion-limits")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "fermion-limits": own,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


class Workbench:
    """
    A wrapper class to use when running experiments. Dispatches on the
    experiment kind of an `ExperimentConfig`, writes the artifacts of the run
    and checks them against the configured acceptance bands.
    """

    def __init__(self, config: ExperimentConfig, output: Optional[str] = None):
        """Initializes workbench instance.

        Args:
            config:
                resolved experiment configuration
            output:
                directory to write artifacts to. defaults to the `output`
                value of the configuration
        """
        self.config = config
        self.name = config["kind"].upper()
        self.output = output if output is not None else config["output"]
        self.timings: dict[str, float] = {}
        self.written: list[ArtifactInfo] = []
        self.__handler = self.__open_run_log()

    def __open_run_log(self) -> logging.FileHandler:
        os.makedirs(self.output, exist_ok=True)
        handler = logging.FileHandler(
            os.path.join(self.output, "run.log"), mode="w", encoding="utf-8"
        )
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        package = logging.getLogger("fermion_limits")
        self.__level = package.level
        package.addHandler(handler)
        if package.getEffectiveLevel() > logging.DEBUG:
            package.setLevel(logging.DEBUG)
        versions = ", ".join(f"{k} {v}" for k, v in package_versions().items())
        logger.info(f"({self.name}) versions: {versions}")
        logger.info(f"({self.name}) config hash {self.config.config_hash}")
        return handler

    def __enter__(self, *args):
        """
        Allows for use of context manager with `Workbench` class.

        Opens context manager.
        """
        return self

    def __exit__(self, *args):
        """
        Allows for use of context manager with `Workbench` class.

        Closes context manager.
        """
        self.close()

    def close(self):
        """Detaches and closes the run log."""
        package = logging.getLogger("fermion_limits")
        package.removeHandler(self.__handler)
        package.setLevel(self.__level)
        self.__handler.close()
        logger.debug(f"({self.name}) Workbench closed")

    def __run_experiment(self) -> RunResult:
        match self.config["kind"]:
            case "hf-run":
                return run_hf(self.config)
            case "vlasov-run":
                return run_vlasov(self.config)
            case "compare":
                return run_compare(self.config)
            case "rate-sweep":
                return run_rate_sweep(self.config)
            case "nbody":
                return run_nbody(self.config)
            case "fock-verify":
                return run_fock_verify(self.config)
            case "newton":
                return run_newton(self.config)
            case _:
                logger.error(f"Invalid experiment kind: {self.config['kind']}")
                raise ValueError(f"Invalid experiment kind: {self.config['kind']}")

    def check_artifact(self, artifact: ArtifactInfo) -> bool:
        """
        Checks if `artifact` already exists in the output directory with the
        same size and config hash.
        """
        path = os.path.join(self.output, artifact.artifact_name)
        if not os.path.exists(path):
            return False
        return (
            os.path.getsize(path) == artifact.artifact_size
            and read_hash(path) == artifact.config_hash
        )

    def put_artifact(self, artifact: Artifact, check: bool = False) -> Optional[ArtifactInfo]:
        """
        Writes an artifact to the output directory.

        Args:
            artifact: artifact as `Artifact` object
            check: skip the write when a matching artifact already exists

        Returns:
            `ArtifactInfo` of the written artifact, None if it was skipped
        """
        if check and self.check_artifact(artifact):
            logger.debug(
                f"({self.name}) {artifact.artifact_name} already exists in "
                f"`{self.output}`. Skipping write."
            )
            return None
        artifact.write(self.output)
        info = ArtifactInfo(artifact.artifact_name, artifact.config_hash, artifact.artifact_size)
        self.written.append(info)
        return info

    def run(self) -> dict:
        """
        Runs the experiment and writes config.yaml, one CSV per table and
        summary.json.

        Returns:
            the summary written to summary.json

        Raises:
            AcceptanceError: if a configured acceptance band fails; the
                artifacts are written first
        """
        config_hash = self.config.config_hash
        self.put_artifact(Artifact.from_config(self.config))
        start = time.perf_counter()
        result = self.__run_experiment()
        self.timings["experiment"] = time.perf_counter() - start
        logger.info(f"({self.name}) experiment took {self.timings['experiment']:.3f} s")

        start = time.perf_counter()
        verdicts = evaluate_acceptance(self.config["acceptance"], result.measurements)
        passed = all(v["passed"] for v in verdicts.values())
        summary = {
            "kind": result.kind,
            "config": {k: v for k, v in self.config.values.items() if k not in HASH_EXCLUDED},
            "measurements": result.measurements,
            "results": result.summary,
            "acceptance": verdicts,
            "passed": passed,
        }
        for name, table in sorted(result.tables.items()):
            self.put_artifact(Artifact.from_series(name, config_hash, table))
        self.put_artifact(Artifact.from_summary("summary.json", config_hash, summary))
        self.timings["artifacts"] = time.perf_counter() - start
        logger.info(f"({self.name}) artifacts took {self.timings['artifacts']:.3f} s")

        if not passed:
            failed = sorted(name for name, v in verdicts.items() if not v["passed"])
            logger.error(f"({self.name}) acceptance failed: {failed}")
            raise AcceptanceError(f"Acceptance bands failed: {', '.join(failed)}")
        logger.info(f"({self.name}) run complete, {len(self.written)} artifacts written")
        return summary
