"""This module contains classes to store run artifact metadata and content."""

import csv
import io
import json
import logging
import math
import os
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from fermion_limits.errors import ContractError

logger = logging.getLogger(__name__)

HASH_HEADER = "# config-hash: "


def format_float(value: Any) -> str:
    """
    Formats a number with 17 significant digits, the round-trip precision.
    Labels pass through unchanged.
    """
    match value:
        case None:
            return ""
        case bool() | np.bool_():
            return "true" if value else "false"
        case str():
            return value
        case int() | np.integer():
            return str(int(value))
        case _:
            return format(float(value), ".17g")


def to_plain(value: Any) -> Any:
    """
    Converts numpy scalars and arrays, tuples and dataclass-like objects to
    JSON-ready Python values. Non-finite floats become None.
    """
    match value:
        case dict():
            return {str(k): to_plain(v) for k, v in value.items()}
        case list() | tuple():
            return [to_plain(v) for v in value]
        case np.ndarray():
            return to_plain(value.tolist())
        case bool() | np.bool_():
            return bool(value)
        case str():
            return value
        case int() | np.integer():
            return int(value)
        case float() | np.floating():
            return float(value) if math.isfinite(value) else None
        case complex() | np.complexfloating():
            return [to_plain(value.real), to_plain(value.imag)]
        case _ if hasattr(value, "__dataclass_fields__"):
            return {k: to_plain(getattr(value, k)) for k in value.__dataclass_fields__}
        case _:
            return value


class ArtifactInfo:
    """A class to store artifact metadata."""

    def __init__(self, artifact_name: str, config_hash: str, artifact_size: int = 0):
        """Initializes `ArtifactInfo` instance.

        Args:
            artifact_name: file name inside the output directory
            config_hash: hash of the configuration that produced the artifact
            artifact_size: size of the encoded content in bytes
        """
        self.artifact_name = artifact_name
        self.config_hash = config_hash
        self.artifact_size = artifact_size

    @property
    def artifact_kind(self) -> str:
        return os.path.splitext(self.artifact_name)[1].lstrip(".")

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}({self.artifact_name!r}, "
            f"size={self.artifact_size}, hash={self.config_hash[:12]})"
        )


class Artifact(ArtifactInfo):
    """A class to store artifact metadata and encoded content."""

    def __init__(self, artifact_name: str, config_hash: str, artifact_stream: io.BytesIO):
        """Initializes `Artifact` instance with metadata and content stream.

        Args:
            artifact_name: file name inside the output directory
            config_hash: hash of the configuration that produced the artifact
            artifact_stream: encoded content as `io.BytesIO`
        """
        super().__init__(
            artifact_name=artifact_name,
            config_hash=config_hash,
            artifact_size=artifact_stream.getbuffer().nbytes,
        )
        self.artifact_stream = artifact_stream

    @classmethod
    def from_rows(
        cls,
        artifact_name: str,
        config_hash: str,
        columns: Sequence[str],
        rows: Iterable[Sequence[Any]],
    ) -> "Artifact":
        """
        Encodes a table as CSV with a config-hash comment line, RFC-4180
        framing and 17-significant-digit floats.

        Raises:
            ContractError: if a row does not match the columns
        """
        buffer = io.StringIO(newline="")
        buffer.write(f"{HASH_HEADER}{config_hash}\r\n")
        writer = csv.writer(buffer, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                logger.error(
                    f"({artifact_name}) row of {len(row)} values for "
                    f"{len(columns)} columns"
                )
                raise ContractError(
                    f"Row {list(row)!r} does not match columns {list(columns)!r}"
                )
            writer.writerow([format_float(v) for v in row])
        return cls(artifact_name, config_hash, io.BytesIO(buffer.getvalue().encode("utf-8")))

    @classmethod
    def from_series(
        cls, artifact_name: str, config_hash: str, series: dict[str, Sequence[Any]]
    ) -> "Artifact":
        """Encodes equally long columns (e.g. a time series keyed by name)."""
        columns = list(series)
        lengths = {len(series[c]) for c in columns}
        if len(lengths) > 1:
            raise ContractError(f"Columns of {artifact_name} differ in length: {lengths}")
        return cls.from_rows(
            artifact_name, config_hash, columns, zip(*(series[c] for c in columns))
        )

    @classmethod
    def from_summary(cls, artifact_name: str, config_hash: str, summary: dict) -> "Artifact":
        """Encodes a summary as sorted JSON carrying the config hash."""
        payload = to_plain(dict(summary, config_hash=config_hash))
        text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"
        return cls(artifact_name, config_hash, io.BytesIO(text.encode("utf-8")))

    @classmethod
    def from_config(cls, config) -> "Artifact":
        """Echoes a resolved `ExperimentConfig` as YAML."""
        text = f"{HASH_HEADER}{config.config_hash}\n{config.to_yaml()}"
        return cls("config.yaml", config.config_hash, io.BytesIO(text.encode("utf-8")))

    def write(self, directory: str) -> str:
        """Writes the artifact into `directory` and returns its path."""
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, self.artifact_name)
        with open(path, "wb") as stream:
            stream.write(self.artifact_stream.getvalue())
        logger.debug(f"({self.artifact_name}) wrote {self.artifact_size} bytes to {path}")
        return path


def read_hash(path: str) -> Optional[str]:
    """Reads the config hash of a written artifact, or None if it has none."""
    with open(path, "r", encoding="utf-8") as stream:
        if path.endswith(".json"):
            return json.load(stream).get("config_hash")
        first = stream.readline().rstrip("\r\n")
    return first[len(HASH_HEADER) :] if first.startswith(HASH_HEADER) else None
