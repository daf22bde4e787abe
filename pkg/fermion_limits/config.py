"""This module contains the `ExperimentConfig` class which loads, validates and
resolves experiment configuration files against the published schema in
`presets/schema.yaml`.

Configuration files are YAML; JSON files are accepted unchanged since YAML is
a superset of JSON. Schema violations raise `ConfigError` with the line of
the offending key.
"""

import copy
import hashlib
import json
import logging
import os
from importlib import resources
from typing import Any, Optional, Union

import yaml

from fermion_limits.errors import ConfigError

logger = logging.getLogger(__name__)

HASH_EXCLUDED = ("output", "jobs")

# measurements each experiment kind reports, the names acceptance bands may use
MEASUREMENTS = {
    "hf-run": (
        "energy_drift",
        "trace_error",
        "density_mass_error",
        "phase_mass_error",
        "normalization_error",
    ),
    "vlasov-run": ("mass_drift", "energy_drift", "l2_drift", "max_boundary_mass"),
    "compare": (
        "max_distance",
        "final_distance",
        "max_density_distance",
        "roundtrip_error",
        "l2_identity_error",
        "commutator_check",
        "duhamel_holds",
    ),
    "rate-sweep": (
        "distance_slope",
        "remainder_slope",
        "commutator_slope",
        "exchange_monotone",
        "hartree_ratio",
        "duhamel_holds",
    ),
    "nbody": ("nbody_monotone", "final_distance_max"),
    "fock-verify": (
        "rdm_error",
        "vacuum_error",
        "conjugation_error",
        "unitarity_error",
        "pairing_error",
        "wick_quasi_free",
        "wick_slater",
        "wick_entangled_min",
        "fluctuation_initial",
        "free_flow_distance",
    ),
    "newton": ("energy_drift", "momentum_drift", "final_distance"),
}


def preset_path(name: str) -> str:
    """Path of a named preset shipped with the package."""
    return str(resources.files("fermion_limits").joinpath("presets", f"{name}.yaml"))


def list_presets() -> list[str]:
    folder = resources.files("fermion_limits").joinpath("presets")
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in folder.iterdir()
        if entry.name.endswith(".yaml") and entry.name != "schema.yaml"
    )


def load_schema() -> dict:
    with open(preset_path("schema"), "r", encoding="utf-8") as stream:
        return yaml.safe_load(stream)


def _key_lines(node: Optional[yaml.Node], prefix: tuple = ()) -> dict[tuple, int]:
    """Maps key paths of a composed YAML document to 1-based line numbers."""
    lines: dict[tuple, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            lines[path] = key.start_mark.line + 1
            lines.update(_key_lines(value, path))
    return lines


class _Validator:
    def __init__(self, schema: dict, lines: dict[tuple, int]):
        self.schema = schema
        self.lines = lines

    def fail(self, path: tuple, message: str) -> None:
        line = None
        for depth in range(len(path), 0, -1):
            line = self.lines.get(path[:depth])
            if line is not None:
                break
        name = ".".join(str(p) for p in path) or "<document>"
        logger.error(f"(CONFIG) {name}: {message}")
        raise ConfigError(f"{name}: {message}", line=line)

    def resolve(self, values: Any, fields: dict, path: tuple = ()) -> dict:
        if values is None:
            values = {}
        if not isinstance(values, dict):
            self.fail(path, "expected a mapping")
        for key in values:
            if key not in fields:
                self.fail(path + (key,), "unknown key")
        resolved = {}
        for key, rule in fields.items():
            here = path + (key,)
            if key in values:
                resolved[key] = self.check(values[key], rule, here)
            elif rule.get("required"):
                self.fail(here, "required key is missing")
            elif rule["type"] == "map":
                resolved[key] = self.resolve({}, rule["fields"], here)
            else:
                resolved[key] = copy.deepcopy(rule.get("default"))
        return resolved

    def check(self, value: Any, rule: dict, path: tuple) -> Any:
        kind = rule["type"]
        if value is None:
            if rule.get("nullable"):
                return None
            self.fail(path, "value must not be null")
        match kind:
            case "map":
                return self.resolve(value, rule["fields"], path)
            case "bands":
                return self.check_bands(value, path)
            case "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    self.fail(path, f"expected an integer, got {value!r}")
                self.check_range(value, rule, path)
            case "float":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    self.fail(path, f"expected a number, got {value!r}")
                value = float(value)
                self.check_range(value, rule, path)
            case "bool":
                if not isinstance(value, bool):
                    self.fail(path, f"expected true or false, got {value!r}")
            case "str":
                if not isinstance(value, str):
                    self.fail(path, f"expected a string, got {value!r}")
            case "float-list" | "int-list":
                value = self.check_list(value, rule, path, kind == "int-list")
            case _:
                raise ConfigError(f"Schema type {kind!r} of {path} is not supported")
        if "choices" in rule and value not in rule["choices"]:
            self.fail(path, f"{value!r} is not one of {rule['choices']}")
        return value

    def check_range(self, value: float, rule: dict, path: tuple) -> None:
        if "min" in rule and value < rule["min"]:
            self.fail(path, f"{value} is below the minimum {rule['min']}")
        if "max" in rule and value > rule["max"]:
            self.fail(path, f"{value} is above the maximum {rule['max']}")
        if "min_exclusive" in rule and value <= rule["min_exclusive"]:
            self.fail(path, f"{value} must be greater than {rule['min_exclusive']}")
        if "max_exclusive" in rule and value >= rule["max_exclusive"]:
            self.fail(path, f"{value} must be less than {rule['max_exclusive']}")

    def check_list(self, value: Any, rule: dict, path: tuple, integers: bool) -> list:
        if not isinstance(value, list):
            self.fail(path, f"expected a list, got {value!r}")
        items = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                self.fail(path, f"list entry {item!r} is not a number")
            if integers and not isinstance(item, int):
                self.fail(path, f"list entry {item!r} is not an integer")
            if "item_min" in rule and item < rule["item_min"]:
                self.fail(path, f"list entry {item} is below {rule['item_min']}")
            if "item_max" in rule and item > rule["item_max"]:
                self.fail(path, f"list entry {item} is above {rule['item_max']}")
            items.append(int(item) if integers else float(item))
        if len(items) < rule.get("min_length", 0):
            self.fail(path, f"needs at least {rule['min_length']} entries")
        if rule.get("decreasing") and any(b >= a for a, b in zip(items, items[1:])):
            self.fail(path, f"entries must be strictly decreasing, got {items}")
        return items

    def check_bands(self, value: Any, path: tuple) -> dict:
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping of acceptance bands")
        bands = {}
        for name, band in value.items():
            here = path + (name,)
            if isinstance(band, bool):
                bands[name] = band
            elif (
                isinstance(band, list)
                and len(band) == 2
                and all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in band)
                and band[0] <= band[1]
            ):
                bands[name] = [float(band[0]), float(band[1])]
            else:
                self.fail(here, f"band must be [low, high] or a boolean, got {band!r}")
        return bands


class ExperimentConfig:
    """
    A validated experiment configuration with every default resolved.

    Values are reached by item access, e.g. `config["grid"]["n"]`.
    """

    def __init__(self, values: dict, source: Optional[str] = None):
        self.values = values
        self.source = source

    @classmethod
    def from_text(cls, text: str, source: Optional[str] = None) -> "ExperimentConfig":
        """
        Parses and validates a YAML or JSON document.

        Raises:
            ConfigError: if the document cannot be parsed or violates the schema
        """
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            logger.error(f"(CONFIG) cannot parse {source or 'document'}: {exc}")
            raise ConfigError(f"Cannot parse configuration: {exc}", line=line) from exc
        validator = _Validator(load_schema(), _key_lines(root))
        values = validator.resolve(raw, validator.schema)
        _check_consistency(values, validator)
        logger.debug(f"(CONFIG) loaded {values['kind']} configuration from {source}")
        return cls(values, source)

    @classmethod
    def from_file(cls, path: Union[str, os.PathLike]) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as stream:
                text = stream.read()
        except OSError as exc:
            logger.error(f"(CONFIG) cannot read {path}: {exc}")
            raise ConfigError(f"Cannot read configuration file {path}: {exc}") from exc
        return cls.from_text(text, source=str(path))

    @classmethod
    def from_preset(cls, name: str) -> "ExperimentConfig":
        if name not in list_presets():
            raise ConfigError(f"Unknown preset {name!r}; available: {list_presets()}")
        return cls.from_file(preset_path(name))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __repr__(self) -> str:
        return f"ExperimentConfig(kind={self.values['kind']!r}, source={self.source!r})"

    def override(self, **changes: Any) -> "ExperimentConfig":
        """Returns a copy with top-level values replaced (None is ignored)."""
        values = copy.deepcopy(self.values)
        values.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(values, self.source)

    def canonical_json(self) -> str:
        hashed = {k: v for k, v in self.values.items() if k not in HASH_EXCLUDED}
        return json.dumps(hashed, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the resolved configuration."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.values, sort_keys=True, default_flow_style=None)


def _check_consistency(values: dict, validator: _Validator) -> None:
    grid = values["grid"]
    if grid["n"] & (grid["n"] - 1):
        validator.fail(("grid", "n"), f"{grid['n']} is not a power of two")
    for name in values["acceptance"]:
        if name not in MEASUREMENTS[values["kind"]]:
            validator.fail(
                ("acceptance", name),
                f"{values['kind']} runs report no measurement {name!r}",
            )
    match values["kind"]:
        case "rate-sweep":
            if values["kernel"]["sign"] == "free":
                validator.fail(("kernel", "sign"), "a rate sweep needs an interaction")
            if len(values["hbar_values"]) < 4:
                validator.fail(("hbar_values",), "a sweep needs at least 4 values")
            if values["hbar_values"][0] / values["hbar_values"][-1] < 4:
                validator.fail(("hbar_values",), "values must span a factor of 4")
            for hbar in values["hbar_values"]:
                cells = values["sweep"]["cells_per_hbar"] / hbar
                if abs(cells - round(cells)) > 1e-9 or int(round(cells)) & (
                    int(round(cells)) - 1
                ):
                    validator.fail(
                        ("sweep", "cells_per_hbar"),
                        f"cells_per_hbar/hbar = {cells:g} is not a power of two",
                    )
        case "fock-verify":
            if values["fock"]["interacting"] or values["fock"]["t"] > 0:
                if max(values["fock"]["m_values"]) > 6:
                    validator.fail(
                        ("fock", "m_values"), "fluctuation dynamics supports m ≤ 6"
                    )
        case "nbody":
            if max(values["nbody"]["n_values"]) > values["nbody"]["m"]:
                validator.fail(("nbody", "n_values"), "more particles than sites")
