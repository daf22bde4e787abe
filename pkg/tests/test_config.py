import json

import pytest
import yaml

from fermion_limits.config import (
    MEASUREMENTS,
    ExperimentConfig,
    list_presets,
    load_schema,
    preset_path,
)
from fermion_limits.errors import ConfigError


class TestPresets:
    """Test the presets shipped with the package."""

    def test_list_presets(self):
        presets = list_presets()
        assert "schema" not in presets
        assert {"quick", "theorem-a03", "fock-verify", "newton"} <= set(presets)
        assert presets == sorted(presets)

    @pytest.mark.parametrize("name", list_presets())
    def test_presets_load(self, name):
        config = ExperimentConfig.from_preset(name)
        assert config["kind"] in MEASUREMENTS
        assert config.source == preset_path(name)
        for band in config["acceptance"]:
            assert band in MEASUREMENTS[config["kind"]]

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_preset("no-such-preset")
        assert "Unknown preset 'no-such-preset'" in str(exc.value)

    def test_schema_lists_every_kind(self):
        schema = load_schema()
        assert set(schema["kind"]["choices"]) == set(MEASUREMENTS)


class TestDefaults:
    """Test resolution of defaults against the schema."""

    def test_minimal_document(self):
        config = ExperimentConfig.from_text("kind: hf-run\n")
        assert config["grid"] == {"d": 1, "n": 128, "length": pytest.approx(12.566370614359172)}
        assert config["kernel"]["sign"] == "repulsive"
        assert config["kernel"]["a"] == 0.3
        assert config["kernel"]["verify"] is True
        assert config["hbar"] == 0.125
        assert config["exchange"] is True
        assert config["initial"]["center"] is None
        assert config["acceptance"] == {}
        assert config["seed"] == 0
        assert config["jobs"] == 1

    def test_integers_become_floats(self):
        config = ExperimentConfig.from_text("kind: hf-run\nhbar: 1\nhbar_values: [1, 0.5]\n")
        assert isinstance(config["hbar"], float)
        assert all(isinstance(h, float) for h in config["hbar_values"])

    def test_json_document(self, write_config):
        path = write_config(
            json.dumps({"kind": "vlasov-run", "grid": {"n": 64}, "hbar": 0.25}),
            name="experiment.json",
        )
        config = ExperimentConfig.from_file(path)
        assert config["kind"] == "vlasov-run"
        assert config["grid"]["n"] == 64
        assert config.source == path

    def test_from_file_dict(self, write_config, quick_hf_config):
        config = ExperimentConfig.from_file(write_config(quick_hf_config))
        assert config["output"] == quick_hf_config["output"]
        assert config["snapshots"] == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_file(str(tmp_path / "missing.yaml"))
        assert "Cannot read configuration file" in str(exc.value)
        assert exc.value.line is None

    def test_repr(self):
        config = ExperimentConfig.from_text("kind: nbody\n", source="inline")
        assert repr(config) == "ExperimentConfig(kind='nbody', source='inline')"


class TestSchemaErrors:
    """Test schema violations and the lines they are reported on."""

    def test_parse_error(self, caplog):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\ngrid: [unclosed\n")
        assert "Cannot parse configuration" in str(exc.value)
        assert exc.value.line is not None
        assert "cannot parse" in caplog.text

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\nbogus: 1\n")
        assert exc.value.line == 2
        assert str(exc.value) == "line 2: bogus: unknown key"

    def test_nested_unknown_key(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\ngrid:\n  n: 64\n  width: 3\n")
        assert exc.value.line == 4
        assert "grid.width: unknown key" in str(exc.value)

    def test_missing_required(self, caplog):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("hbar: 0.1\n")
        assert "kind: required key is missing" in str(exc.value)
        assert exc.value.line is None
        assert "(CONFIG) kind: required key is missing" in caplog.text

    @pytest.mark.parametrize(
        "text, message",
        [
            ("kind: hf-run\nsnapshots: true\n", "expected an integer, got True"),
            ("kind: hf-run\nsnapshots: 2.5\n", "expected an integer, got 2.5"),
            ("kind: hf-run\ndt: fast\n", "expected a number, got 'fast'"),
            ("kind: hf-run\nexchange: 1\n", "expected true or false, got 1"),
            ("kind: hf-run\nkernel:\n  sign: weak\n", "'weak' is not one of"),
            ("kind: hf-run\nkinetic_prefactor: 0.25\n", "0.25 is not one of [0.5, 1.0]"),
            ("kind: hf-run\nsnapshots: 0\n", "0 is below the minimum 1"),
            ("kind: hf-run\nkernel:\n  a: 1.5\n", "1.5 must be less than 1"),
            ("kind: hf-run\nhbar: 0\n", "0.0 must be greater than 0"),
            ("kind: hf-run\nhbar: null\n", "value must not be null"),
            ("kind: hf-run\nhbar_values: [0.1, 0.2]\n", "must be strictly decreasing"),
            ("kind: hf-run\nhbar_values: []\n", "needs at least 1 entries"),
            ("kind: nbody\nnbody:\n  n_values: [1.5]\n", "is not an integer"),
            ("kind: kinetic\n", "'kinetic' is not one of"),
        ],
    )
    def test_invalid_values(self, text, message):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text(text)
        assert message in str(exc.value)

    def test_value_line(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\nhbar: 0.25\ndt: fast\n")
        assert exc.value.line == 3

    @pytest.mark.parametrize(
        "band",
        [[1.0, 0.0], [0.0], "tight", [0.0, True]],
    )
    def test_malformed_band(self, band):
        text = yaml.safe_dump({"kind": "hf-run", "acceptance": {"energy_drift": band}})
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text(text)
        assert "band must be [low, high] or a boolean" in str(exc.value)

    def test_bands(self):
        config = ExperimentConfig.from_text(
            "kind: rate-sweep\nacceptance:\n  distance_slope: [0.8, 1.2]\n"
            "  exchange_monotone: true\n"
        )
        assert config["acceptance"] == {"distance_slope": [0.8, 1.2], "exchange_monotone": True}


class TestConsistency:
    """Test the cross-key checks applied after schema validation."""

    def test_grid_size_power_of_two(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\nhbar: 0.25\ngrid:\n  n: 48\n")
        assert exc.value.line == 4
        assert str(exc.value) == "line 4: grid.n: 48 is not a power of two"

    def test_band_for_other_kind(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: hf-run\nacceptance:\n  max_distance: [0, 1]\n")
        assert exc.value.line == 3
        assert "hf-run runs report no measurement 'max_distance'" in str(exc.value)

    @pytest.mark.parametrize(
        "values, message",
        [
            ({"kernel": {"sign": "free"}}, "a rate sweep needs an interaction"),
            ({"hbar_values": [0.125, 0.0625, 0.03125]}, "a sweep needs at least 4 values"),
            ({"hbar_values": [0.125, 0.1, 0.08, 0.0625]}, "values must span a factor of 4"),
            ({"sweep": {"cells_per_hbar": 12.0}}, "cells_per_hbar/hbar = 96 is not a power of two"),
        ],
    )
    def test_rate_sweep(self, values, message):
        text = yaml.safe_dump({"kind": "rate-sweep", **values})
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text(text)
        assert message in str(exc.value)

    def test_fock_capacity(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: fock-verify\nfock:\n  m_values: [3, 7]\n")
        assert "fluctuation dynamics supports m ≤ 6" in str(exc.value)

    def test_fock_static_checks_allow_seven_modes(self):
        config = ExperimentConfig.from_text(
            "kind: fock-verify\nfock:\n  m_values: [7]\n  t: 0\n"
        )
        assert config["fock"]["m_values"] == [7]

    def test_nbody_particles(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text("kind: nbody\nnbody:\n  m: 4\n  n_values: [2, 5]\n")
        assert "more particles than sites" in str(exc.value)


class TestHash:
    """Test the canonical form and hash of a configuration."""

    def test_hash_ignores_order_and_output(self):
        first = ExperimentConfig.from_text(
            "kind: hf-run\nhbar: 0.25\ngrid:\n  n: 64\noutput: a\njobs: 2\n"
        )
        second = ExperimentConfig.from_text(
            "grid:\n  n: 64\noutput: b\nkind: hf-run\nhbar: 0.25\n"
        )
        assert first.config_hash == second.config_hash
        assert len(first.config_hash) == 64

    def test_hash_tracks_values(self):
        base = ExperimentConfig.from_text("kind: hf-run\n")
        assert base.override(seed=5).config_hash != base.config_hash
        assert base.override(output="elsewhere").config_hash == base.config_hash

    def test_canonical_json(self):
        config = ExperimentConfig.from_text("kind: hf-run\n")
        canonical = json.loads(config.canonical_json())
        assert "output" not in canonical
        assert "jobs" not in canonical
        assert canonical["kind"] == "hf-run"
        assert " " not in config.canonical_json()

    def test_override_ignores_none(self):
        config = ExperimentConfig.from_text("kind: hf-run\nseed: 3\n")
        changed = config.override(seed=None, jobs=4)
        assert changed["seed"] == 3
        assert changed["jobs"] == 4
        assert config["jobs"] == 1

    def test_to_yaml_round_trip(self):
        config = ExperimentConfig.from_preset("theorem-a03")
        again = ExperimentConfig.from_text(config.to_yaml())
        assert again.values == config.values
        assert again.config_hash == config.config_hash
