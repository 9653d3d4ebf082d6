"""
Experiment Configuration Tests

Loading of YAML experiment files, schema validation and seed derivation.
"""

import numpy as np
import pytest
import yaml

from tools.qoslab.channel import ImpairmentSpec
from tools.qoslab.config import (
    CONFIG_DIR,
    SCHEMA_PATH,
    ExperimentConfig,
    config_from_dict,
    load_config,
    resolve_config_path,
    validate_document,
)
from tools.qoslab.errors import ConfigError
from tools.qoslab.streamgen import send_schedule


def minimal(**extra):
    doc = {"streams": [{"profile": "stream1-camera", "ports": [5000, 1240]}]}
    doc.update(extra)
    return doc


class TestBuiltinConfig:
    def test_builtin_config_loads(self):
        cfg = load_config("paper-iv")
        assert cfg.name == "paper-iv"
        assert cfg.window == 3000
        assert cfg.delay_sample == 10000
        assert cfg.loss_sample == 20000
        assert [s.label for s in cfg.streams] == ["5000-1240", "5001-1241", "5002-1242"]
        assert [p.name for p in cfg.profiles] == ["stream1-camera", "stream2-vod", "stream3-dvb"]

    def test_builtin_config_impairments(self):
        cfg = load_config("paper-iv")
        access = cfg.impairments["stream1-camera"]
        assert access.base_delay_s == 0.2
        assert access.jitter_model == "uniform"
        assert access.jitter_s == 0.001
        assert access.loss_prob == 0.00297
        assert cfg.streams[0].upstream.loss_prob == pytest.approx(0.00377)
        assert cfg.streams[0].upstream.base_delay_s == pytest.approx(0.002)

    def test_builtin_durations_give_sent_counts(self):
        cfg = load_config("paper-iv")
        counts = [len(send_schedule(p, np.random.default_rng(0))) for p in cfg.profiles]
        assert counts == [26436, 44386, 106039]

    def test_port_map(self):
        assert load_config("paper-iv").port_map["stream2-vod"] == (5001, 1241)

    def test_resolve_by_name_or_path(self, tmp_path):
        assert resolve_config_path("paper-iv") == CONFIG_DIR / "paper-iv.yaml"
        path = tmp_path / "mine.yaml"
        path.write_text(yaml.safe_dump(minimal()))
        assert resolve_config_path(path) == path

    def test_unknown_name(self):
        with pytest.raises(ConfigError) as info:
            resolve_config_path("no-such-config")
        assert "paper-iv" in str(info.value)

    def test_schema_file_exists(self):
        assert SCHEMA_PATH.is_file()


class TestValidation:
    @pytest.mark.parametrize("doc,field", [
        ({}, "<root>"),
        (minimal(seed="x"), "seed"),
        (minimal(window=0), "window"),
        (minimal(colour="red"), "<root>"),
        ({"streams": [{"profile": "stream1-camera", "ports": [5000]}]}, "streams[0].ports"),
        ({"streams": [{"profile": "stream1-camera", "ports": [5000, 70000]}]}, "streams[0].ports[1]"),
        ({"streams": [{"profile": 7, "ports": [5000, 1240]}]}, "streams[0].profile"),
    ])
    def test_error_names_field(self, doc, field):
        with pytest.raises(ConfigError) as info:
            validate_document(doc)
        assert info.value.field == field
        assert info.value.exit_code == 1

    def test_valid_document(self):
        validate_document(minimal())

    def test_invalid_yaml_reports_position(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("streams:\n  - profile: [unclosed\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert "line" in str(info.value)


class TestStreams:
    def test_profile_defaults(self):
        cfg = config_from_dict(minimal(duration_s=5.0))
        profile = cfg.profiles[0]
        assert profile.dst_port == 5000
        assert profile.duration_s == 5.0
        assert cfg.streams[0].upstream is None
        assert cfg.streams[0].impairment.is_identity

    def test_custom_profile(self):
        doc = {"streams": [{
            "profile": {"name": "probe", "packet_payload_bytes": 200, "packets_per_minute": 600, "mode": "vbr"},
            "ports": [6000, 6001],
        }]}
        profile = config_from_dict(doc).profiles[0]
        assert profile.name == "probe"
        assert profile.mode == "vbr"

    def test_custom_profile_needs_rate(self):
        doc = {"streams": [{"profile": {"name": "probe", "packet_payload_bytes": 200}, "ports": [6000, 6001]}]}
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field == "streams[0].packets_per_minute"

    def test_invalid_profile_field_is_anchored(self):
        doc = {"streams": [{"profile": {"preset": "stream2-vod", "packets_per_minute": 0}, "ports": [1, 2]}]}
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field == "streams[0].packets_per_minute"

    def test_netem_string_impairment(self):
        doc = minimal()
        doc["streams"][0]["impairment"] = "delay 200ms uniform 1ms loss 0.3%"
        spec = config_from_dict(doc).streams[0].impairment
        assert spec.base_delay_s == pytest.approx(0.2)
        assert spec.loss_prob == pytest.approx(0.003)

    def test_bad_netem_string_names_path(self):
        doc = minimal()
        doc["streams"][0]["upstream"] = "delay lots"
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field == "streams[0].upstream"

    def test_bad_impairment_mapping_names_path(self):
        doc = minimal()
        doc["streams"][0]["impairment"] = {"loss_prob": 0.9, "corrupt_prob": 0.5}
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field.startswith("streams[0].impairment")

    def test_duplicate_ports(self):
        doc = {"streams": [
            {"profile": "stream1-camera", "ports": [5000, 1240]},
            {"profile": "stream2-vod", "ports": [5001, 1240]},
        ]}
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field == "streams[1].ports"

    def test_duplicate_names(self):
        doc = {"streams": [
            {"profile": "stream1-camera", "ports": [5000, 1240]},
            {"profile": "stream1-camera", "ports": [5001, 1241]},
        ]}
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.field == "streams[1].profile.name"

    def test_empty_streams_tuple(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(streams=())


class TestSeeds:
    def test_derived_seeds_are_deterministic(self):
        a = config_from_dict(minimal(seed=11))
        b = config_from_dict(minimal(seed=11))
        assert a == b
        assert a.profiles[0].seed == b.profiles[0].seed

    def test_master_seed_changes_derived_seeds(self):
        a = config_from_dict(minimal(seed=1))
        b = config_from_dict(minimal(seed=2))
        assert a.profiles[0].seed != b.profiles[0].seed
        assert a.streams[0].impairment.seed != b.streams[0].impairment.seed

    def test_streams_get_independent_seeds(self):
        cfg = load_config("paper-iv")
        seeds = [s.impairment.seed for s in cfg.streams] + [s.upstream.seed for s in cfg.streams]
        assert len(set(seeds)) == 6

    def test_explicit_seed_wins(self):
        doc = minimal()
        doc["streams"][0]["impairment"] = {"loss_prob": 0.01, "seed": 5}
        assert config_from_dict(doc).streams[0].impairment == ImpairmentSpec(loss_prob=0.01, seed=5)

    def test_overrides(self):
        cfg = load_config("paper-iv", overrides={"seed": 7, "window": 10})
        assert cfg.seed == 7
        assert cfg.window == 10
        assert cfg.profiles[0].seed != load_config("paper-iv").profiles[0].seed
