"""Config parsing: defaults, overrides, unknown keys, split validation."""

import json
import logging

import pytest

from tempo_contrast.config import ConfigError, apply_overrides, parse_config


def minimal_config(tmp_path, **extra):
    document = {
        "run_name": "t",
        "out_dir": str(tmp_path / "runs"),
        "dataset": {
            "kind": "synthetic",
            "n_recordings": 3,
            "duration_s": 600.0,
            "rate_hz": 50.0,
            "channels": 1,
            "n_states": 2,
            "transition": [[0.8, 0.2], [0.2, 0.8]],
            "state_spectra": [[[5.0, 0.2, 1.0]], [[10.0, 0.2, 1.0]]],
            "noise_std": 0.1,
        },
        "split": {"train": ["synth-00"], "valid": ["synth-01"], "test": ["synth-02"]},
    }
    document.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestDefaults:
    def test_minimal_config_fills_defaults(self, tmp_path):
        cfg = parse_config(minimal_config(tmp_path))
        assert cfg.sampler.tau_pos_s == 240.0
        assert cfg.sampler.tau_neg_s == 900.0
        assert cfg.sampler.n_anchors_per_recording == 2000
        assert cfg.train.batch_size == 256
        assert cfg.train.lr == 0.001
        assert cfg.model.embed_dim == 100
        assert cfg.preprocess.enabled is False
        assert cfg.seed == 0

    def test_preprocess_section_enables_itself(self, tmp_path):
        path = minimal_config(tmp_path, preprocess={"cutoff_hz": 8.0,
                                                    "target_rate_hz": 25.0})
        cfg = parse_config(path)
        assert cfg.preprocess.enabled is True
        assert cfg.preprocess.cutoff_hz == 8.0

    def test_seed_propagates(self, tmp_path):
        cfg = parse_config(minimal_config(tmp_path, seed=17))
        assert cfg.train.seed == 17
        assert cfg.sampler.seed == 17


class TestValidation:
    def test_missing_run_name(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"dataset": {"kind": "synthetic"},
                                    "split": {"train": ["a"], "valid": ["b"],
                                              "test": ["c"]}}))
        with pytest.raises(ConfigError, match="run_name"):
            parse_config(path)

    def test_missing_split_member(self, tmp_path):
        path = minimal_config(tmp_path, split={"train": ["a"], "valid": ["b"]})
        with pytest.raises(ConfigError, match="split.test"):
            parse_config(path)

    def test_overlapping_splits_name_subject(self, tmp_path):
        path = minimal_config(tmp_path, split={"train": ["s1", "s2"],
                                               "valid": ["s2"], "test": ["s3"]})
        with pytest.raises(ConfigError, match="s2"):
            parse_config(path)

    def test_unknown_dataset_kind(self, tmp_path):
        path = minimal_config(tmp_path)
        document = json.loads(path.read_text())
        document["dataset"]["kind"] = "parquet"
        path.write_text(json.dumps(document))
        with pytest.raises(ConfigError, match="kind"):
            parse_config(path)

    def test_edf_dir_must_exist(self, tmp_path):
        path = minimal_config(tmp_path)
        document = json.loads(path.read_text())
        document["dataset"] = {"kind": "edf", "edf_dir": "does-not-exist"}
        path.write_text(json.dumps(document))
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            parse_config(path)

    def test_unknown_key_warns_with_suggestion(self, tmp_path, caplog):
        path = minimal_config(tmp_path, sampler={"tau_poss": 100.0})
        with caplog.at_level(logging.WARNING):
            parse_config(path)
        messages = " ".join(r.message for r in caplog.records)
        assert "tau_poss" in messages
        assert "tau_pos_s" in messages


class TestOverrides:
    def test_scalar_override(self, tmp_path):
        document = json.loads(minimal_config(tmp_path).read_text())
        apply_overrides(document, ["train.max_epochs=7", "seed=3"])
        assert document["train"]["max_epochs"] == 7
        assert document["seed"] == 3

    def test_string_fallback(self, tmp_path):
        document = json.loads(minimal_config(tmp_path).read_text())
        apply_overrides(document, ["run_name=other"])
        assert document["run_name"] == "other"

    def test_bad_override_format(self):
        with pytest.raises(ConfigError, match="key.path=value"):
            apply_overrides({}, ["nonsense"])


class TestSyntheticConfigDerivation:
    def test_recording_seeds_distinct_and_stable(self, tmp_path):
        cfg = parse_config(minimal_config(tmp_path, seed=5))
        seeds = [cfg.recording_seed(i) for i in range(4)]
        assert len(set(seeds)) == 4
        assert seeds == [cfg.recording_seed(i) for i in range(4)]

    def test_synthetic_config_builds(self, tmp_path):
        cfg = parse_config(minimal_config(tmp_path))
        synth = cfg.synthetic_config(0)
        assert synth.n_states == 2
        assert synth.rate_hz == 50.0
