#!/usr/bin/env python3
"""
Tests for run configuration, overrides and artifact provenance
"""

import hashlib
import json

import pytest

from errors import ConfigurationError
from run_config import (
    ABLATION_ROWS,
    OUTPUT_DIR_ENV,
    TOOL_VERSION,
    MitigationFlags,
    MitigationSettings,
    RunConfig,
    apply_overrides,
    artifact_meta,
    file_sha256,
    load_run_config,
    require_files,
    resolve_output_dir,
    run_config_from_dict,
)


class TestMitigationFlags:
    """Test flag parsing and labels"""

    @pytest.mark.parametrize("text,expected", [
        ("none", MitigationFlags()),
        ("all", MitigationFlags(True, True, True)),
        ("dd+twirl", MitigationFlags(dd=True, twirl=True)),
        ("M3", MitigationFlags(m3=True)),
        ("dd,m3", MitigationFlags(dd=True, m3=True)),
    ])
    def test_parse(self, text, expected):
        """none, all and combinations parse"""
        assert MitigationFlags.parse(text) == expected

    @pytest.mark.parametrize("text", ["", "zne", "none+dd"])
    def test_parse_rejects(self, text):
        """Unknown or mixed tokens are configuration errors"""
        with pytest.raises(ConfigurationError):
            MitigationFlags.parse(text)

    def test_labels(self):
        """The ablation rows are labelled as in the results table"""
        assert [row.label for row in ABLATION_ROWS] == ["none", "DD+Twirl", "M3", "DD+Twirl+M3"]
        assert ABLATION_ROWS[3].tag == "dd-twirl-m3"


class TestRunConfig:
    """Test config files and validation"""

    def test_defaults(self):
        """Defaults follow the published hyperparameters"""
        config = RunConfig()
        assert config.search.n_candidates == 250
        assert config.search.cnr_threshold == 0.7
        assert config.train.epochs == 200
        assert config.train.learning_rate == 0.01
        assert config.train.batch_size == 128
        assert config.mitigation.shots == 32000

    def test_from_dict(self):
        """Nested sections build their sub-configs"""
        config = run_config_from_dict({"seed": 5, "search": {"n_candidates": 50}, "train": {"epochs": 3}})
        assert config.seed == 5
        assert config.search.n_candidates == 50
        assert config.train.epochs == 3

    def test_unknown_field(self):
        """Unknown fields are named in the error"""
        with pytest.raises(ConfigurationError, match="epoch"):
            run_config_from_dict({"train": {"epoch": 3}})

    def test_invalid_value(self):
        """Field validation surfaces as a configuration error"""
        with pytest.raises(ConfigurationError):
            run_config_from_dict({"mitigation": {"flags": "bogus"}})
        with pytest.raises(ConfigurationError):
            RunConfig(auc_average="micro")

    def test_load_file(self, tmp_path):
        """JSON files load; missing path means defaults"""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"out_side": 8, "mitigation": {"flags": "all"}}))
        config = load_run_config(str(path))
        assert config.out_side == 8
        assert config.mitigation.parsed_flags == MitigationFlags(True, True, True)
        assert load_run_config(None) == RunConfig()

    def test_load_bad_json(self, tmp_path):
        """Malformed JSON is a configuration error"""
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_run_config(str(path))

    def test_with_seed(self):
        """The master seed reaches search and training"""
        config = RunConfig(seed=42, workers=3).with_seed()
        assert config.search.seed == 42
        assert config.search.workers == 3
        assert config.train.seed == 42

    def test_mitigation_settings(self):
        """Iteration limits must be positive"""
        with pytest.raises(ConfigurationError):
            MitigationSettings(max_iter=0)


class TestOverrides:
    """Test flag overrides"""

    def test_flags_win(self):
        """Dotted overrides replace file values; None is skipped"""
        config = run_config_from_dict({"train": {"epochs": 10, "learning_rate": 0.1}})
        out = apply_overrides(config, {"train.epochs": 3, "train.learning_rate": None, "seed": 9})
        assert out.train.epochs == 3
        assert out.train.learning_rate == 0.1
        assert out.seed == 9

    def test_unknown_section(self):
        """Unknown sections are rejected"""
        with pytest.raises(ConfigurationError):
            apply_overrides(RunConfig(), {"optimizer.lr": 1.0})

    def test_unknown_field(self):
        """Unknown field names are rejected"""
        with pytest.raises(ConfigurationError):
            apply_overrides(RunConfig(), {"search.bogus": 1})


class TestOutputDir:
    """Test output directory precedence"""

    def test_flag_beats_env(self, monkeypatch):
        """flag > environment"""
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/env/out")
        assert resolve_output_dir(RunConfig(output_dir="cfg"), "flag").output_dir == "flag"

    def test_env_beats_file(self, monkeypatch):
        """environment > config file"""
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/env/out")
        assert resolve_output_dir(RunConfig(output_dir="cfg")).output_dir == "/env/out"

    def test_file_value_kept(self, monkeypatch):
        """Without flag or environment the file value stays"""
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
        assert resolve_output_dir(RunConfig(output_dir="cfg")).output_dir == "cfg"


class TestProvenance:
    """Test hashes and artifact metadata"""

    def test_sha256(self, tmp_path):
        """File hashes match hashlib"""
        path = tmp_path / "data.bin"
        path.write_bytes(b"abc" * 1000)
        assert file_sha256(str(path)) == hashlib.sha256(b"abc" * 1000).hexdigest()

    def test_artifact_meta(self, tmp_path):
        """Tool, version and seed lead; hashes follow in name order"""
        a = tmp_path / "a.txt"
        a.write_text("a")
        meta = artifact_meta(7, {"dataset": str(a), "circuit": None, "checkpoint": str(a)}, shots=100)
        assert list(meta) == ["tool", "version", "seed", "checkpoint_sha256", "dataset_sha256", "shots"]
        assert meta["version"] == TOOL_VERSION
        assert meta["seed"] == 7

    def test_require_files(self, tmp_path):
        """Missing files raise with the path"""
        present = tmp_path / "here.txt"
        present.write_text("x")
        require_files(str(present), None)
        with pytest.raises(FileNotFoundError, match="missing.txt"):
            require_files(str(tmp_path / "missing.txt"))


if __name__ == "__main__":
    pytest.main([__file__])
