"""Run configuration: defaults, INI files, environment and CLI overrides."""

from pathlib import Path

import pytest

from qbv_engine.config import ALL_FEATURE_SETS, ConfigError, RunConfig, Settings, TrainingConfig, load_run_config


def write_ini(tmp_path, text):
    path = tmp_path / "qbv.ini"
    path.write_text(text)
    return path


def test_defaults():
    config = load_run_config(settings=Settings(output_dir=None))
    assert config.feature_sets == ALL_FEATURE_SETS
    assert config.feature_sets[:2] == ["cae-1", "cae-2"] and config.feature_sets[-1] == "mfcc"
    assert config.output_dir == Path("qbv_output")
    assert config.training.batch_size == 128
    assert config.training.patience == 10
    assert config.training.bn_momentum == 0.99
    assert config.cae_variants() == list(range(1, 12))


def test_ini_file_paths_resolve_next_to_the_file(tmp_path):
    path = write_ini(tmp_path, """
[corpus]
manifest = data/manifest.csv
ratings = data/ratings.csv

[features]
sets = pk08, cae-3, MFCC

[training]
seed = 5
batch_size = 16
workers = 2

[output]
directory = out
""")
    config = load_run_config(path, settings=Settings(output_dir=None))

    assert config.manifest == tmp_path / "data" / "manifest.csv"
    assert config.ratings == tmp_path / "data" / "ratings.csv"
    assert config.feature_sets == ["pk08", "cae-3", "mfcc"]
    assert config.cae_variants() == [3]
    assert (config.training.seed, config.training.batch_size, config.workers) == (5, 16, 2)
    assert config.output_dir == tmp_path / "out"


def test_unknown_sections_and_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match=r"unknown section \[model\]"):
        load_run_config(write_ini(tmp_path, "[model]\nlayers = 3\n"))
    with pytest.raises(ConfigError, match="unknown keys"):
        load_run_config(write_ini(tmp_path, "[training]\nlearning_rte = 0.1\n"))


def test_invalid_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown feature sets"):
        load_run_config(feature_sets="pk08,cae-12", settings=Settings(output_dir=None))
    with pytest.raises(ConfigError, match="must not repeat"):
        load_run_config(feature_sets="temp,temp", settings=Settings(output_dir=None))
    with pytest.raises(ConfigError, match="even"):
        load_run_config(write_ini(tmp_path, "[training]\nbatch_size = 7\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "absent.ini")


def test_cli_overrides_environment_overrides_file(tmp_path, monkeypatch):
    path = write_ini(tmp_path, "[output]\ndirectory = from-file\n[training]\nseed = 1\n")

    assert load_run_config(path, settings=Settings(output_dir=None)).output_dir == tmp_path / "from-file"

    monkeypatch.setenv("QBV_OUTPUT_DIR", str(tmp_path / "from-env"))
    assert load_run_config(path).output_dir == tmp_path / "from-env"

    config = load_run_config(path, seed=9, output_dir=tmp_path / "from-cli")
    assert config.output_dir == tmp_path / "from-cli"
    assert config.training.seed == 9


def test_required_inputs_are_checked(tmp_path):
    config = RunConfig(manifest=tmp_path / "missing.csv")
    with pytest.raises(ConfigError, match="manifest not found"):
        config.require_manifest()
    with pytest.raises(ConfigError, match="no ratings file"):
        config.require_ratings()


def test_training_config_bounds():
    with pytest.raises(ValueError):
        TrainingConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        TrainingConfig(bn_momentum=1.0)


def test_seed_must_fit_an_unsigned_64_bit_field(tmp_path):
    assert TrainingConfig(seed=2**64 - 1).seed == 2**64 - 1
    with pytest.raises(ConfigError, match="seed"):
        load_run_config(write_ini(tmp_path, f"[training]\nseed = {2**64}\n"), settings=Settings(output_dir=None))
    with pytest.raises(ConfigError, match="seed"):
        load_run_config(seed=-1, settings=Settings(output_dir=None))
