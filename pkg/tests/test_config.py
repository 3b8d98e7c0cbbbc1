from pathlib import Path

import pytest
from pydantic import ValidationError as PydanticValidationError

from config.settings import ApplicationSettings, Environment
from lib.utils.config import (
    ExperimentConfig,
    GridSearchConfig,
    TrainingMode,
    apply_overrides,
    load_experiment_config,
)
from lib.utils.errors import ConfigurationError

EXPERIMENT_FILE = Path(__file__).parent.parent / "config" / "experiment.yaml"


def test_defaults():
    config = load_experiment_config()

    assert config.train.mode is TrainingMode.PROPOSED
    assert config.train.learning_rate == 0.0002
    assert (config.train.beta1, config.train.beta2) == (0.5, 0.999)
    assert config.train.lambda_cyc == config.train.lambda_wls == 10.0
    assert config.generator.divisor == 16
    assert (config.grid_search.epsilon, config.grid_search.coarse, config.grid_search.fine) == (0.1, 0.1, 0.02)


def test_shipped_experiment_file_loads():
    config = load_experiment_config(EXPERIMENT_FILE)

    assert [d.name for d in config.data.domains] == ["domain_a", "domain_b", "domain_c"]
    assert config.generator.domain_count == len(config.data.domains)
    assert len(config.data.subjects_per_domain) == len(config.data.domains)


def test_yaml_and_overrides(tiny_config_file):
    config = load_experiment_config(tiny_config_file, {"train.epochs": 3, "train.mode": "m4", "seed": None})

    assert config.train.epochs == 3
    assert config.train.mode is TrainingMode.M4
    assert config.generator.channels == [4, 8]
    assert config.seed == 0


def test_invalid_field_names_path(tiny_config_file):
    with pytest.raises(ConfigurationError) as info:
        load_experiment_config(tiny_config_file, {"train.batch_size": 0})

    assert info.value.context["field"] == "train.batch_size"
    assert info.value.exit_code == 1


def test_channel_count_must_match_stages():
    with pytest.raises(ConfigurationError):
        load_experiment_config(overrides={"generator.stages": 3})


@pytest.mark.parametrize("content", ["train: [unclosed", "- just\n- a list\n"])
def test_bad_yaml(tmp_path, content):
    path = tmp_path / "bad.yaml"
    path.write_text(content)

    with pytest.raises(ConfigurationError):
        load_experiment_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "none.yaml")


def test_apply_overrides_revalidates(tiny_config):
    updated = apply_overrides(tiny_config, {"grid_search.epsilon": 0.2})

    assert updated.grid_search.epsilon == 0.2
    assert tiny_config.grid_search.epsilon == 0.0
    with pytest.raises(ConfigurationError):
        apply_overrides(tiny_config, {"grid_search.fine": 2.0})


def test_hash_is_stable_and_sensitive(tiny_config, tmp_path):
    reloaded = load_experiment_config(tiny_config.to_yaml(tmp_path / "copy.yaml"))

    assert reloaded.config_hash() == tiny_config.config_hash()
    assert apply_overrides(tiny_config, {"train.seed": 1}).config_hash() != tiny_config.config_hash()


def test_dotted_get():
    config = ExperimentConfig()

    assert config.get("train.batch_size") == 32
    assert config.get("train.missing", "x") == "x"


class TestGridSearchConfig:
    def test_fine_cannot_exceed_coarse(self):
        with pytest.raises(PydanticValidationError):
            GridSearchConfig(coarse=0.1, fine=0.2)

    def test_coarse_must_fit_box(self):
        with pytest.raises(PydanticValidationError):
            GridSearchConfig(epsilon=0.0, coarse=1.5, fine=0.5)

    def test_radius_defaults_to_coarse(self):
        assert GridSearchConfig().radius == 0.1
        assert GridSearchConfig(refine_radius=0.3).radius == 0.3


class TestTrainingMode:
    def test_loss_flags(self):
        assert TrainingMode.M1.single_domain and not TrainingMode.M1.uses_cycle
        assert TrainingMode.M2.uses_cycle and not TrainingMode.M2.uses_domain_weights
        assert TrainingMode.M3.uses_domain_weights and not TrainingMode.M3.uses_labels
        assert TrainingMode.PROPOSED.uses_labels and TrainingMode.PROPOSED.uses_cycle


class TestApplicationSettings:
    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("RESTORE_NUM_WORKERS", "4")
        monkeypatch.setenv("RESTORE_ENVIRONMENT", "production")

        settings = ApplicationSettings()

        assert settings.num_workers == 4
        assert settings.is_production()
        assert settings.environment is Environment.PRODUCTION

    def test_rejects_negative_workers(self, monkeypatch):
        monkeypatch.setenv("RESTORE_NUM_WORKERS", "-1")

        with pytest.raises(PydanticValidationError):
            ApplicationSettings()

    def test_rejects_unknown_device(self):
        with pytest.raises(PydanticValidationError):
            ApplicationSettings(device="tpu")

    def test_sentry_config(self, monkeypatch):
        monkeypatch.delenv("RESTORE_SENTRY_DSN", raising=False)
        monkeypatch.delenv("SENTRY_DSN", raising=False)

        assert ApplicationSettings().get_sentry_config() == {}
        configured = ApplicationSettings(sentry_dsn="https://key@example.invalid/1")
        assert configured.get_sentry_config()["traces_sample_rate"] == 1.0

    def test_missing_experiment_file(self, tmp_path):
        settings = ApplicationSettings(experiment_file=tmp_path / "none.yaml", device="cpu")

        with pytest.raises(ConfigurationError):
            settings.validate_required_settings()
