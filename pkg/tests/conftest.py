"""
Shared fixtures: tiny network configs, a toy three-domain dataset and
pass-through checkpoints
"""
import sys
from pathlib import Path

import pytest
import torch

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from lib.data.dataset import build_dataset  # noqa: E402
from lib.data.synthesis import default_domains  # noqa: E402
from lib.models.networks import PassThroughGenerator, build_discriminator  # noqa: E402
from lib.training.checkpoint import Checkpoint  # noqa: E402
from lib.utils.config import (  # noqa: E402
    DataConfig,
    DiscriminatorConfig,
    ExperimentConfig,
    GeneratorConfig,
    GridSearchConfig,
    TrainConfig,
    TrainingMode,
)

TOY_DIMS = (4, 16, 16)
TOY_SUBJECTS = [3, 2, 2]

TINY_CONFIG_YAML = """
seed: 0
data:
  dims: [4, 16, 16]
  subjects_per_domain: [3, 2, 2]
  pad_multiple: 4
generator:
  stages: 2
  channels: [4, 8]
  domain_count: 3
  mapping_hidden: 8
discriminator:
  base_channels: 4
  layers: 3
train:
  epochs: 1
  batch_size: 4
grid_search:
  epsilon: 0.0
  coarse: 0.5
  fine: 0.25
"""


def tiny_experiment(mode: TrainingMode = TrainingMode.PROPOSED, **train) -> ExperimentConfig:
    return ExperimentConfig(
        seed=0,
        data=DataConfig(dims=list(TOY_DIMS), subjects_per_domain=TOY_SUBJECTS, pad_multiple=4),
        generator=GeneratorConfig(stages=2, channels=[4, 8], domain_count=3, mapping_hidden=8),
        discriminator=DiscriminatorConfig(base_channels=4, layers=3),
        train=TrainConfig(epochs=1, batch_size=4, seed=0, mode=mode, **train),
        grid_search=GridSearchConfig(epsilon=0.0, coarse=0.5, fine=0.25),
    )


def passthrough_checkpoint(config: ExperimentConfig, scale: float = 1.0) -> Checkpoint:
    """Checkpoint whose generators copy their input"""
    generator_config = config.generator.model_copy(update={"conditioned": config.train.mode.uses_labels})
    return Checkpoint(
        generator=PassThroughGenerator(generator_config),
        backward=PassThroughGenerator(generator_config),
        disc_x=build_discriminator(config.discriminator),
        disc_z=build_discriminator(config.discriminator),
        config=config,
        intensity_scale=scale,
    ).eval()


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return tiny_experiment()


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    path = tmp_path / "experiment.yaml"
    path.write_text(TINY_CONFIG_YAML)
    return path


@pytest.fixture(scope="session")
def toy_dataset():
    return build_dataset(default_domains(3), TOY_SUBJECTS, TOY_DIMS, seed=0, multiple=4)


@pytest.fixture
def sample_batch() -> torch.Tensor:
    generator = torch.Generator().manual_seed(7)
    return torch.rand(2, 1, 16, 16, generator=generator)
