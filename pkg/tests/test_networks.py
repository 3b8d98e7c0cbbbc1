import math

import pytest
import torch

from lib.models.conditioning import NormSite
from lib.models.networks import (
    FrameletGenerator,
    PassThroughGenerator,
    build_discriminator,
    build_generator,
    count_parameters,
    discriminator_forward,
    generator_forward,
)
from lib.utils.config import DiscriminatorConfig, GeneratorConfig
from lib.utils.errors import ConfigurationError, DimensionError


@pytest.fixture
def gen_config():
    return GeneratorConfig(stages=2, channels=[4, 8], domain_count=3, mapping_hidden=8)


def test_generator_preserves_shape(gen_config, sample_batch):
    generator = build_generator(gen_config)

    out = generator_forward(generator, sample_batch, torch.tensor([1.0, 0.0, 0.0]))

    assert out.shape == sample_batch.shape


def test_generator_accepts_single_image_and_per_sample_labels(gen_config):
    generator = build_generator(gen_config)

    single = generator(torch.rand(1, 16, 16), [0.0, 1.0, 0.0])
    batched = generator(torch.rand(2, 1, 16, 16), torch.eye(3)[:2])

    assert single.shape == (1, 16, 16)
    assert batched.shape == (2, 1, 16, 16)


def test_generator_rejects_indivisible_input(gen_config):
    generator = build_generator(gen_config)

    with pytest.raises(DimensionError):
        generator(torch.rand(1, 1, 18, 16), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("label", [[1.0, 0.0], None])
def test_generator_rejects_bad_label(gen_config, sample_batch, label):
    generator = build_generator(gen_config)

    with pytest.raises(ConfigurationError):
        generator(sample_batch, label)


def test_label_batch_mismatch(gen_config, sample_batch):
    generator = build_generator(gen_config)

    with pytest.raises(DimensionError):
        generator(sample_batch, torch.eye(3))


def test_output_depends_on_label(gen_config, sample_batch):
    generator = build_generator(gen_config, init_std=0.5).eval()

    a = generator(sample_batch, [1.0, 0.0, 0.0])
    b = generator(sample_batch, [0.0, 0.0, 1.0])

    assert not torch.equal(a, b)


def test_norm_site_count(gen_config):
    generator = FrameletGenerator(gen_config)

    # two blocks per encoder, bottleneck and decoder stage
    assert len(generator.norm_sites()) == 2 * (2 * gen_config.stages + 1)


def test_parameter_accounting_between_conditioned_and_unconditioned(gen_config):
    conditioned = FrameletGenerator(gen_config)
    plain = FrameletGenerator(gen_config.model_copy(update={"conditioned": False}))

    mapping = count_parameters(conditioned, "mapping")
    affine = sum(2 * site.channels for site in plain.norm_sites())

    assert count_parameters(plain, "mapping") == 0
    assert count_parameters(conditioned) - mapping == count_parameters(plain) - affine
    assert all(not site.conditioned for site in plain.norm_sites())


def test_initialization_sets_mapping_sigma_bias(gen_config):
    generator = build_generator(gen_config, init_std=0.01)

    for site in generator.norm_sites():
        bias = site.mapping.output_layer.bias
        assert torch.all(bias[:site.channels] == 0)
        assert torch.all(bias[site.channels:] == 1)


def test_initialization_weight_scale():
    torch.manual_seed(0)
    generator = build_generator(GeneratorConfig(stages=2, channels=[32, 64], domain_count=3), init_std=0.01)

    weights = generator.decoders[1].first.conv.weight.flatten()

    assert weights.std().item() == pytest.approx(0.01, rel=0.1)


@pytest.mark.parametrize("size", [8, 16, 17, 30, 64])
def test_discriminator_output_size(size):
    disc = build_discriminator(DiscriminatorConfig(base_channels=4, layers=3))

    out = discriminator_forward(disc, torch.rand(2, 1, size, size))

    expected = math.ceil(size / 8)
    assert out.shape == (2, 1, expected, expected)


def test_discriminator_rejects_small_input():
    disc = build_discriminator(DiscriminatorConfig(base_channels=4, layers=3))

    with pytest.raises(DimensionError):
        disc(torch.rand(1, 1, 4, 4))


def test_discriminator_layout():
    disc = build_discriminator(DiscriminatorConfig(base_channels=64, layers=3))
    convs = [m for m in disc.stages if isinstance(m, torch.nn.Conv2d)]

    assert [c.out_channels for c in convs] == [64, 128, 256]
    assert all(c.kernel_size == (4, 4) and c.stride == (2, 2) for c in convs)
    assert disc.head.kernel_size == (1, 1) and disc.head.out_channels == 1


def test_pass_through_generator_is_identity(gen_config, sample_batch):
    generator = PassThroughGenerator(gen_config)

    assert torch.allclose(generator(sample_batch, [0.3, 0.3, 0.4]), sample_batch)
    assert not any(isinstance(m, NormSite) for m in generator.modules())


def test_discriminator_batch_matches_per_sample_in_eval_mode():
    torch.manual_seed(0)
    disc = build_discriminator(DiscriminatorConfig(base_channels=4, layers=3), init_std=0.2).eval()
    images = torch.rand(5, 1, 24, 24)

    with torch.no_grad():
        batched = disc(images)
        looped = torch.cat([disc(images[i:i + 1]) for i in range(len(images))])

    assert torch.allclose(batched, looped, atol=1e-6)
