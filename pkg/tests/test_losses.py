import numpy as np
import pytest
import torch

from lib.models.networks import build_discriminator, build_generator
from lib.training.losses import (
    DomainWeights,
    LossBreakdown,
    adversarial_losses,
    cycle_loss,
    domain_weights,
    ensure_finite,
    generator_objective,
    weighted_ls_loss,
)
from lib.utils.config import DiscriminatorConfig, GeneratorConfig
from lib.utils.errors import DimensionError, NumericalError, ValidationError


class TestDomainWeights:
    def test_matches_direct_formula(self):
        sizes = [734, 365, 173]
        inverse = [1 / 734, 1 / 365, 1 / 173]
        expected = [v / sum(inverse) for v in inverse]

        weights = domain_weights(sizes)

        assert weights.to_list() == pytest.approx(expected, abs=1e-12)

    def test_sum_to_one_for_random_sizes(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            sizes = rng.integers(1, 5000, size=int(rng.integers(1, 8)))
            assert sum(domain_weights(sizes).values) == pytest.approx(1.0, abs=1e-12)

    def test_smaller_domains_weigh_more(self):
        weights = domain_weights([100, 10])

        assert weights[1] > weights[0]

    @pytest.mark.parametrize("sizes", [[], [10, 0]])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(ValidationError):
            domain_weights(sizes)


def test_adversarial_losses_standard_targets():
    ones, zeros = torch.ones(2, 1, 2, 2), torch.zeros(2, 1, 2, 2)

    gen, disc = adversarial_losses(ones, zeros, ones, zeros)

    assert disc.item() == 0.0
    assert gen.item() == pytest.approx(2.0)


def test_adversarial_losses_as_printed_swaps_targets():
    ones, zeros = torch.ones(1, 1, 2, 2), torch.zeros(1, 1, 2, 2)

    gen, disc = adversarial_losses(zeros, ones, zeros, ones, convention="as_printed")

    assert disc.item() == 0.0
    assert gen.item() == pytest.approx(2.0)


def test_adversarial_losses_reject_mismatched_maps():
    with pytest.raises(DimensionError):
        adversarial_losses(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3), torch.zeros(1), torch.zeros(1))


def test_cycle_loss_sums_both_directions():
    z, x = torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4)

    loss = cycle_loss(z, x, z + 1.0, x + 2.0)

    assert loss.item() == pytest.approx(5.0)


class TestWeightedLeastSquares:
    def test_unit_weights_equal_plain_mse(self):
        fwd, bwd = torch.randn(4, 1, 4, 4), torch.randn(4, 1, 4, 4)

        loss = weighted_ls_loss(fwd, bwd, [0, 1, 2, 0], None)

        expected = fwd.pow(2).mean() + bwd.pow(2).mean()
        assert loss.item() == pytest.approx(expected.item(), rel=1e-6)

    def test_residual_mode_squares_weights(self):
        fwd = torch.ones(2, 1, 2, 2)
        weights = DomainWeights((0.5, 0.25))

        loss = weighted_ls_loss(fwd, torch.zeros_like(fwd), [0, 1], weights, reduction="residual")

        assert loss.item() == pytest.approx((0.25 + 0.0625) / 2)

    def test_squared_mode_scales_norm(self):
        fwd = torch.ones(2, 1, 2, 2)
        weights = DomainWeights((0.5, 0.25))

        loss = weighted_ls_loss(fwd, torch.zeros_like(fwd), [0, 1], weights, reduction="squared")

        assert loss.item() == pytest.approx((0.5 + 0.25) / 2)

    def test_index_out_of_range(self):
        fwd = torch.ones(1, 1, 2, 2)

        with pytest.raises(ValidationError):
            weighted_ls_loss(fwd, fwd, [3], DomainWeights((0.5, 0.5)))

    def test_missing_domain_index(self):
        fwd = torch.ones(1, 1, 2, 2)

        with pytest.raises(ValidationError):
            weighted_ls_loss(fwd, fwd, None)


def test_ensure_finite_names_the_term():
    with pytest.raises(NumericalError) as info:
        ensure_finite(float("nan"), "cyc", epoch=3, batch=7)

    assert info.value.term == "cyc"
    assert info.value.to_dict()["context"]["batch"] == 7
    assert info.value.exit_code == 2


def test_loss_breakdown_mean_and_check():
    a = LossBreakdown(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    b = LossBreakdown(3.0, 4.0, 5.0, 6.0, 7.0, 8.0)

    mean = LossBreakdown.mean([a, b])

    assert mean.adv_g == 2.0 and mean.total_d == 7.0
    with pytest.raises(NumericalError):
        LossBreakdown(float("inf"), 0, 0, 0, 0, 0).check_finite()


def test_composite_generator_gradient_matches_finite_differences():
    torch.manual_seed(0)
    gen_config = GeneratorConfig(stages=2, channels=[4, 4], domain_count=2, mapping_hidden=4)
    generator = build_generator(gen_config, init_std=0.3).double()
    backward = build_generator(gen_config, init_std=0.3).double()
    disc_x = build_discriminator(DiscriminatorConfig(base_channels=2, layers=3), init_std=0.3).double().eval()
    disc_z = build_discriminator(DiscriminatorConfig(base_channels=2, layers=3), init_std=0.3).double().eval()

    z = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    x = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    c = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    domain = torch.tensor([0, 1])
    weights = DomainWeights((0.3, 0.7))

    def objective() -> torch.Tensor:
        fake_x, fake_z = generator(z, c), backward(x, c)
        adv_g, _ = adversarial_losses(disc_x(x), disc_x(fake_x), disc_z(z), disc_z(fake_z))
        cyc = cycle_loss(z, x, backward(fake_x, c), generator(fake_z, c))
        wls = weighted_ls_loss(fake_x - x, fake_z - z, domain, weights)
        return generator_objective(adv_g, cyc, wls, 10.0, 10.0)

    params = [generator.head.weight, generator.encoders[0].first.conv.weight,
              generator.encoders[0].first.norm.mapping.output_layer.weight, backward.head.bias]
    generator.zero_grad()
    backward.zero_grad()
    objective().backward()

    h = 1e-6
    for param in params:
        flat = param.data.view(-1)
        grad = param.grad.view(-1)
        for i in range(min(3, flat.numel())):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + h
                plus = objective().item()
                flat[i] = original - h
                minus = objective().item()
                flat[i] = original
            numeric = (plus - minus) / (2 * h)
            assert grad[i].item() == pytest.approx(numeric, rel=1e-3, abs=1e-7)


def test_every_parameter_receives_gradient():
    torch.manual_seed(0)
    gen_config = GeneratorConfig(stages=2, channels=[4, 8], domain_count=2, mapping_hidden=8)
    disc_config = DiscriminatorConfig(base_channels=4, layers=3)
    generator, backward = build_generator(gen_config, init_std=0.1), build_generator(gen_config, init_std=0.1)
    disc_x, disc_z = build_discriminator(disc_config, init_std=0.1), build_discriminator(disc_config, init_std=0.1)

    z = torch.rand(4, 1, 16, 16)
    x = torch.rand(4, 1, 16, 16)
    domain = torch.tensor([0, 1, 0, 1])
    c = torch.eye(2)[domain]
    weights = domain_weights([3, 1])

    fake_x, fake_z = generator(z, c), backward(x, c)
    adv_g, _ = adversarial_losses(disc_x(x), disc_x(fake_x), disc_z(z), disc_z(fake_z))
    cyc = cycle_loss(z, x, backward(fake_x, c), generator(fake_z, c))
    wls = weighted_ls_loss(fake_x - x, fake_z - z, domain, weights)
    generator_objective(adv_g, cyc, wls, 10.0, 10.0).backward()

    for prefix, net in (("G", generator), ("F", backward)):
        for name, param in net.named_parameters():
            assert param.grad is not None and param.grad.abs().sum() > 0, f"{prefix}.{name}"

    disc_x.zero_grad()
    disc_z.zero_grad()
    _, loss_d = adversarial_losses(disc_x(x), disc_x(fake_x.detach()), disc_z(z), disc_z(fake_z.detach()))
    loss_d.backward()

    for prefix, net in (("D_X", disc_x), ("D_Z", disc_z)):
        for name, param in net.named_parameters():
            assert param.grad is not None and param.grad.abs().sum() > 0, f"{prefix}.{name}"
