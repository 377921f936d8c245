import numpy as np
import pytest
import torch

from patchblend.identity import blend_constant, constant_id
from patchblend.networks import (HALO, RF, DiscriminatorScale, GeneratorScale,
                                 SpadeUnit, SpatialNorm, channels_for_scale,
                                 padded_forward, receptive_field, spade_modulate)


def rf_oracle(n_convs, kernel=3):
    """Standard receptive-field recursion for stride-1 stacks."""
    rf, jump = 1, 1
    for _ in range(n_convs):
        rf = rf + (kernel - 1) * jump
    return rf


class TestChannelSchedule:
    def test_paper_anchors(self):
        assert channels_for_scale(0) == 32
        assert channels_for_scale(4) == 64
        assert channels_for_scale(20) == 512

    def test_formula_range(self):
        for i in range(25):
            assert channels_for_scale(i) == min(512, 32 * 2 ** (i // 4))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            channels_for_scale(-1)


class TestReceptiveField:
    def test_against_recursion_oracle(self):
        for n in (0, 1, 5, 9):
            assert receptive_field(n) == rf_oracle(n)

    def test_architecture_values(self):
        assert RF == 11
        assert HALO == 5
        assert receptive_field(1) == 3
        assert receptive_field(0) == 1


class TestShrinkage:
    def test_generator_and_discriminator_shrink_by_rf_minus_1(self):
        torch.manual_seed(0)
        gen = GeneratorScale(2, 8)
        disc = DiscriminatorScale(8)
        rng = np.random.default_rng(0)
        for _ in range(5):
            h = int(rng.integers(RF, 40))
            w = int(rng.integers(RF, 40))
            z = torch.randn(1, 3, h, w)
            idm = constant_id(0, 2, (h, w)).to_tensor().unsqueeze(0)
            out = gen(z, torch.zeros_like(z), idm)
            assert out.shape[-2:] == (h - RF + 1, w - RF + 1)
            assert disc(torch.randn(1, 3, h, w)).shape[-2:] == (h - RF + 1, w - RF + 1)

    def test_input_below_rf_rejected(self):
        gen = GeneratorScale(1, 8)
        z = torch.randn(1, 3, RF - 1, RF)
        idm = constant_id(0, 1, (RF - 1, RF)).to_tensor().unsqueeze(0)
        with pytest.raises(ValueError, match="below receptive field"):
            gen(z, torch.zeros_like(z), idm)
        with pytest.raises(ValueError, match="below receptive field"):
            DiscriminatorScale(8)(torch.randn(1, 3, RF - 1, RF))

    def test_discriminator_single_patch(self):
        disc = DiscriminatorScale(8)
        assert disc(torch.randn(1, 3, RF, RF)).shape == (1, 1, 1, 1)

    def test_example_sizes_138_to_128(self):
        gen = GeneratorScale(1, 8)
        z = torch.randn(1, 3, 138, 138)
        idm = constant_id(0, 1, (138, 138)).to_tensor().unsqueeze(0)
        assert gen(z, torch.zeros_like(z), idm).shape[-2:] == (128, 128)
        assert DiscriminatorScale(8)(torch.randn(1, 3, 138, 138)).shape[-2:] == (128, 128)


class TestSpade:
    def test_identity_start_equals_normalized_features(self):
        # fresh unit: gamma=1, beta=0 by construction
        torch.manual_seed(1)
        unit = SpadeUnit(4, 2)
        x = torch.randn(2, 4, 6, 6)
        idm = constant_id(0, 2, (6, 6)).to_tensor().unsqueeze(0).expand(2, -1, -1, -1)
        out = spade_modulate(x, idm, unit, training=True)
        mean = x.mean(dim=(2, 3), keepdim=True)
        std = torch.sqrt(x.var(dim=(2, 3), unbiased=False, keepdim=True) + 1e-5)
        assert torch.allclose(out, (x - mean) / std, atol=1e-6)

    def test_constant_features_yield_beta(self):
        torch.manual_seed(2)
        unit = SpadeUnit(3, 2)
        torch.nn.init.normal_(unit.to_beta.weight, 0, 0.5)
        torch.nn.init.normal_(unit.to_gamma.weight, 0, 0.5)
        x = torch.full((1, 3, 5, 5), 0.7)
        idm = blend_constant([0.4, 0.6], (5, 5)).to_tensor().unsqueeze(0)
        out = spade_modulate(x, idm, unit, training=True)
        _, beta = unit.modulation(idm)
        assert torch.allclose(out, beta, atol=1e-5)

    def test_different_ids_modulate_differently(self):
        torch.manual_seed(3)
        unit = SpadeUnit(4, 2)
        torch.nn.init.normal_(unit.to_gamma.weight, 0, 1.0)
        torch.nn.init.normal_(unit.to_beta.weight, 0, 1.0)
        x = torch.randn(1, 4, 6, 6)
        out0 = spade_modulate(x, constant_id(0, 2, (6, 6)).to_tensor().unsqueeze(0), unit)
        out1 = spade_modulate(x, constant_id(1, 2, (6, 6)).to_tensor().unsqueeze(0), unit)
        assert (out0 - out1).abs().max() > 1e-3

    def test_locality_of_modulation(self):
        # all SPADE convs are 1x1: an id change at pixel p moves gamma/beta at p only
        torch.manual_seed(4)
        unit = SpadeUnit(4, 2)
        torch.nn.init.normal_(unit.to_gamma.weight, 0, 1.0)
        torch.nn.init.normal_(unit.to_beta.weight, 0, 1.0)
        base = constant_id(0, 2, (7, 7)).to_tensor().unsqueeze(0)
        poked = base.clone()
        poked[0, :, 3, 4] = torch.tensor([0.0, 1.0])
        for maps in zip(unit.modulation(base), unit.modulation(poked)):
            diff = (maps[0] - maps[1]).abs().sum(dim=1)[0]
            changed = (diff > 1e-9).nonzero()
            assert changed.tolist() == [[3, 4]]

    def test_shape_mismatch_rejected(self):
        unit = SpadeUnit(4, 2)
        x = torch.randn(1, 4, 6, 6)
        idm = constant_id(0, 2, (5, 5)).to_tensor().unsqueeze(0)
        with pytest.raises(ValueError, match="does not match"):
            unit(x, idm)


class TestGeneratorBehavior:
    def test_zero_tail_passes_residual(self):
        torch.manual_seed(5)
        gen = GeneratorScale(2, 8)
        torch.nn.init.zeros_(gen.tail.weight)
        torch.nn.init.zeros_(gen.tail.bias)
        z = torch.randn(1, 3, 20, 20)
        prev = torch.rand(1, 3, 20, 20) - 0.5
        idm = constant_id(0, 2, (20, 20)).to_tensor().unsqueeze(0)
        out = gen(z, prev, idm)
        assert torch.allclose(out, torch.tanh(prev[..., HALO:-HALO, HALO:-HALO]), atol=1e-7)

    def test_tanh_range_for_wild_inputs(self):
        torch.manual_seed(6)
        gen = GeneratorScale(1, 8)
        z = torch.randn(1, 3, 16, 16) * 100
        prev = torch.randn(1, 3, 16, 16) * 50
        idm = constant_id(0, 1, (16, 16)).to_tensor().unsqueeze(0)
        out = gen(z, prev, idm)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_id_conditioning_changes_output(self):
        torch.manual_seed(7)
        gen = GeneratorScale(2, 8)
        for unit in [b.spade for b in gen.blocks]:
            torch.nn.init.normal_(unit.to_gamma.weight, 0, 0.2)
            torch.nn.init.normal_(unit.to_beta.weight, 0, 0.2)
        z = torch.randn(1, 3, 20, 20)
        prev = torch.zeros(1, 3, 20, 20)
        out0 = gen(z, prev, constant_id(0, 2, (20, 20)).to_tensor().unsqueeze(0))
        out1 = gen(z, prev, constant_id(1, 2, (20, 20)).to_tensor().unsqueeze(0))
        assert (out0 - out1).abs().max() > 1e-4

    def test_zero_weight_discriminator_scores_zero(self):
        disc = DiscriminatorScale(8)
        for p in disc.parameters():
            torch.nn.init.zeros_(p)
        assert torch.all(disc(torch.randn(1, 3, 20, 20)) == 0)

    def test_spatial_norm_eval_uses_running_stats(self):
        norm = SpatialNorm(3)
        norm.load_stats(torch.tensor([1.0, 2.0, 3.0]), torch.tensor([4.0, 4.0, 4.0]))
        norm.eval()
        x = torch.zeros(1, 3, 4, 4)
        out = norm(x)
        expect = (0.0 - torch.tensor([1.0, 2.0, 3.0])) / np.sqrt(4.0 + 1e-5)
        assert torch.allclose(out[0, :, 0, 0], expect, atol=1e-6)


class TestGradients:
    def test_generator_param_gradients_match_finite_differences(self):
        torch.manual_seed(8)
        gen = GeneratorScale(2, 4, hidden=4).double()
        gen.train()
        for unit in [b.spade for b in gen.blocks]:
            torch.nn.init.normal_(unit.to_gamma.weight, 0, 0.3)
            torch.nn.init.normal_(unit.to_beta.weight, 0, 0.3)
        h = w = 8
        z = torch.randn(1, 3, h + 2 * HALO, w + 2 * HALO, dtype=torch.float64)
        prev = torch.randn(1, 3, h + 2 * HALO, w + 2 * HALO, dtype=torch.float64) * 0.3
        idm = blend_constant([0.3, 0.7], (h + 2 * HALO, w + 2 * HALO)).to_tensor()
        idm = idm.unsqueeze(0).double()
        target = torch.randn(1, 3, h, w, dtype=torch.float64) * 0.5

        def loss_fn():
            return ((gen(z, prev, idm) - target) ** 2).mean()

        loss = loss_fn()
        grads = torch.autograd.grad(loss, list(gen.parameters()))
        rng = np.random.default_rng(0)
        eps = 1e-6
        checked = 0
        for param, grad in zip(gen.parameters(), grads):
            flat = param.data.view(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                an = grad.reshape(-1)[idx].item()
                # FD noise floor ~1e-10 at eps=1e-6; absolute floor for zeros
                ok = abs(fd - an) <= max(1e-3 * max(abs(fd), abs(an)), 1e-7)
                assert ok, f"param grad mismatch fd={fd} an={an}"
                checked += 1
        assert checked >= 20


def test_padded_forward_keeps_size():
    torch.manual_seed(9)
    gen = GeneratorScale(1, 8)
    z = torch.randn(1, 3, 24, 17)
    idm = constant_id(0, 1, (24, 17)).to_tensor().unsqueeze(0)
    out = padded_forward(gen, z, torch.zeros_like(z), idm)
    assert out.shape[-2:] == (24, 17)
