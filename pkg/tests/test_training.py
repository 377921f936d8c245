import math

import numpy as np
import pytest
import torch

import patchblend.training as training
from conftest import ramp_texture, warm_texture
from patchblend.bundle import NoiseSet
from patchblend.networks import DiscriminatorScale
from patchblend.pyramid import build_scale_plan
from patchblend.training import (ConfigurationError, TrainConfig, TrainingDiverged,
                                 compute_sigma, make_batch, reconstruction_loss,
                                 semantic_blend_loss, train_all, train_scale,
                                 wgan_gp_d_loss)


class ConstantCritic(torch.nn.Module):
    def forward(self, x):
        b = x.shape[0]
        return torch.full((b, 1, 1, 1), 3.7, dtype=x.dtype) + 0.0 * x.sum()


class UnitGradientCritic(torch.nn.Module):
    """D(x) = mean(x) * sqrt(N) so that ||grad_x D|| = 1 exactly."""

    def forward(self, x):
        n = x[0].numel()
        score = x.flatten(1).mean(dim=1) * math.sqrt(n)
        return score.view(-1, 1, 1, 1)


class TestWganGp:
    def test_constant_critic_gp_is_one(self):
        real = torch.rand(3, 3, 16, 16)
        fake = torch.rand(3, 3, 16, 16)
        loss, gp = wgan_gp_d_loss(ConstantCritic(), real, fake, gp_weight=0.1,
                                  generator=torch.Generator().manual_seed(0))
        assert gp.item() == pytest.approx(1.0, abs=1e-6)
        # main term cancels for a constant critic: loss = gp_weight * 1
        assert loss.item() == pytest.approx(0.1, abs=1e-6)

    def test_unit_gradient_critic_gp_is_zero(self):
        real = torch.rand(2, 3, 12, 12)
        fake = torch.rand(2, 3, 12, 12)
        _, gp = wgan_gp_d_loss(UnitGradientCritic(), real, fake, gp_weight=0.1,
                               generator=torch.Generator().manual_seed(0))
        assert gp.item() == pytest.approx(0.0, abs=1e-10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="must match"):
            wgan_gp_d_loss(ConstantCritic(), torch.rand(1, 3, 12, 12),
                           torch.rand(1, 3, 13, 12), 0.1)

    def test_gp_gradients_match_finite_differences(self):
        # random tiny critic in float64; GP parameter grads vs central FD
        torch.manual_seed(0)
        disc = DiscriminatorScale(4).double()
        disc.train()
        real = torch.rand(2, 3, 14, 14, dtype=torch.float64)
        fake = torch.rand(2, 3, 14, 14, dtype=torch.float64)
        u = torch.rand(2, 1, 1, 1, dtype=torch.float64)

        def gp_value():
            _, gp = wgan_gp_d_loss(disc, real, fake, gp_weight=1.0, u=u)
            return gp

        gp = gp_value()
        grads = torch.autograd.grad(gp, list(disc.parameters()), allow_unused=True)
        rng = np.random.default_rng(1)
        eps = 1e-6
        checked = 0
        for param, grad in zip(disc.parameters(), grads):
            if grad is None:
                continue
            flat = param.data.view(-1)
            for idx in rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = gp_value().item()
                flat[idx] = orig - eps
                down = gp_value().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                an = grad.reshape(-1)[idx].item()
                assert abs(fd - an) <= max(1e-3 * max(abs(fd), abs(an)), 1e-6), \
                    f"gp grad mismatch fd={fd} an={an}"
                checked += 1
        assert checked >= 10


class TestReconstructionLoss:
    def test_equal_is_zero(self):
        x = torch.rand(1, 3, 8, 8)
        assert reconstruction_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        x = torch.rand(1, 3, 8, 8)
        assert reconstruction_loss(x + 0.5, x).item() == pytest.approx(0.25, abs=1e-6)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        a = torch.from_numpy(rng.standard_normal((2, 3, 5, 5)))
        b = torch.from_numpy(rng.standard_normal((2, 3, 5, 5)))
        oracle = float(np.mean((a.numpy() - b.numpy()) ** 2))
        assert reconstruction_loss(a, b).item() == pytest.approx(oracle, rel=1e-12)


class MeanPixelEmbed:
    """Stub embedding: global mean of each channel (linear in the image)."""

    def __call__(self, images):
        return images.mean(dim=(2, 3))


class TestSemanticBlendLoss:
    def test_single_image_perfect_reconstruction(self):
        img = torch.rand(1, 3, 6, 6)
        loss = semantic_blend_loss(MeanPixelEmbed(), img, img, [1.0])
        assert loss.item() == pytest.approx(0.0, abs=1e-7)

    def test_linear_stub_weighted_average_is_zero(self):
        imgs = torch.rand(2, 3, 6, 6)
        alpha = [0.3, 0.7]
        blended = (0.3 * imgs[0] + 0.7 * imgs[1]).unsqueeze(0)
        loss = semantic_blend_loss(MeanPixelEmbed(), blended, imgs, alpha)
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_matches_hand_rolled_l1(self):
        rng = np.random.default_rng(3)
        proj = torch.from_numpy(rng.standard_normal((3, 5)).astype(np.float32))

        def phi(images):
            return images.mean(dim=(2, 3)) @ proj

        imgs = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32))
        blended = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 4, 4)).astype(np.float32))
        alpha = np.array([0.25, 0.75])
        emb = lambda t: t.mean(axis=(2, 3)) @ proj.numpy()
        target = alpha[0] * emb(imgs.numpy())[0] + alpha[1] * emb(imgs.numpy())[1]
        oracle = float(np.abs(emb(blended.numpy())[0] - target).sum())
        loss = semantic_blend_loss(phi, blended, imgs, alpha)
        assert loss.item() == pytest.approx(oracle, rel=1e-5)

    def test_bad_alpha_rejected(self):
        imgs = torch.rand(2, 3, 4, 4)
        with pytest.raises(ValueError, match="simplex"):
            semantic_blend_loss(MeanPixelEmbed(), imgs[:1], imgs, [0.8, 0.8])


class TestComputeSigma:
    def _bundle(self, images, monkeypatch, recs):
        cfg = TrainConfig(iterations=0, min_dim=12, max_dim=16, scale_factor_r=0.6)
        bundle = train_all(images, cfg)
        monkeypatch.setattr(training, "reconstruct_tensor",
                            lambda b, k, stop_level: recs[k])
        return bundle

    def test_coarsest_is_base(self, monkeypatch):
        imgs = [ramp_texture(16, 16)]
        bundle = self._bundle(imgs, monkeypatch, {})
        assert compute_sigma(bundle, bundle.plan.coarsest) == pytest.approx(0.1)

    def test_perfect_reconstruction_gives_zero(self, monkeypatch):
        imgs = [ramp_texture(24, 24)]
        cfg = TrainConfig(iterations=0, min_dim=12, max_dim=24, scale_factor_r=0.6)
        bundle = train_all(imgs, cfg)
        x0 = bundle.image_tensors(0)
        # coarser reconstruction that upsamples exactly onto x_0: use x_0 itself
        monkeypatch.setattr(training, "reconstruct_tensor",
                            lambda b, k, stop_level: x0[k:k + 1])
        monkeypatch.setattr(training, "resample_tensor", lambda t, s, **kw: t)
        assert compute_sigma(bundle, 0) == pytest.approx(0.0, abs=1e-8)

    def test_known_offsets_match_rmse_oracle(self, monkeypatch):
        imgs = [ramp_texture(24, 24, 0.0), ramp_texture(24, 24, 1.0)]
        cfg = TrainConfig(iterations=0, min_dim=12, max_dim=24, scale_factor_r=0.6)
        bundle = train_all(imgs, cfg)
        x0 = bundle.image_tensors(0)
        offsets = {0: 0.1, 1: 0.3}
        monkeypatch.setattr(training, "reconstruct_tensor",
                            lambda b, k, stop_level: x0[k:k + 1] + offsets[k])
        monkeypatch.setattr(training, "resample_tensor", lambda t, s, **kw: t)
        expected = 0.1 * (0.1 + 0.3) / 2  # sigma_base * mean of per-identity RMSEs
        assert compute_sigma(bundle, 0) == pytest.approx(expected, rel=1e-5)

    def test_identical_images_mean_equals_single(self, monkeypatch):
        imgs = [ramp_texture(24, 24)] * 3
        cfg = TrainConfig(iterations=0, min_dim=12, max_dim=24, scale_factor_r=0.6)
        bundle = train_all(imgs, cfg)
        x0 = bundle.image_tensors(0)
        monkeypatch.setattr(training, "reconstruct_tensor",
                            lambda b, k, stop_level: x0[0:1] + 0.2)
        monkeypatch.setattr(training, "resample_tensor", lambda t, s, **kw: t)
        assert compute_sigma(bundle, 0) == pytest.approx(0.1 * 0.2, rel=1e-5)


class TestMakeBatch:
    def test_full_image_batch_is_one_per_identity(self):
        plan = build_scale_plan((64, 64), 0.5, 16, 64)
        batch = make_batch(plan.coarsest, plan, 4, np.random.default_rng(0))
        assert [k for k, _ in batch] == [0, 1, 2, 3]
        assert all(win is None for _, win in batch)

    def test_cropped_batch_doubles_identities(self):
        plan = build_scale_plan((200, 200), 0.5, 20, 200, crop_window=128)
        assert plan.crop_size[0] == 128
        batch = make_batch(0, plan, 2, np.random.default_rng(0))
        assert sorted(k for k, _ in batch) == [0, 0, 1, 1]
        assert all(win is not None for _, win in batch)
        # windows drawn independently
        assert len({(w.top, w.left) for _, w in batch}) > 1

    def test_single_image_cropped_batch_of_two(self):
        plan = build_scale_plan((200, 200), 0.5, 20, 200, crop_window=128)
        batch = make_batch(0, plan, 1, np.random.default_rng(0))
        assert len(batch) == 2

    def test_every_identity_always_present(self):
        plan = build_scale_plan((200, 200), 0.5, 20, 200, crop_window=128)
        rng = np.random.default_rng(1)
        for _ in range(20):
            batch = make_batch(0, plan, 3, rng)
            assert {k for k, _ in batch} == {0, 1, 2}


class TestNoiseSet:
    def test_rec_noise_shared_and_reproducible(self):
        ns = NoiseSet(seed=7, sizes=[(16, 16), (10, 10)], sigmas=[0.05, 0.1],
                      sigma_base=0.1, c_rec=0.1)
        a = ns.rec_noise(0)
        b = ns.rec_noise(0)
        assert torch.equal(a, b)
        assert a.shape == (3, 16, 16)

    def test_amplitudes(self):
        ns = NoiseSet(seed=7, sizes=[(16, 16), (10, 10)], sigmas=[0.05, 0.1],
                      sigma_base=0.1, c_rec=0.1)
        # finer scale: c_rec * sigma; coarsest: sigma itself
        assert ns.rec_amp(0) == pytest.approx(0.1 * 0.05)
        assert ns.rec_amp(1) == pytest.approx(0.1)
        unit = ns.rec_unit(0)
        assert torch.equal(ns.rec_noise(0), unit * ns.rec_amp(0))


class TestTrainScale:
    def test_zero_iterations_leave_parameters_at_init(self):
        imgs = [warm_texture(24, 24)]
        cfg = TrainConfig(iterations=0, min_dim=12, max_dim=24, scale_factor_r=0.6, seed=2)
        bundle = train_all(imgs, cfg)
        # freshly initialized nets with the same seed are bit-identical
        fresh = train_all(imgs, cfg)
        for level in range(bundle.plan.n_levels):
            for a, b in zip(bundle.gens[level].parameters(), fresh.gens[level].parameters()):
                assert torch.equal(a, b)

    def test_report_length_equals_iterations(self):
        imgs = [warm_texture(20, 20)]
        cfg = TrainConfig(iterations=4, min_dim=12, max_dim=20, scale_factor_r=0.6, seed=2)
        bundle = train_all(imgs, cfg)
        report = train_scale(bundle, 0, cfg)
        assert len(report.records) == 4
        for rec in report.records:
            assert set(rec) == {"d_loss", "gp", "g_adv", "g_rec", "g_sem"}

    def test_out_of_order_scale_rejected(self):
        imgs = [warm_texture(24, 24)]
        cfg = TrainConfig(iterations=1, min_dim=12, max_dim=24, scale_factor_r=0.6)
        from patchblend.bundle import ModelBundle
        from patchblend.pyramid import build_scale_plan as bsp

        plan = bsp((24, 24), 0.6, 12, 24)
        bundle = ModelBundle(plan=plan, K=1, images=[imgs[0]],
                             gens=[None] * plan.n_levels, discs=[None] * plan.n_levels,
                             noise=NoiseSet(seed=0, sizes=plan.sizes,
                                            sigmas=[None] * plan.n_levels,
                                            sigma_base=0.1, c_rec=0.1),
                             seed=0, config=cfg.to_dict(), iterations=[0] * plan.n_levels)
        with pytest.raises(ConfigurationError, match="must be trained before"):
            train_scale(bundle, 0, cfg)

    def test_divergence_aborts_with_report(self, monkeypatch):
        imgs = [warm_texture(20, 20)]
        cfg = TrainConfig(iterations=3, min_dim=12, max_dim=20, scale_factor_r=0.6)

        def poisoned(disc, real, fake, gp_weight, u=None, generator=None):
            bad = torch.tensor(float("nan"), requires_grad=True)
            return bad * 0 + bad, torch.tensor(float("nan"))

        monkeypatch.setattr(training, "wgan_gp_d_loss", poisoned)
        with pytest.raises(TrainingDiverged) as err:
            train_all(imgs, cfg)
        assert err.value.report is not None
        assert "non-finite" in str(err.value)

    def test_semantic_loss_requires_interface(self):
        imgs = [warm_texture(20, 20)]
        cfg = TrainConfig(iterations=1, min_dim=12, max_dim=20, sem_weight=1.0)
        with pytest.raises(ConfigurationError, match="embedding interface"):
            train_all(imgs, cfg)

    def test_semantic_loss_trains_with_stub(self):
        imgs = [warm_texture(20, 20), ramp_texture(20, 20)]
        cfg = TrainConfig(iterations=2, min_dim=12, max_dim=20, scale_factor_r=0.6,
                          sem_weight=0.5, seed=3)

        def phi(images):
            return images.mean(dim=(2, 3))

        bundle = train_all(imgs, cfg, phi=phi)
        assert bundle.trained_through(0)

    def test_loss_report_ndjson(self, tmp_path):
        imgs = [warm_texture(20, 20)]
        cfg = TrainConfig(iterations=2, min_dim=12, max_dim=20, scale_factor_r=0.6)
        bundle = train_all(imgs, cfg)
        report = train_scale(bundle, 0, cfg)
        path = tmp_path / "losses.ndjson"
        report.write_ndjson(path)
        import json

        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 3  # two iterations + memory footer
        assert lines[0]["iter"] == 0 and "d_loss" in lines[0]
        assert "peak_memory_bytes" in lines[-1]


class TestConfig:
    def test_round_trip(self):
        cfg = TrainConfig(iterations=7, crop_window=None, sem_weight=0.5)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_crop_resolution(self):
        assert TrainConfig(crop_window="auto").resolve_crop(250) == 128
        assert TrainConfig(crop_window="auto").resolve_crop(400) == 256
        assert TrainConfig(crop_window=96).resolve_crop(400) == 96
        assert TrainConfig(crop_window=None).resolve_crop(400) is None

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(rec_weight=-1.0)
