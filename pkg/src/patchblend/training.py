"""Scale-by-scale adversarial training with identity conditioning.

Each scale trains a fresh generator/critic pair against the pooled patch
distribution of all training images (the critic is unconditional); identity
fidelity comes from SPADE conditioning plus a reconstruction loss through a
fixed, identity-shared noise path. Scales larger than the crop window train
on random crops with a halo, which bounds per-step activation memory.
"""

from __future__ import annotations

import math
import json
import os
import resource
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import rng
from .bundle import (ModelBundle, NoiseSet, reconstruct_tensor, run_pyramid,
                     save_bundle, save_checkpoint)
from .identity import constant_id
from .networks import HALO, RF, padded_forward, pinned_stats
from .pyramid import (ScalePlan, build_scale_plan, crop_with_halo,
                      default_crop_window, random_crop_window, resample, resample_tensor)


class ConfigurationError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    iterations: int = 2000
    d_steps: int = 3
    g_steps: int = 3
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gp_weight: float = 0.1
    rec_weight: float = 10.0
    sem_weight: float = 0.0
    crop_window: object = "auto"  # "auto" | int | None
    scale_factor_r: float = 0.75
    min_dim: int = 25
    max_dim: int = 250
    sigma_base: float = 0.1
    c_rec: float = 0.1
    channels_base: int = 32
    channels_cap: int = 512
    channels_period: int = 4
    spade_hidden: int = 64
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        for name in ("gp_weight", "rec_weight", "sem_weight", "lr_g", "lr_d", "sigma_base", "c_rec"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["crop_window"] is None:
            d["crop_window"] = "none"
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        kwargs = {}
        for f_name, f_type in TrainConfig.__dataclass_fields__.items():
            if f_name not in d:
                continue
            v = d[f_name]
            if f_name == "crop_window":
                if v in ("none", "None", None):
                    v = None
                elif v != "auto":
                    v = int(v)
            elif f_type.type in ("int",):
                v = int(v)
            elif f_type.type in ("float",):
                v = float(v)
            elif f_type.type in ("bool",):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            kwargs[f_name] = v
        return TrainConfig(**kwargs)

    def resolve_crop(self, image_max_dim: int):
        if self.crop_window == "auto":
            return default_crop_window(image_max_dim)
        return self.crop_window


@dataclass
class LossReport:
    level: int
    records: list = field(default_factory=list)  # one dict per iteration
    peak_memory_bytes: int = 0
    fault: str = ""

    def append(self, **scalars) -> None:
        self.records.append({k: float(v) for k, v in scalars.items()})

    def write_ndjson(self, path) -> None:
        with open(path, "w") as f:
            for i, rec in enumerate(self.records):
                f.write(json.dumps({"iter": i, "level": self.level, **rec}) + "\n")
            f.write(json.dumps({"level": self.level, "peak_memory_bytes": self.peak_memory_bytes}) + "\n")


# ---------------------------------------------------------------------------
# Losses

def wgan_gp_d_loss(disc, real: torch.Tensor, fake: torch.Tensor, gp_weight: float,
                   u: torch.Tensor = None, generator: torch.Generator = None):
    """Critic loss: mean D(fake) - mean D(real) + gp_weight * gradient penalty.

    D's patch score map is averaged into one score per sample; the penalty
    drives the input-gradient norm of D at random interpolates toward 1.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} must match")
    d_real = disc(real).mean(dim=(1, 2, 3))
    d_fake = disc(fake).mean(dim=(1, 2, 3))
    loss_main = d_fake.mean() - d_real.mean()

    if u is None:
        u = torch.rand((real.shape[0], 1, 1, 1), generator=generator, dtype=real.dtype)
    x_hat = (u * real + (1.0 - u) * fake.detach()).requires_grad_(True)
    d_hat = disc(x_hat).mean(dim=(1, 2, 3))
    grads = torch.autograd.grad(d_hat.sum(), x_hat, create_graph=True)[0]
    gp = ((grads.flatten(1).norm(2, dim=1) - 1.0) ** 2).mean()
    loss = loss_main + gp_weight * gp
    if not torch.isfinite(loss):
        raise TrainingDiverged("non-finite critic loss", None)
    return loss, gp


def reconstruction_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(output, target)


def semantic_blend_loss(phi, blended: torch.Tensor, images: torch.Tensor,
                        alpha) -> torch.Tensor:
    """L1 in embedding space between a blend and the weighted image embeddings."""
    a = torch.as_tensor(alpha, dtype=blended.dtype)
    if a.dim() != 1 or a.shape[0] != images.shape[0]:
        raise ValueError("alpha must have one weight per training image")
    if torch.any(a < 0) or abs(float(a.sum()) - 1.0) > 1e-5:
        raise ValueError("alpha must lie on the simplex")
    emb_blend = phi(blended)
    with torch.no_grad():
        emb_imgs = phi(images)
    target = (a.view(-1, 1) * emb_imgs).sum(dim=0, keepdim=True)
    return (emb_blend - target).abs().sum(dim=1).mean()


def compute_sigma(bundle: ModelBundle, level: int) -> float:
    """Generation-noise std for a scale from the coarser reconstruction error."""
    base = bundle.noise.sigma_base
    if level == bundle.plan.coarsest:
        return float(base)
    h, w = bundle.plan.sizes[level]
    xs = bundle.image_tensors(level)
    rmses = []
    for k in range(bundle.K):
        rec = reconstruct_tensor(bundle, k, stop_level=level + 1)
        up = resample_tensor(rec, (h, w), mode="bicubic", clamp=(-1.0, 1.0))
        rmses.append(torch.sqrt(F.mse_loss(up[0], xs[k])).item())
    return float(base * sum(rmses) / len(rmses))


# ---------------------------------------------------------------------------
# Batches

def make_batch(level: int, plan: ScalePlan, K: int, crop_rng: np.random.Generator):
    """Identity/window pairs for one gradient step.

    Full-image scales use one sample per identity; cropped scales use two per
    identity with independent random windows. Every identity appears.
    """
    crop = plan.crop_size[level]
    if crop is None:
        batch = [(k, None) for k in range(K)]
    else:
        size = plan.sizes[level]
        batch = [(k, random_crop_window(size, crop, HALO, crop_rng))
                 for _ in range(2) for k in range(K)]
    assert {k for k, _ in batch} == set(range(K)), "every identity must appear in the batch"
    return batch


def _gather_inputs(full_tensors, batch):
    """Crop-with-halo (or zero-pad) each per-sample full tensor, then stack.

    full_tensors: list over batch of (C, H, W) tensors at the full scale size.
    """
    outs = []
    for (k, win), t in zip(batch, full_tensors):
        if win is None:
            outs.append(F.pad(t, (HALO,) * 4))
        else:
            outs.append(crop_with_halo(t, win))
    return torch.stack(outs)


def _gather_cores(full_tensors, batch):
    outs = []
    for (k, win), t in zip(batch, full_tensors):
        if win is None:
            outs.append(t)
        else:
            outs.append(t[..., win.top:win.top + win.height, win.left:win.left + win.width])
    return torch.stack(outs)


# ---------------------------------------------------------------------------
# Training loops

def _constant_id_tensor(k: int, K: int, size_hw) -> torch.Tensor:
    return constant_id(k, K, size_hw).to_tensor()


def _sample_prev_full(bundle: ModelBundle, level: int, ids, noise_g) -> torch.Tensor:
    """Upsampled previous-scale images for a batch of identities (frozen scales)."""
    B = len(ids)
    h, w = bundle.plan.sizes[level]
    if level == bundle.plan.coarsest:
        return torch.zeros(B, 3, h, w)
    sizes = bundle.plan.sizes
    id_maps = [torch.stack([_constant_id_tensor(k, bundle.K, sizes[lvl]) for k in ids])
               for lvl in range(len(sizes))]

    def noises(lvl):
        hj, wj = sizes[lvl]
        sigma = bundle.sigmas[lvl]
        return torch.randn((B, 3, hj, wj), generator=noise_g) * sigma

    prev = run_pyramid(bundle, sizes, id_maps, noises, stop_level=level + 1)
    return resample_tensor(prev, (h, w), mode="bicubic", clamp=(-1.0, 1.0))


def train_scale(bundle: ModelBundle, level: int, cfg: TrainConfig, phi=None,
                progress=None, checkpoint_dir=None) -> LossReport:
    """Train one pyramid level, coarser levels frozen."""
    if level != bundle.plan.coarsest and bundle.gens[level + 1] is None:
        raise ConfigurationError(f"scale {level + 1} must be trained before {level}")
    if cfg.sem_weight > 0 and phi is None:
        raise ConfigurationError("semantic loss enabled but no embedding interface given")
    plan = bundle.plan
    h, w = plan.sizes[level]
    if min(h, w) < RF:
        raise ConfigurationError(f"scale {level} size {h}x{w} below receptive field {RF}")
    K = bundle.K

    sigma = compute_sigma(bundle, level)
    bundle.noise.sigmas[level] = sigma

    # net construction goes through the global RNG; pin it per (seed, level)
    torch.manual_seed(rng.derive_seed(bundle.seed, "init", level))
    gen = bundle.new_generator(level)
    disc = bundle.new_discriminator(level)
    bundle.gens[level], bundle.discs[level] = gen, disc
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))

    xs = bundle.image_tensors(level)  # (K, 3, h, w)
    id_full = [_constant_id_tensor(k, K, (h, w)) for k in range(K)]
    z_rec_full = bundle.noise.rec_noise(level)  # (3, h, w), shared by identities
    if level == plan.coarsest:
        prev_rec_full = torch.zeros(K, 3, h, w)
    else:
        recs = [reconstruct_tensor(bundle, k, stop_level=level + 1) for k in range(K)]
        prev_rec_full = resample_tensor(torch.cat(recs), (h, w), mode="bicubic", clamp=(-1.0, 1.0))

    noise_g = rng.torch_gen(bundle.seed, "train-noise", level)
    crop_rng = rng.np_rng(bundle.seed, "train-crop", level)
    u_g = rng.torch_gen(bundle.seed, "train-gp", level)
    sem_rng = rng.np_rng(bundle.seed, "train-sem", level)

    report = LossReport(level=level)
    rss_before = _current_rss()

    def make_fake(batch, prev):
        ids = [k for k, _ in batch]
        with torch.no_grad():
            z = torch.randn((len(ids), 3, h, w), generator=noise_g) * sigma
        z_in = _gather_inputs(list(z), batch)
        prev_in = _gather_inputs(list(prev), batch)
        id_in = _gather_inputs([id_full[k] for k in ids], batch)
        return gen(z_in, prev_in, id_in)

    def rec_forward(batch):
        z_in = _gather_inputs([z_rec_full] * len(batch), batch)
        prev_in = _gather_inputs([prev_rec_full[k] for k, _ in batch], batch)
        id_in = _gather_inputs([id_full[k] for k, _ in batch], batch)
        # the reconstruction target must hold at inference, so this branch
        # runs under the inference-time running statistics
        with pinned_stats(gen):
            return gen(z_in, prev_in, id_in)

    gen.train()
    disc.train()
    try:
        for it in range(cfg.iterations):
            # one batched cascade through the frozen scales feeds all steps
            step_batches = [make_batch(level, plan, K, crop_rng)
                            for _ in range(cfg.d_steps + cfg.g_steps)]
            pool_ids = [k for batch in step_batches for k, _ in batch]
            prev_pool = _sample_prev_full(bundle, level, pool_ids, noise_g)
            offsets = np.cumsum([0] + [len(b) for b in step_batches])
            step_prevs = [prev_pool[offsets[i]:offsets[i + 1]]
                          for i in range(len(step_batches))]

            d_loss = gp = torch.tensor(0.0)
            for step in range(cfg.d_steps):
                batch = step_batches[step]
                with torch.no_grad():
                    fake = make_fake(batch, step_prevs[step])
                real = _gather_cores([xs[k] for k, _ in batch], batch)
                opt_d.zero_grad(set_to_none=True)
                d_loss, gp = wgan_gp_d_loss(disc, real, fake, cfg.gp_weight, generator=u_g)
                d_loss.backward()
                opt_d.step()

            g_adv = g_rec = g_sem = torch.tensor(0.0)
            for step in range(cfg.d_steps, cfg.d_steps + cfg.g_steps):
                batch = step_batches[step]
                opt_g.zero_grad(set_to_none=True)
                fake = make_fake(batch, step_prevs[step])
                g_adv = -disc(fake).mean(dim=(1, 2, 3)).mean()
                rec_batch = [(k, random_crop_window(plan.sizes[level], plan.crop_size[level], HALO, crop_rng)
                              if plan.crop_size[level] is not None else None) for k in range(K)]
                rec_out = rec_forward(rec_batch)
                g_rec = reconstruction_loss(rec_out, _gather_cores([xs[k] for k, _ in rec_batch], rec_batch))
                g_loss = g_adv + cfg.rec_weight * g_rec
                if cfg.sem_weight > 0:
                    alpha = sem_rng.dirichlet(np.ones(K))
                    g_sem = _blended_semantic_term(bundle, level, gen, phi, alpha, z_rec_full)
                    g_loss = g_loss + cfg.sem_weight * g_sem
                g_loss.backward()
                opt_g.step()

            report.append(d_loss=d_loss.item(), gp=gp.item(), g_adv=g_adv.item(),
                          g_rec=g_rec.item(), g_sem=float(torch.as_tensor(g_sem).detach()))
            last = report.records[-1]
            if not all(math.isfinite(v) for v in last.values()):
                report.fault = f"non-finite loss at iteration {it}: {last}"
                raise TrainingDiverged(report.fault, report)
            if progress is not None:
                progress(level, it, last)
    except TrainingDiverged as fault:
        if fault.report is None:
            report.fault = str(fault)
            fault.report = report
        report.peak_memory_bytes = max(0, _current_peak() - rss_before)
        raise

    gen.eval()
    disc.eval()
    bundle.iterations[level] = cfg.iterations
    report.peak_memory_bytes = max(0, _current_peak() - rss_before)
    if checkpoint_dir is not None:
        save_checkpoint(bundle, level, checkpoint_dir, opt_g=opt_g, opt_d=opt_d)
    return report


def _blended_semantic_term(bundle, level, gen, phi, alpha, z_rec_full):
    K = bundle.K
    sizes = bundle.plan.sizes
    h, w = sizes[level]
    blend_t = [torch.from_numpy(
        np.broadcast_to(np.asarray(alpha, dtype=np.float32), sizes[lvl] + (K,)).copy()
        .transpose(2, 0, 1)).unsqueeze(0) for lvl in range(len(sizes))]
    if level == bundle.plan.coarsest:
        prev = torch.zeros(1, 3, h, w)
    else:
        noises = {lvl: bundle.noise.rec_noise(lvl).unsqueeze(0) for lvl in range(len(sizes))}
        prev = run_pyramid(bundle, sizes, blend_t, lambda lvl: noises[lvl], stop_level=level + 1)
        prev = resample_tensor(prev, (h, w), mode="bicubic", clamp=(-1.0, 1.0))
    with pinned_stats(gen):
        blended = padded_forward(gen, z_rec_full.unsqueeze(0), prev, blend_t[level])
    return semantic_blend_loss(phi, blended, bundle.image_tensors(level), alpha)



def train_all(images, cfg: TrainConfig, out_dir=None, phi=None, progress=None,
              image_sources=None) -> ModelBundle:
    """Coarse-to-fine training over all scales; checkpoints per scale."""
    if not images:
        raise ConfigurationError("need at least one training image")
    if cfg.sem_weight > 0 and phi is None:
        raise ConfigurationError("semantic loss enabled but no embedding interface given")
    if cfg.deterministic:
        torch.set_num_threads(1)

    base = images[0]
    images = [img if img.shape == base.shape else resample(img, base.shape[:2]) for img in images]
    crop = cfg.resolve_crop(max(base.shape[:2]))
    plan = build_scale_plan(base.shape[:2], cfg.scale_factor_r, cfg.min_dim,
                            cfg.max_dim, crop_window=crop)
    noise = NoiseSet(seed=cfg.seed, sizes=plan.sizes, sigmas=[None] * plan.n_levels,
                     sigma_base=cfg.sigma_base, c_rec=cfg.c_rec)
    bundle = ModelBundle(plan=plan, K=len(images), images=[img.astype(np.float32) for img in images],
                         gens=[None] * plan.n_levels, discs=[None] * plan.n_levels,
                         noise=noise, seed=cfg.seed, config=cfg.to_dict(),
                         image_sources=list(image_sources or []),
                         iterations=[0] * plan.n_levels)

    for level in range(plan.coarsest, -1, -1):
        report = train_scale(bundle, level, cfg, phi=phi, progress=progress,
                             checkpoint_dir=out_dir)
        if out_dir is not None:
            report.write_ndjson(os.path.join(out_dir, f"losses_scale_{level:02d}.ndjson"))
            save_bundle(bundle, out_dir)
    return bundle


def _current_rss() -> int:
    try:
        import psutil

        return psutil.Process().memory_info().rss
    except Exception:
        return _current_peak()


def _current_peak() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
