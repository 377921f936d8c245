"""Trained model state: per-scale networks, noise amplitudes, and persistence.

A bundle directory holds a manifest.json, the training images (exact float32
plus PNG thumbnails), and one digest-verified checkpoint per scale.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import rng
from .networks import (HALO, DiscriminatorScale, GeneratorScale,
                       channels_for_scale, padded_forward)
from .pyramid import CropWindow, ScalePlan, build_pyramid, crop_with_halo, resample_tensor, to_tensor

FORMAT_VERSION = 1


class BundleError(RuntimeError):
    pass


class CorruptCheckpointError(BundleError):
    pass


@dataclass
class NoiseSet:
    """Per-scale noise amplitudes and the fixed shared reconstruction noise.

    Reconstruction noise is drawn once per scale from a seed-derived stream
    and shared by all identities; at finer scales its std is c_rec times the
    generation-noise std, at the coarsest it is a unit draw scaled by sigma.
    """

    seed: int
    sizes: list  # full-image (h, w) per level
    sigmas: list  # per-level generation std, None until the scale is reached
    sigma_base: float
    c_rec: float

    @property
    def coarsest(self) -> int:
        return len(self.sizes) - 1

    def rec_unit(self, level: int) -> torch.Tensor:
        h, w = self.sizes[level]
        return rng.normal((3, h, w), self.seed, "rec", level)

    def rec_amp(self, level: int) -> float:
        sigma = self.sigmas[level]
        if sigma is None:
            raise BundleError(f"sigma for level {level} not computed yet")
        return float(sigma if level == self.coarsest else self.c_rec * sigma)

    def rec_noise(self, level: int) -> torch.Tensor:
        return self.rec_unit(level) * self.rec_amp(level)


@dataclass
class ModelBundle:
    plan: ScalePlan
    K: int
    images: list  # (H, W, 3) float32 at plan.sizes[0]
    gens: list  # GeneratorScale | None per level, 0 = finest
    discs: list  # DiscriminatorScale | None per level
    noise: NoiseSet
    seed: int
    config: dict  # TrainConfig snapshot (flat dict)
    image_sources: list = field(default_factory=list)
    iterations: list = field(default_factory=list)  # per level

    @property
    def sigmas(self) -> list:
        return self.noise.sigmas

    def channels(self, level: int) -> int:
        return channels_for_scale(
            self.plan.coarsest - level,
            base=int(self.config.get("channels_base", 32)),
            cap=int(self.config.get("channels_cap", 512)),
            period=int(self.config.get("channels_period", 4)),
        )

    @property
    def spade_hidden(self) -> int:
        return int(self.config.get("spade_hidden", 64))

    def new_generator(self, level: int) -> GeneratorScale:
        return GeneratorScale(self.K, self.channels(level), self.spade_hidden)

    def new_discriminator(self, level: int) -> DiscriminatorScale:
        return DiscriminatorScale(self.channels(level))

    def trained_through(self, level: int) -> bool:
        return all(self.gens[l] is not None for l in range(level, self.plan.n_levels))

    def pyramids(self) -> list:
        """Per-identity list of per-level training images."""
        return [build_pyramid(img, self.plan) for img in self.images]

    def image_tensors(self, level: int) -> torch.Tensor:
        pyrs = self.pyramids()
        return torch.stack([to_tensor(pyrs[k][level]) for k in range(self.K)])


def scale_forward_full(gen: GeneratorScale, z: torch.Tensor, prev: torch.Tensor,
                       id_map: torch.Tensor, tile=None) -> torch.Tensor:
    """Full-image forward of one scale, optionally tiled to bound memory.

    Tiling is exact for a frozen (eval-mode) network because every op is
    local: each tile is a crop-with-halo forward pasted into the output.
    """
    h, w = z.shape[-2:]
    if tile is None or (h <= tile and w <= tile):
        return padded_forward(gen, z, prev, id_map)
    out = z.new_zeros(z.shape[:-2] + (h, w))
    for top in range(0, h, tile):
        for left in range(0, w, tile):
            win = CropWindow(top=top, left=left, height=min(tile, h - top),
                             width=min(tile, w - left), halo=HALO)
            patch = gen(crop_with_halo(z, win), crop_with_halo(prev, win),
                        crop_with_halo(id_map, win))
            out[..., top:top + win.height, left:left + win.width] = patch
    return out


@torch.no_grad()
def run_pyramid(bundle: ModelBundle, sizes: list, id_maps: list, noises,
                start_level=None, inject=None, stop_level: int = 0,
                tile=None) -> torch.Tensor:
    """Coarse-to-fine cascade through frozen scales.

    sizes / id_maps are per-level ((h, w) and (B, K, h, w)); noises is a
    callable level -> (B, 3, h, w) or a per-level list. inject, when given,
    replaces the upsampled-previous input at start_level.
    """
    n = bundle.plan.n_levels
    start = bundle.plan.coarsest if start_level is None else start_level
    if not stop_level <= start < n:
        raise ValueError(f"start level {start} outside pyramid of {n}")
    prev = None
    for level in range(start, stop_level - 1, -1):
        gen = bundle.gens[level]
        if gen is None:
            raise BundleError(f"scale {level} is not trained")
        gen.eval()
        h, w = sizes[level]
        z = noises(level) if callable(noises) else noises[level]
        if prev is None:
            if level == start and inject is not None:
                prev = inject
            else:
                prev = z.new_zeros(z.shape[0], 3, h, w)
        else:
            prev = resample_tensor(prev, (h, w), mode="bicubic", clamp=(-1.0, 1.0))
        prev = scale_forward_full(gen, z, prev, id_maps[level], tile=tile)
    return prev


def reconstruction_inputs(bundle: ModelBundle, levels=None):
    """Reconstruction noise per level as (1, 3, h, w), shared by identities."""
    n = bundle.plan.n_levels
    levels = range(n) if levels is None else levels
    return {lvl: bundle.noise.rec_noise(lvl).unsqueeze(0) for lvl in levels}


@torch.no_grad()
def reconstruct_tensor(bundle: ModelBundle, k: int, stop_level: int = 0) -> torch.Tensor:
    """Scale stop_level reconstruction of training image k, shape (1, 3, h, w)."""
    if not 0 <= k < bundle.K:
        raise ValueError(f"identity {k} out of range for K={bundle.K}")
    from .identity import constant_id

    sizes = bundle.plan.sizes
    ids = [constant_id(k, bundle.K, sizes[lvl]).to_tensor().unsqueeze(0)
           for lvl in range(len(sizes))]
    noises = reconstruction_inputs(bundle, levels=range(stop_level, len(sizes)))
    return run_pyramid(bundle, sizes, ids, lambda lvl: noises[lvl], stop_level=stop_level)


# ---------------------------------------------------------------------------
# Persistence

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def checkpoint_name(level: int) -> str:
    return f"scale_{level:02d}.pt"


def save_checkpoint(bundle: ModelBundle, level: int, out_dir, opt_g=None, opt_d=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, checkpoint_name(level))
    payload = {
        "level": level,
        "gen": bundle.gens[level].state_dict(),
        "disc": bundle.discs[level].state_dict() if bundle.discs[level] is not None else None,
        "opt_g": opt_g.state_dict() if opt_g is not None else None,
        "opt_d": opt_d.state_dict() if opt_d is not None else None,
        "iterations": bundle.iterations[level],
        "sigma": bundle.sigmas[level],
    }
    torch.save(payload, path)
    return {"level": level, "file": checkpoint_name(level), "sha256": _sha256(path),
            "iterations": bundle.iterations[level]}


def save_bundle(bundle: ModelBundle, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    from .pyramid import save_image

    image_files = []
    for k, img in enumerate(bundle.images):
        npy = os.path.join("images", f"image_{k:02d}.npy")
        np.save(os.path.join(out_dir, npy), img)
        save_image(img, os.path.join(img_dir, f"image_{k:02d}.png"))
        image_files.append(npy)

    checkpoints = []
    for level in range(bundle.plan.n_levels):
        if bundle.gens[level] is not None:
            path = os.path.join(out_dir, checkpoint_name(level))
            if not os.path.exists(path):
                save_checkpoint(bundle, level, out_dir)
            checkpoints.append({"level": level, "file": checkpoint_name(level),
                                "sha256": _sha256(path),
                                "iterations": bundle.iterations[level]})

    manifest = {
        "format_version": FORMAT_VERSION,
        "K": bundle.K,
        "seed": bundle.seed,
        "plan": bundle.plan.to_dict(),
        "sigmas": [None if s is None else float(s) for s in bundle.sigmas],
        "config": bundle.config,
        "images": image_files,
        "image_sources": bundle.image_sources,
        "checkpoints": checkpoints,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return out_dir


def load_bundle(path) -> ModelBundle:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise BundleError(f"no manifest.json under {path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleError(f"manifest format version {version} not supported (expected {FORMAT_VERSION})")

    plan = ScalePlan.from_dict(manifest["plan"])
    K = int(manifest["K"])
    images = []
    for rel in manifest["images"]:
        img_path = os.path.join(path, rel)
        if not os.path.exists(img_path):
            raise BundleError(f"training image missing: {img_path}")
        images.append(np.load(img_path))

    config = manifest["config"]
    noise = NoiseSet(seed=int(manifest["seed"]), sizes=plan.sizes,
                     sigmas=[None if s is None else float(s) for s in manifest["sigmas"]],
                     sigma_base=float(config.get("sigma_base", 0.1)),
                     c_rec=float(config.get("c_rec", 0.1)))
    bundle = ModelBundle(plan=plan, K=K, images=images,
                         gens=[None] * plan.n_levels, discs=[None] * plan.n_levels,
                         noise=noise, seed=int(manifest["seed"]), config=config,
                         image_sources=manifest.get("image_sources", []),
                         iterations=[0] * plan.n_levels)

    for entry in manifest["checkpoints"]:
        ckpt_path = os.path.join(path, entry["file"])
        if not os.path.exists(ckpt_path):
            raise BundleError(f"checkpoint missing: {ckpt_path}")
        digest = _sha256(ckpt_path)
        if digest != entry["sha256"]:
            raise CorruptCheckpointError(
                f"{entry['file']}: digest mismatch (got {digest[:12]}, manifest {entry['sha256'][:12]})"
            )
        payload = torch.load(ckpt_path, weights_only=False)
        level = int(payload["level"])
        gen = bundle.new_generator(level)
        gen.load_state_dict(payload["gen"])
        gen.eval()
        bundle.gens[level] = gen
        if payload.get("disc") is not None:
            disc = bundle.new_discriminator(level)
            disc.load_state_dict(payload["disc"])
            disc.eval()
            bundle.discs[level] = disc
        bundle.iterations[level] = int(payload.get("iterations", 0))
    return bundle
