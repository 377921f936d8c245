"""Identity-map-driven generation: sampling, melding, morphing, fusion, editing.

Every op is a pure function of (bundle, request, seed): noise comes from
per-purpose seed streams, the bundle is read-only, and repeated calls with the
same arguments return identical images.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from . import rng
from .bundle import ModelBundle, reconstruct_tensor, run_pyramid
from .identity import (IdentityMap, IdentitySchedule, blend_constant,
                       constant_id, resample_id)
from .networks import HALO, RF
from .pyramid import from_tensor, resample_tensor


class GenerationError(ValueError):
    pass


class CategoricalRequired(GenerationError):
    """A categorical identity map is required but a soft one was given."""


def _require_trained(bundle: ModelBundle) -> None:
    if not bundle.trained_through(0):
        missing = [l for l in range(bundle.plan.n_levels) if bundle.gens[l] is None]
        raise GenerationError(f"bundle has untrained scales {missing}")


def _gen_sizes(bundle: ModelBundle, out_hw=None) -> list:
    if out_hw is None:
        return list(bundle.plan.sizes)
    sizes = bundle.plan.level_sizes_for(out_hw)
    ch, cw = sizes[-1]
    if min(ch, cw) < RF:
        raise GenerationError(
            f"output {tuple(out_hw)} projects to {ch}x{cw} at the coarsest scale, below the receptive field {RF}"
        )
    return sizes


def _schedule_tensors(bundle: ModelBundle, ids, sizes) -> list:
    """Per-level (1, K, h, w) identity tensors from a map or schedule."""
    if isinstance(ids, IdentityMap):
        ids = IdentitySchedule.broadcast(ids, bundle.plan.n_levels)
    if ids.n_levels != bundle.plan.n_levels:
        raise GenerationError(
            f"schedule has {ids.n_levels} levels, bundle has {bundle.plan.n_levels}"
        )
    out = []
    for lvl, size in enumerate(sizes):
        idm = ids.at(lvl, size).validate()
        if idm.K != bundle.K:
            raise GenerationError(f"identity map has K={idm.K}, bundle K={bundle.K}")
        out.append(idm.to_tensor().unsqueeze(0))
    return out


def _random_noises(bundle: ModelBundle, sizes, seed: int, tag: str):
    def noises(level):
        h, w = sizes[level]
        sigma = bundle.sigmas[level]
        return rng.normal((1, 3, h, w), seed, tag, level) * sigma

    return noises


def sample(bundle: ModelBundle, ids, size=None, seed: int = 0) -> np.ndarray:
    """Random sample under an identity map/schedule, any valid output size."""
    _require_trained(bundle)
    sizes = _gen_sizes(bundle, size)
    id_t = _schedule_tensors(bundle, ids, sizes)
    out = run_pyramid(bundle, sizes, id_t, _random_noises(bundle, sizes, seed, "sample"))
    return from_tensor(out)


def reconstruct(bundle: ModelBundle, k: int) -> np.ndarray:
    """Training image k regenerated from the fixed reconstruction noise."""
    _require_trained(bundle)
    return from_tensor(reconstruct_tensor(bundle, k))


def multi_ramp(ks, K: int, width: int, height: int, transition_frac: float) -> IdentityMap:
    """Piecewise-linear identity ramp across several anchors along x.

    Each anchor owns an equal band; adjacent bands blend linearly over a
    region of transition_frac * width centered on their boundary.
    """
    m = len(ks)
    if m < 2:
        raise GenerationError("need at least two anchors")
    half = max(transition_frac, 1e-9) * width / 2.0
    xs = np.arange(width, dtype=np.float64)
    weights = np.zeros((height, width, K), dtype=np.float32)
    # fraction of the way from anchor j to anchor j+1, chained
    owner = np.zeros(width, dtype=np.float64)  # fractional anchor index
    for j in range(m - 1):
        c = (j + 1) * width / m
        t = np.clip((xs - (c - half)) / (2 * half), 0.0, 1.0)
        owner += t
    for j, frac in enumerate(owner):
        lo = int(math.floor(frac))
        hi = min(lo + 1, m - 1)
        f = frac - lo
        weights[:, j, ks[lo]] += (1.0 - f)
        weights[:, j, ks[hi]] += f
    return IdentityMap(weights).validate()


def meld(bundle: ModelBundle, k_left: int, k_right: int, out_width: int,
         transition_frac: float = 1.0 / 3.0, seed: int = 0) -> np.ndarray:
    """Synthesize a widened image anchored to two sources with a blended band.

    The reconstruction noise is pinned under the left and right anchor bands;
    random noise fills the middle, and a linear identity ramp spans the
    transition region.
    """
    return meld_many(bundle, [k_left, k_right], out_width, transition_frac, seed=seed)


def meld_many(bundle: ModelBundle, ks, out_width: int,
              transition_frac: float = 1.0 / 3.0, seed: int = 0) -> np.ndarray:
    _require_trained(bundle)
    if not 0.0 <= transition_frac <= 1.0:
        raise GenerationError(f"transition fraction {transition_frac} outside [0, 1]")
    for k in ks:
        if not 0 <= k < bundle.K:
            raise GenerationError(f"identity {k} out of range for K={bundle.K}")
    h0, w0 = bundle.plan.sizes[0]
    if out_width < w0:
        raise GenerationError(f"output width {out_width} below anchor width {w0}")
    sizes = _gen_sizes(bundle, (h0, out_width))
    idm = multi_ramp(ks, bundle.K, out_width, h0, transition_frac)
    id_t = _schedule_tensors(bundle, idm, sizes)

    def noises(level):
        h, w = sizes[level]
        z = rng.normal((1, 3, h, w), seed, "meld", level) * bundle.sigmas[level]
        z_rec = bundle.noise.rec_noise(level)
        wr = z_rec.shape[-1]
        m = len(ks)
        for j in range(m):
            if j == 0:
                start = 0
            elif j == m - 1:
                start = w - wr
            else:
                start = int(round((j + 0.5) * w / m - wr / 2.0))
                start = max(0, min(w - wr, start))
            z[0, :, :, start:start + wr] = z_rec
        return z

    out = run_pyramid(bundle, sizes, id_t, noises)
    return from_tensor(out)


def meld_anchor_margin(plan) -> int:
    """Width of the band near a noise seam influenced across all scales.

    One scale pass spreads HALO pixels at its own resolution; bicubic
    upsampling spreads roughly 2 more. Expressed in finest-scale pixels.
    """
    r = plan.scale_factor_r
    margin = 0.0
    for lvl in range(plan.n_levels):
        margin += HALO / (r**lvl)
        if lvl >= 1:
            margin += 2.0 / (r ** (lvl - 1))
    return int(math.ceil(margin))


def morph(bundle: ModelBundle, weights_sequence, noise_mode: str = "reconstruction",
          seed: int = 0) -> list:
    """One frame per weight vector; reconstruction noise morphs the images
    themselves, (frame-fixed) random noise morphs samples."""
    _require_trained(bundle)
    if noise_mode not in ("reconstruction", "random"):
        raise GenerationError(f"unknown noise mode {noise_mode!r}")
    sizes = list(bundle.plan.sizes)
    if noise_mode == "reconstruction":
        noises = {lvl: bundle.noise.rec_noise(lvl).unsqueeze(0) for lvl in range(len(sizes))}
    else:
        noises = {lvl: _random_noises(bundle, sizes, seed, "morph")(lvl) for lvl in range(len(sizes))}
    frames = []
    for wvec in weights_sequence:
        idm = blend_constant(wvec, sizes[0])
        id_t = _schedule_tensors(bundle, idm, sizes)
        out = run_pyramid(bundle, sizes, id_t, lambda lvl: noises[lvl])
        frames.append(from_tensor(out))
    return frames


def morph_pair_weights(values, K: int = 2) -> list:
    """Blend vectors (1-v, v, 0, ...) for a sequence of scalar positions."""
    seq = []
    for v in values:
        w = [0.0] * K
        w[0], w[1] = 1.0 - float(v), float(v)
        seq.append(w)
    return seq


def fuse(bundle: ModelBundle, structure_k: int, texture_k: int, transition_scale: int,
         seed: int = 0, size=None) -> np.ndarray:
    """Structure identity at coarse scales, texture identity at fine scales."""
    _require_trained(bundle)
    from .identity import scale_schedule

    h0, w0 = bundle.plan.sizes[0]
    coarse = constant_id(structure_k, bundle.K, (h0, w0))
    fine = constant_id(texture_k, bundle.K, (h0, w0))
    schedule = scale_schedule(coarse, fine, transition_scale, bundle.plan)
    sizes = _gen_sizes(bundle, size)
    id_t = _schedule_tensors(bundle, schedule, sizes)
    # same stream as sample(): fusing an identity with itself IS a plain sample
    out = run_pyramid(bundle, sizes, id_t, _random_noises(bundle, sizes, seed, "sample"))
    return from_tensor(out)


def spatial_sample(bundle: ModelBundle, mask_map: IdentityMap, faithful=None,
                   seed: int = 0) -> np.ndarray:
    """Generate under a categorical per-pixel identity mask.

    faithful: identity indices whose regions keep the reconstruction noise
    (those parts stay close to the training image); other regions sample.
    """
    _require_trained(bundle)
    mask_map.validate()
    if not mask_map.is_categorical():
        raise CategoricalRequired("spatial sampling requires a categorical identity mask")
    sizes = list(bundle.plan.sizes)
    if (mask_map.height, mask_map.width) != tuple(sizes[0]):
        mask_map = resample_id(mask_map, sizes[0])
    id_t = _schedule_tensors(bundle, mask_map, sizes)

    faithful = set(faithful or [])
    owner = torch.from_numpy(mask_map.weights.argmax(axis=2))
    faithful_mask = torch.zeros_like(owner, dtype=torch.bool)
    for k in faithful:
        if not 0 <= int(k) < bundle.K:
            raise GenerationError(f"faithful identity {k} out of range")
        faithful_mask |= owner == int(k)

    def noises(level):
        h, w = sizes[level]
        z = rng.normal((1, 3, h, w), seed, "spatial", level) * bundle.sigmas[level]
        if faithful_mask.any():
            m = resample_tensor(faithful_mask.float()[None, None], (h, w),
                                mode="bilinear", clamp=(0.0, 1.0)) >= 0.5
            z = torch.where(m, bundle.noise.rec_noise(level).unsqueeze(0), z)
        return z

    out = run_pyramid(bundle, sizes, id_t, noises)
    return from_tensor(out)


def edit(bundle: ModelBundle, edited_image: np.ndarray, inject_scale=None, ids=None,
         k: int = 0, seed: int = 0) -> np.ndarray:
    """Re-render an edited image through the fine scales.

    The edit, resampled to the injection scale's size, replaces the upsampled
    previous input of that scale's generator; reconstruction noise keeps the
    result faithful while finer scales repaint textures under the chosen
    identity.
    """
    _require_trained(bundle)
    n = bundle.plan.n_levels
    m = max(n - 2, 0) if inject_scale is None else int(inject_scale)
    if not 0 <= m < n:
        raise GenerationError(f"inject scale {m} outside pyramid of {n} levels")
    if m == bundle.plan.coarsest and n > 1:
        raise GenerationError("inject scale must be below the coarsest level")
    sizes = list(bundle.plan.sizes)
    if ids is None:
        ids = constant_id(k, bundle.K, sizes[0])
    id_t = _schedule_tensors(bundle, ids, sizes)
    from .pyramid import resample, to_tensor

    inject = to_tensor(resample(edited_image, sizes[m])).unsqueeze(0)
    noises = {lvl: bundle.noise.rec_noise(lvl).unsqueeze(0) for lvl in range(n)}
    out = run_pyramid(bundle, sizes, id_t, lambda lvl: noises[lvl],
                      start_level=m, inject=inject)
    return from_tensor(out)
