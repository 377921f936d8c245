"""Image pyramids, resampling and crop-with-halo geometry.

Images live in [-1, 1] float32 everywhere inside the package; conversion to
and from 8-bit happens only at the PNG boundary. Numpy images are (H, W, C),
network tensors are channels-first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


@dataclass
class CropWindow:
    """A core crop plus the halo that must surround it for unpadded convs."""

    top: int
    left: int
    height: int
    width: int
    halo: int

    def validate(self, bounds_hw) -> None:
        h, w = bounds_hw
        if self.height <= 0 or self.width <= 0 or self.halo < 0:
            raise ValueError(f"degenerate crop window {self}")
        if self.top < 0 or self.left < 0 or self.top + self.height > h or self.left + self.width > w:
            raise ValueError(
                f"crop core {self.top},{self.left} {self.height}x{self.width} outside {h}x{w} bounds"
            )


@dataclass
class ScalePlan:
    """Per-level sizes of the pyramid, finest (level 0) to coarsest (level n)."""

    scale_factor_r: float
    sizes: list  # [(h, w)] finest -> coarsest
    crop_size: list  # [int | None], aligned with sizes
    min_dim: int
    max_dim: int

    @property
    def n_levels(self) -> int:
        return len(self.sizes)

    @property
    def coarsest(self) -> int:
        return self.n_levels - 1

    def level_sizes_for(self, out_hw) -> list:
        """Per-level sizes for generating an output of arbitrary shape."""
        return plan_sizes(out_hw, self.scale_factor_r, self.coarsest)

    def to_dict(self) -> dict:
        return {
            "scale_factor_r": self.scale_factor_r,
            "sizes": [list(s) for s in self.sizes],
            "crop_size": list(self.crop_size),
            "min_dim": self.min_dim,
            "max_dim": self.max_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "ScalePlan":
        return ScalePlan(
            scale_factor_r=float(d["scale_factor_r"]),
            sizes=[tuple(int(v) for v in s) for s in d["sizes"]],
            crop_size=[None if c is None else int(c) for c in d["crop_size"]],
            min_dim=int(d["min_dim"]),
            max_dim=int(d["max_dim"]),
        )


def plan_sizes(full_hw, r: float, n: int) -> list:
    """Sizes round(full * r^i) for i = 0..n, clamped to at least 1 pixel."""
    h0, w0 = full_hw
    out = []
    for i in range(n + 1):
        f = r**i
        out.append((max(1, round(h0 * f)), max(1, round(w0 * f))))
    return out


def build_scale_plan(full_size, r: float, min_dim: int = 25, max_dim: int = 250,
                     crop_window=None) -> ScalePlan:
    """Decide pyramid depth, per-level sizes and which levels train on crops.

    The image is assumed pre-scaled so its longer side is at most max_dim
    (see load_image). The coarsest level keeps min(h, w) >= min_dim; for
    non-square images the shorter side is what limits the depth.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"scale factor r must be in (0, 1), got {r}")
    if min_dim > max_dim:
        raise ValueError(f"min_dim {min_dim} must be <= max_dim {max_dim}")
    h0, w0 = full_size
    if min(h0, w0) < min_dim:
        raise ValueError(f"image {h0}x{w0} smaller than min_dim {min_dim}")
    if max(h0, w0) > max_dim:
        raise ValueError(f"image {h0}x{w0} larger than max_dim {max_dim}; prescale first")

    long_side = max(h0, w0)
    short_side = min(h0, w0)
    if short_side <= min_dim:
        n = 0
    else:
        # 1e-9 slack so exact powers of r do not round up/down one level
        n = math.ceil(math.log(min_dim / long_side) / math.log(r) - 1e-9)
        # keep the shorter side above min_dim too
        n_short = math.floor(math.log(min_dim / short_side) / math.log(r) + 1e-9)
        n = max(0, min(n, n_short))
    sizes = plan_sizes(full_size, r, n)
    for (ha, wa), (hb, wb) in zip(sizes, sizes[1:]):
        if hb >= ha or wb >= wa:
            raise ValueError(f"pyramid sizes not strictly decreasing: {sizes} (r={r})")
    crops = [
        crop_window if (crop_window is not None and max(h, w) > crop_window) else None
        for (h, w) in sizes
    ]
    return ScalePlan(scale_factor_r=r, sizes=sizes, crop_size=crops,
                     min_dim=min_dim, max_dim=max_dim)


def default_crop_window(max_dim: int) -> int:
    # 128 for small training images, 256 for larger ones
    return 128 if max_dim <= 300 else 256


def resample_tensor(t: torch.Tensor, target_hw, mode: str = "bicubic",
                    clamp=(-1.0, 1.0)) -> torch.Tensor:
    """Resize a (..., H, W) tensor; antialiased when shrinking."""
    th, tw = int(target_hw[0]), int(target_hw[1])
    if th < 1 or tw < 1:
        raise ValueError(f"invalid resample target {target_hw}")
    squeeze = False
    if t.dim() == 3:
        t = t.unsqueeze(0)
        squeeze = True
    h, w = t.shape[-2:]
    if (h, w) == (th, tw):
        out = t
    else:
        antialias = th < h or tw < w
        out = F.interpolate(t, size=(th, tw), mode=mode, antialias=antialias)
        if clamp is not None:
            out = out.clamp(*clamp)
    return out.squeeze(0) if squeeze else out


def resample(img: np.ndarray, target_hw) -> np.ndarray:
    """Bicubic resize of an (H, W, C) image, clamped back to [-1, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))
    out = resample_tensor(t, target_hw, mode="bicubic", clamp=(-1.0, 1.0))
    return out.numpy().transpose(1, 2, 0).copy()


def crop_with_halo(t: torch.Tensor, win: CropWindow) -> torch.Tensor:
    """Crop the core window plus halo from a (..., H, W) tensor.

    Halo pixels that fall outside the tensor are zero-filled, which is exactly
    the zero padding the full-image forward would have seen at the borders, so
    crops keep the positional cue of the image boundary.
    """
    h, w = t.shape[-2:]
    win.validate((h, w))
    ha = win.halo
    t0, l0 = win.top - ha, win.left - ha
    t1, l1 = win.top + win.height + ha, win.left + win.width + ha
    out_shape = t.shape[:-2] + (win.height + 2 * ha, win.width + 2 * ha)
    out = t.new_zeros(out_shape)
    src_t, src_l = max(t0, 0), max(l0, 0)
    src_b, src_r = min(t1, h), min(l1, w)
    out[..., src_t - t0 : src_b - t0, src_l - l0 : src_r - l0] = t[..., src_t:src_b, src_l:src_r]
    return out


def random_crop_window(size_hw, crop: int, halo: int, rng: np.random.Generator) -> CropWindow:
    h, w = size_hw
    ch, cw = min(crop, h), min(crop, w)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return CropWindow(top=top, left=left, height=ch, width=cw, halo=halo)


def build_pyramid(img: np.ndarray, plan: ScalePlan) -> list:
    """Training image at every plan level, finest to coarsest."""
    return [resample(img, s) for s in plan.sizes]


# ---------------------------------------------------------------------------
# I/O and tensor conversion

def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, C) float image -> (C, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()


def from_tensor(t: torch.Tensor) -> np.ndarray:
    if t.dim() == 4:
        t = t.squeeze(0)
    return t.detach().cpu().float().numpy().transpose(1, 2, 0).copy()


def load_image(path, max_dim=None) -> np.ndarray:
    """Load a PNG/JPEG as float32 (H, W, 3) in [-1, 1].

    If max_dim is given and the longer side exceeds it, the image is shrunk so
    the longer side equals max_dim (aspect preserved); small images are never
    upscaled.
    """
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    img = arr / 127.5 - 1.0
    if max_dim is not None and max(img.shape[:2]) > max_dim:
        h, w = img.shape[:2]
        f = max_dim / max(h, w)
        img = resample(img, (max(1, round(h * f)), max(1, round(w * f))))
    return img


def save_image(img: np.ndarray, path) -> None:
    arr = np.clip((img + 1.0) * 127.5, 0.0, 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def encode_png(img: np.ndarray) -> bytes:
    import io

    arr = np.clip((img + 1.0) * 127.5, 0.0, 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
    """PSNR in dB over the [-1, 1] representation (peak-to-peak 2)."""
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak**2 / mse)
