"""Per-pixel image-identity maps and their construction/scheduling.

An identity map assigns every pixel a point on the K-simplex: which training
image's statistics to generate there. Training only ever sees spatially
constant one-hot maps; everything richer (ramps, masks, blends, per-scale
schedules) is inference-side.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .pyramid import ScalePlan, resample_tensor

SIMPLEX_ATOL = 1e-6

# fixed palette: identity index -> display RGB, shared with the frontend
PALETTE = [
    (230, 59, 46), (46, 125, 230), (52, 168, 83), (251, 188, 4),
    (156, 39, 176), (0, 172, 193), (255, 112, 67), (124, 179, 66),
]

RASTER_MAGIC = b"BGID"
RASTER_VERSION = 1
_RASTER_HEADER = struct.Struct("<4sHHII")  # magic, version, K, h, w


class PartitionError(ValueError):
    """Masks fail to cover every pixel exactly once."""


@dataclass
class IdentityMap:
    """(H, W, K) simplex weights over training-image identities."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 3:
            raise ValueError(f"identity map must be (H, W, K), got {self.weights.shape}")

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def K(self) -> int:
        return self.weights.shape[2]

    def validate(self) -> "IdentityMap":
        w = self.weights
        if np.any(w < -SIMPLEX_ATOL):
            raise ValueError("identity weights must be non-negative")
        sums = w.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > SIMPLEX_ATOL):
            off = float(np.abs(sums - 1.0).max())
            raise ValueError(f"identity weights must sum to 1 per pixel (off by {off:.2e})")
        return self

    def is_categorical(self, atol: float = SIMPLEX_ATOL) -> bool:
        return bool(np.all(np.abs(self.weights.max(axis=2) - 1.0) <= atol))

    def to_tensor(self) -> torch.Tensor:
        """(K, H, W) float32 tensor for the networks."""
        return torch.from_numpy(np.ascontiguousarray(self.weights.transpose(2, 0, 1)))


def constant_id(k: int, K: int, size) -> IdentityMap:
    if not 0 <= k < K:
        raise ValueError(f"identity index {k} out of range for K={K}")
    h, w = size
    m = np.zeros((h, w, K), dtype=np.float32)
    m[:, :, k] = 1.0
    return IdentityMap(m)


def blend_constant(weights, size) -> IdentityMap:
    w = np.asarray(weights, dtype=np.float32)
    if w.ndim != 1:
        raise ValueError("blend weights must be a flat K-vector")
    if np.any(w < 0) or abs(float(w.sum()) - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"blend weights must be a simplex point, got {w.tolist()}")
    h, wd = size
    return IdentityMap(np.broadcast_to(w, (h, wd, w.shape[0])).copy())


def mask_id(masks, size=None) -> IdentityMap:
    """One-hot map from K binary masks that partition the pixel grid."""
    m = np.asarray(masks)
    if m.ndim != 3:
        raise ValueError("masks must be (K, H, W)")
    if size is not None and tuple(m.shape[1:]) != tuple(size):
        raise ValueError(f"masks are {m.shape[1:]}, expected {tuple(size)}")
    m = (m != 0)
    counts = m.sum(axis=0)
    if np.any(counts != 1):
        over = int((counts > 1).sum())
        under = int((counts == 0).sum())
        raise PartitionError(
            f"masks must partition the grid: {over} pixels overlap, {under} uncovered"
        )
    return IdentityMap(m.transpose(1, 2, 0).astype(np.float32))


def ramp_id(axis: str, anchor_fracs, size) -> IdentityMap:
    """K=2 linear transition: id 0 before fraction a, id 1 after fraction b."""
    a, b = anchor_fracs
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"need 0 <= a < b <= 1, got a={a}, b={b}")
    h, w = size
    # endpoint convention: first pixel at fraction 0, last at 1, so the center
    # pixel of an odd extent sits exactly at 0.5
    if axis == "horizontal":
        coords = np.arange(w, dtype=np.float64) / max(w - 1, 1)
    elif axis == "vertical":
        coords = np.arange(h, dtype=np.float64) / max(h - 1, 1)
    else:
        raise ValueError(f"axis must be horizontal or vertical, got {axis!r}")
    w1 = np.clip((coords - a) / (b - a), 0.0, 1.0)
    if axis == "horizontal":
        plane = np.broadcast_to(w1, (h, w))
    else:
        plane = np.broadcast_to(w1[:, None], (h, w))
    m = np.stack([1.0 - plane, plane], axis=2).astype(np.float32)
    return IdentityMap(m)


def resample_id(idm: IdentityMap, target_hw) -> IdentityMap:
    """Bilinear resize plus per-pixel renormalization back onto the simplex."""
    if (idm.height, idm.width) == tuple(target_hw):
        return IdentityMap(idm.weights.copy())
    t = idm.to_tensor()
    out = resample_tensor(t, target_hw, mode="bilinear", clamp=(0.0, 1.0))
    w = out.numpy().transpose(1, 2, 0)
    sums = w.sum(axis=2, keepdims=True)
    w = np.where(sums > 1e-12, w / sums, 1.0 / idm.K)
    return IdentityMap(w.astype(np.float32))


@dataclass
class IdentitySchedule:
    """One identity map per pyramid level (index 0 = finest)."""

    maps: list

    def __post_init__(self):
        if not self.maps:
            raise ValueError("schedule needs at least one level")

    @property
    def n_levels(self) -> int:
        return len(self.maps)

    def at(self, level: int, size_hw) -> IdentityMap:
        if not 0 <= level < len(self.maps):
            raise ValueError(f"level {level} outside schedule of {len(self.maps)}")
        return resample_id(self.maps[level], size_hw)

    @staticmethod
    def broadcast(idm: IdentityMap, n_levels: int) -> "IdentitySchedule":
        return IdentitySchedule([idm] * n_levels)


def scale_schedule(coarse_map: IdentityMap, fine_map: IdentityMap,
                   transition_scale: int, plan: ScalePlan) -> IdentitySchedule:
    """Coarse map at levels >= transition_scale, fine map below it."""
    if not 0 <= transition_scale < plan.n_levels:
        raise ValueError(f"transition scale {transition_scale} outside plan of {plan.n_levels} levels")
    if coarse_map.K != fine_map.K:
        raise ValueError("coarse and fine maps must share K")
    maps = [coarse_map if lvl >= transition_scale else fine_map for lvl in range(plan.n_levels)]
    return IdentitySchedule([resample_id(m, plan.sizes[lvl]) for lvl, m in enumerate(maps)])


# ---------------------------------------------------------------------------
# Serialization: indexed PNG for categorical maps, float raster otherwise.

def save_id_map(idm: IdentityMap, path) -> None:
    data = encode_id_map(idm)
    with open(path, "wb") as f:
        f.write(data)


def encode_id_map(idm: IdentityMap) -> bytes:
    idm.validate()
    if idm.is_categorical():
        return _encode_indexed_png(idm)
    return _encode_raster(idm)


def _encode_indexed_png(idm: IdentityMap) -> bytes:
    import io

    from PIL import Image

    idx = idm.weights.argmax(axis=2).astype(np.uint8)
    im = Image.fromarray(idx, mode="P")
    palette = []
    for k in range(max(idm.K, 1)):
        palette.extend(PALETTE[k % len(PALETTE)])
    im.putpalette(palette)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def _encode_raster(idm: IdentityMap) -> bytes:
    header = _RASTER_HEADER.pack(RASTER_MAGIC, RASTER_VERSION, idm.K, idm.height, idm.width)
    planes = np.ascontiguousarray(idm.weights.transpose(2, 0, 1), dtype="<f4")
    return header + planes.tobytes()


def load_id_map(path, K=None) -> IdentityMap:
    with open(path, "rb") as f:
        return decode_id_map(f.read(), K=K)


def decode_id_map(data: bytes, K=None) -> IdentityMap:
    """Accepts both the indexed-PNG and the float-raster format."""
    if data[:4] == RASTER_MAGIC:
        magic, version, k, h, w = _RASTER_HEADER.unpack_from(data)
        if version != RASTER_VERSION:
            raise ValueError(f"unsupported identity raster version {version}")
        body = np.frombuffer(data, dtype="<f4", offset=_RASTER_HEADER.size)
        if body.size != k * h * w:
            raise ValueError("identity raster payload size mismatch")
        weights = body.reshape(k, h, w).transpose(1, 2, 0).astype(np.float32)
        return IdentityMap(weights).validate()
    import io

    from PIL import Image

    with Image.open(io.BytesIO(data)) as im:
        if im.mode != "P":
            raise ValueError("categorical identity maps must be indexed (palette) PNGs")
        idx = np.asarray(im, dtype=np.int64)
    k = int(idx.max()) + 1 if K is None else int(K)
    if idx.max() >= k:
        raise ValueError(f"palette index {int(idx.max())} out of range for K={k}")
    weights = np.zeros(idx.shape + (k,), dtype=np.float32)
    np.put_along_axis(weights, idx[:, :, None], 1.0, axis=2)
    return IdentityMap(weights)
