"""Per-scale generator/discriminator pairs with identity-conditioned modulation.

All convolutions are unpadded, so each scale network shrinks its input by
RF - 1 pixels; callers either zero-pad full images or crop windows with a halo
of (RF - 1) / 2. Normalization uses per-sample spatial statistics while
training and tracked running statistics when frozen, which keeps a frozen
network fully local: a cropped forward equals the matching window of the
full-image forward.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

N_CONVS = 5  # head + three blocks + tail
NORM_EPS = 1e-5


def channels_for_scale(i: int, base: int = 32, cap: int = 512, period: int = 4) -> int:
    """Channel count at scale i, counting i = 0 at the coarsest level."""
    if i < 0:
        raise ValueError("scale index counts from the coarsest, must be >= 0")
    return min(cap, base * 2 ** (i // period))


def receptive_field(n_convs: int = N_CONVS, kernel: int = 3) -> int:
    rf = 1
    for _ in range(n_convs):
        rf += kernel - 1
    return rf


def halo(n_convs: int = N_CONVS, kernel: int = 3) -> int:
    return (receptive_field(n_convs, kernel) - 1) // 2


HALO = halo()
RF = receptive_field()


def init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class SpatialNorm(nn.Module):
    """Parameter-free per-channel spatial normalization with tracked stats.

    Training: each sample is normalized by its own spatial mean/std (batch
    statistics would couple identities within a batch), and running averages
    track those stats. Frozen/eval (or inside pinned_stats): the running
    statistics are used, so the op is pointwise and window-independent; this
    is what makes a frozen network fully local.
    """

    def __init__(self, channels: int, momentum: float = 0.1):
        super().__init__()
        self.momentum = momentum
        self.pin_running = False
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and not self.pin_running:
            mean = x.mean(dim=(2, 3), keepdim=True)
            var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
            with torch.no_grad():
                m = self.momentum
                self.running_mean.mul_(1 - m).add_(mean.mean(dim=0).flatten(), alpha=m)
                self.running_var.mul_(1 - m).add_(var.mean(dim=0).flatten(), alpha=m)
        else:
            mean = self.running_mean.view(1, -1, 1, 1).to(x.dtype)
            var = self.running_var.view(1, -1, 1, 1).to(x.dtype)
        return (x - mean) / torch.sqrt(var + NORM_EPS)

    @torch.no_grad()
    def load_stats(self, mean: torch.Tensor, var: torch.Tensor) -> None:
        self.running_mean.copy_(mean)
        self.running_var.copy_(var)


class pinned_stats:
    """Run a module with running statistics even in train mode.

    Used for the reconstruction branch during training: its loss then
    optimizes exactly the function inference evaluates (gradients flow through
    weights; the statistics are constants).
    """

    def __init__(self, module: nn.Module):
        self.norms = [m for m in module.modules() if isinstance(m, SpatialNorm)]

    def __enter__(self):
        for norm in self.norms:
            norm.pin_running = True
        return self

    def __exit__(self, *exc):
        for norm in self.norms:
            norm.pin_running = False
        return False


class SpadeUnit(nn.Module):
    """Spatial normalization modulated by the identity map.

    The identity map passes through a shared 1x1 convolution + ReLU, then two
    1x1 heads produce gamma and beta, which scale and shift the normalized
    features element-by-element. Initialization forces gamma=1, beta=0 so the
    unit starts as plain normalization.
    """

    def __init__(self, channels: int, n_ids: int, hidden: int = 64):
        super().__init__()
        self.norm = SpatialNorm(channels)
        self.shared = nn.Conv2d(n_ids, hidden, kernel_size=1)
        self.to_gamma = nn.Conv2d(hidden, channels, kernel_size=1)
        self.to_beta = nn.Conv2d(hidden, channels, kernel_size=1)
        init_weights(self.shared)
        nn.init.zeros_(self.to_gamma.weight)
        nn.init.ones_(self.to_gamma.bias)
        nn.init.zeros_(self.to_beta.weight)
        nn.init.zeros_(self.to_beta.bias)

    def modulation(self, id_map: torch.Tensor):
        hid = F.relu(self.shared(id_map))
        return self.to_gamma(hid), self.to_beta(hid)

    def forward(self, x: torch.Tensor, id_map: torch.Tensor) -> torch.Tensor:
        if id_map.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"identity map {tuple(id_map.shape[-2:])} does not match features {tuple(x.shape[-2:])}")
        gamma, beta = self.modulation(id_map)
        return gamma * self.norm(x) + beta


class SBasicBlock(nn.Module):
    """Conv3x3 (unpadded) -> SPADE -> LeakyReLU(0.2)."""

    def __init__(self, in_ch: int, out_ch: int, n_ids: int, hidden: int = 64):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3)
        self.spade = SpadeUnit(out_ch, n_ids, hidden)
        init_weights(self.conv)

    def forward(self, x: torch.Tensor, id_map: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.spade(self.conv(x), id_map), 0.2)


class BasicBlock(nn.Module):
    """Conv3x3 (unpadded) -> parameter-free spatial norm -> LeakyReLU(0.2)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3)
        self.norm = SpatialNorm(out_ch)
        init_weights(self.conv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.norm(self.conv(x)), 0.2)


def _center_crop(t: torch.Tensor, margin: int) -> torch.Tensor:
    if margin == 0:
        return t
    return t[..., margin:-margin, margin:-margin]


class GeneratorScale(nn.Module):
    """One pyramid level: z + upsampled previous image in, resampled image out.

    Inputs arrive padded or cropped-with-halo at (H, W); the output core is
    (H - RF + 1, W - RF + 1). The upsampled previous image rides a residual
    connection (center-cropped to the core) and the sum passes through tanh.
    """

    def __init__(self, n_ids: int, channels: int, hidden: int = 64):
        super().__init__()
        self.n_ids = n_ids
        self.channels = channels
        self.head = nn.Conv2d(3, channels, kernel_size=3)
        self.blocks = nn.ModuleList(
            [SBasicBlock(channels, channels, n_ids, hidden) for _ in range(3)]
        )
        self.tail = nn.Conv2d(channels, 3, kernel_size=3)
        init_weights(self.head)
        init_weights(self.tail)

    def forward(self, z: torch.Tensor, prev_up: torch.Tensor, id_map: torch.Tensor) -> torch.Tensor:
        if z.shape[-2:] != prev_up.shape[-2:] or z.shape[-2:] != id_map.shape[-2:]:
            raise ValueError("z, prev_up and id_map must share spatial dims")
        h, w = z.shape[-2:]
        if h < RF or w < RF:
            raise ValueError(f"input {h}x{w} below receptive field {RF}")
        x = self.head(z + prev_up)
        offset = 1
        for block in self.blocks:
            offset += 1
            x = block(x, _center_crop(id_map, offset))
        out = self.tail(x)
        return torch.tanh(out + _center_crop(prev_up, HALO))


class DiscriminatorScale(nn.Module):
    """Patch critic: unpadded score map, one score per receptive-field patch."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.head = nn.Conv2d(3, channels, kernel_size=3)
        self.blocks = nn.ModuleList([BasicBlock(channels, channels) for _ in range(3)])
        self.tail = nn.Conv2d(channels, 1, kernel_size=3)
        init_weights(self.head)
        init_weights(self.tail)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h < RF or w < RF:
            raise ValueError(f"input {h}x{w} below receptive field {RF}")
        x = F.leaky_relu(self.head(x), 0.2)
        for block in self.blocks:
            x = block(x)
        return self.tail(x)


def spade_modulate(features: torch.Tensor, id_map: torch.Tensor, unit: SpadeUnit,
                   training: bool = True) -> torch.Tensor:
    """Apply one SPADE unit outside a block (testing/inspection helper)."""
    mode = unit.training
    unit.train(training)
    try:
        return unit(features, id_map)
    finally:
        unit.train(mode)


def padded_forward(gen: GeneratorScale, z: torch.Tensor, prev_up: torch.Tensor,
                   id_map: torch.Tensor) -> torch.Tensor:
    """Full-image forward: zero-pad all inputs by the halo, keep output size.

    Zero padding the identity map (rather than extending it) preserves the
    positional border cue that training crops occasionally see.
    """
    pad = (HALO,) * 4
    return gen(F.pad(z, pad), F.pad(prev_up, pad), F.pad(id_map, pad))
