import numpy as np
import pytest
import torch

from patchblend import TrainConfig, save_bundle, train_all

torch.set_num_threads(1)


def warm_texture(h, w):
    """Warm-toned horizontal stripes; statistically far from cool_texture."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.zeros((h, w, 3), np.float32)
    img[..., 0] = 0.6 + 0.2 * np.sin(2 * np.pi * x / 8)
    img[..., 1] = -0.2 + 0.3 * np.sin(2 * np.pi * (x + y) / 16)
    img[..., 2] = -0.7 + 0.1 * np.cos(2 * np.pi * y / 11)
    return np.clip(img, -0.85, 0.85)


def cool_texture(h, w):
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.zeros((h, w, 3), np.float32)
    img[..., 0] = -0.6 + 0.15 * np.cos(2 * np.pi * y / 7)
    img[..., 1] = 0.3 + 0.25 * np.sin(2 * np.pi * y / 9)
    img[..., 2] = 0.65 + 0.2 * np.sin(2 * np.pi * (x - y) / 13)
    return np.clip(img, -0.85, 0.85)


def ramp_texture(h, w, phase=0.0):
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.stack([
        0.5 * np.sin(2 * np.pi * x / 9 + phase),
        0.4 * np.cos(2 * np.pi * y / 7 + phase),
        0.3 * np.sin(2 * np.pi * (x + y) / 12),
    ], axis=2)
    return np.clip(img, -0.85, 0.85).astype(np.float32)


TOY_CONFIG = TrainConfig(iterations=40, min_dim=16, max_dim=32, scale_factor_r=0.6,
                         seed=11, deterministic=True)


@pytest.fixture(scope="session")
def toy_bundle():
    """Small 2-identity, 2-scale model shared by inference/service tests."""
    imgs = [warm_texture(32, 32), cool_texture(32, 32)]
    return train_all(imgs, TOY_CONFIG)


@pytest.fixture(scope="session")
def toy_bundle_dir(toy_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundles") / "toy"
    save_bundle(toy_bundle, out)
    return out


@pytest.fixture(scope="session")
def trio_bundle():
    """Minimal 3-identity single-scale model for multi-identity paths."""
    imgs = [warm_texture(20, 20), cool_texture(20, 20), ramp_texture(20, 20, 0.7)]
    cfg = TrainConfig(iterations=6, min_dim=20, max_dim=20, seed=5, deterministic=True)
    return train_all(imgs, cfg)
