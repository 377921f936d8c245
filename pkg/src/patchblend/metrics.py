"""Quantitative evaluation: single-image Fréchet scores, diversity, NIQE.

The deep-feature extractor is an interface; tests run against a fixed random
projection stub so every metric is verifiable offline, while the shipped
default adapter targets the first pooling layer of a pretrained classifier
when its weights are available.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import gamma as gamma_fn

PSD_TOL = 1e-8


class MetricError(ValueError):
    pass


class ExtractorUnavailable(RuntimeError):
    pass


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    def validate(self) -> "FeatureStats":
        if self.sigma.shape != (self.mu.shape[0], self.mu.shape[0]):
            raise MetricError("covariance shape does not match mean")
        asym = float(np.abs(self.sigma - self.sigma.T).max()) if self.sigma.size else 0.0
        if asym > PSD_TOL * max(1.0, float(np.abs(self.sigma).max())):
            raise MetricError(f"covariance not symmetric (off by {asym:.2e})")
        return self


def feature_stats(feats: np.ndarray) -> FeatureStats:
    """Mean/covariance over the rows of an (N, d) feature matrix."""
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise MetricError(f"need an (N>=2, d) feature matrix, got {f.shape}")
    mu = f.mean(axis=0)
    sigma = np.cov(f, rowvar=False)
    sigma = np.atleast_2d(sigma)
    return FeatureStats(mu=mu, sigma=(sigma + sigma.T) / 2.0)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max())) if vals.size else 1.0
    if vals.min() < -PSD_TOL * scale:
        raise MetricError(f"matrix not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T

def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The product square root is computed symmetrically as
    (B S_a B)^(1/2) with B = S_b^(1/2), via eigendecomposition.
    """
    a.validate()
    b.validate()
    if a.mu.shape != b.mu.shape:
        raise MetricError("feature dimensions differ")
    ssd = float(((a.mu - b.mu) ** 2).sum())
    root_b = _sqrt_psd(b.sigma)
    inner = _sqrt_psd(root_b @ a.sigma @ root_b)
    tr = float(np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(inner))
    return ssd + tr


class StubFeatureExtractor:
    """Fixed random 1x1 projection of RGB; enough to test the metric core."""

    def __init__(self, seed: int = 0, dim: int = 8):
        g = np.random.default_rng(seed)
        self.weight = g.standard_normal((3, dim)).astype(np.float64)
        self.bias = g.standard_normal(dim).astype(np.float64)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return img.astype(np.float64) @ self.weight + self.bias


class InceptionFeatureExtractor:
    """First-pool features of a pretrained classifier (needs downloaded weights)."""

    def __init__(self):
        try:
            from torchvision.models import Inception_V3_Weights, inception_v3
        except Exception as exc:  # pragma: no cover - environment dependent
            raise ExtractorUnavailable(f"torchvision unavailable: {exc}") from exc
        try:
            net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
        except Exception as exc:  # pragma: no cover - needs network/cache
            raise ExtractorUnavailable(
                "pretrained weights unavailable; pass a custom extractor or use the stub"
            ) from exc
        import torch
        import torch.nn as nn

        self._torch = torch
        net.eval()
        self.blocks = nn.Sequential(
            net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3,
            nn.MaxPool2d(kernel_size=3, stride=2),
        )

    def __call__(self, img: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            t = torch.from_numpy(img.transpose(2, 0, 1)).float().unsqueeze(0)
            f = self.blocks(t)[0]
        return f.numpy().transpose(1, 2, 0)


def sifid(real: np.ndarray, fake: np.ndarray, extractor) -> float:
    """Fréchet distance between the two images' own deep-feature statistics,
    computed over spatial positions."""
    stats = []
    for img in (real, fake):
        f = np.asarray(extractor(img))
        if f.ndim != 3:
            raise MetricError(f"extractor must return (h, w, d), got {f.shape}")
        stats.append(feature_stats(f.reshape(-1, f.shape[2])))
    return frechet_distance(stats[0], stats[1])


def diversity(samples, reference: np.ndarray) -> float:
    """Mean per-pixel std across samples, normalized by the reference std."""
    if len(samples) < 2:
        raise MetricError("need at least two samples")
    if any(np.asarray(s).shape != reference.shape for s in samples):
        raise MetricError("samples and reference must share shapes")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    per_pixel = stack.std(axis=0, ddof=0)
    ref_std = float(np.asarray(reference, dtype=np.float64).std(ddof=0))
    if ref_std == 0.0:
        raise MetricError("reference image has zero variance")
    return float(per_pixel.mean() / ref_std)


# ---------------------------------------------------------------------------
# NIQE: natural-scene-statistics quality against a pristine model file.

def _estimate_aggd(vec: np.ndarray):
    """Asymmetric generalized Gaussian parameters (alpha, beta_l, beta_r)."""
    gam = np.arange(0.2, 10.001, 0.001)
    r_gam = (gamma_fn(2.0 / gam) ** 2) / (gamma_fn(1.0 / gam) * gamma_fn(3.0 / gam))
    neg = vec[vec < 0]
    pos = vec[vec > 0]
    left_std = np.sqrt(np.mean(neg**2)) if neg.size else 1e-6
    right_std = np.sqrt(np.mean(pos**2)) if pos.size else 1e-6
    gamma_hat = left_std / right_std
    r_hat = (np.mean(np.abs(vec)) ** 2) / max(np.mean(vec**2), 1e-12)
    r_hat_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / ((gamma_hat**2 + 1) ** 2)
    alpha = gam[np.argmin((r_gam - r_hat_norm) ** 2)]
    conv = np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha))
    return alpha, left_std * conv, right_std * conv


def _mscn(img: np.ndarray, sigma: float = 7.0 / 6.0) -> np.ndarray:
    mu = gaussian_filter(img, sigma, mode="nearest")
    var = gaussian_filter(img * img, sigma, mode="nearest") - mu * mu
    return (img - mu) / (np.sqrt(np.abs(var)) + 1.0)


def _block_features(block: np.ndarray) -> np.ndarray:
    feats = []
    alpha, bl, br = _estimate_aggd(block.ravel())
    feats.extend([alpha, (bl + br) / 2.0])
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        shifted = np.roll(np.roll(block, dy, axis=0), dx, axis=1)
        alpha, bl, br = _estimate_aggd((block * shifted).ravel())
        eta = (br - bl) * (gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha))
        feats.extend([alpha, eta, bl, br])
    return np.array(feats)


def _to_gray(img: np.ndarray) -> np.ndarray:
    """[-1,1] RGB or gray -> [0,255] luma."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    return (arr + 1.0) * 127.5


def niqe_features(img: np.ndarray, block_size: int = 96) -> np.ndarray:
    """Per-block 36-dim NSS feature matrix over two scales."""
    gray = _to_gray(img)
    h, w = gray.shape
    bh, bw = (h // block_size) * block_size, (w // block_size) * block_size
    if bh == 0 or bw == 0:
        raise MetricError(f"image {h}x{w} smaller than NIQE block size {block_size}")
    gray = gray[:bh, :bw]
    all_feats = None
    for scale in (1, 2):
        if scale == 2:
            gray = (gray[0::2, 0::2] + gray[1::2, 0::2] + gray[0::2, 1::2] + gray[1::2, 1::2]) / 4.0
        norm = _mscn(gray)
        b = block_size // scale
        rows, cols = norm.shape[0] // b, norm.shape[1] // b
        feats = np.stack([
            _block_features(norm[i * b:(i + 1) * b, j * b:(j + 1) * b])
            for i in range(rows) for j in range(cols)
        ])
        all_feats = feats if all_feats is None else np.hstack([all_feats, feats])
    return np.nan_to_num(all_feats)


def fit_niqe_model(images, out_path, block_size: int = 96) -> dict:
    """Fit pristine-model coefficients (mu, cov) from a corpus of images."""
    feats = np.vstack([niqe_features(img, block_size) for img in images])
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    np.savez(out_path, mu=mu, cov=cov, block_size=np.array(block_size))
    return {"mu": mu, "cov": cov, "block_size": block_size}


def load_niqe_model(path) -> dict:
    if not os.path.exists(path):
        raise MetricError(
            f"NIQE coefficient file not found: {path}; the metric is optional and "
            "needs a pristine-model file (fit one with fit_niqe_model or point to "
            "a published modelparameters.mat)"
        )
    if str(path).endswith(".mat"):
        from scipy.io import loadmat

        mat = loadmat(path)
        return {"mu": np.ravel(mat["mu_prisparam"]), "cov": mat["cov_prisparam"],
                "block_size": 96}
    data = np.load(path)
    return {"mu": data["mu"], "cov": data["cov"], "block_size": int(data["block_size"])}


def niqe(img: np.ndarray, model_file) -> float:
    """No-reference quality score; lower is closer to the pristine model."""
    model = model_file if isinstance(model_file, dict) else load_niqe_model(model_file)
    feats = niqe_features(img, int(model["block_size"]))
    mu_img = feats.mean(axis=0)
    cov_img = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros((feats.shape[1],) * 2)
    pinv = np.linalg.pinv((model["cov"] + cov_img) / 2.0)
    d = model["mu"] - mu_img
    return float(np.sqrt(max(d @ pinv @ d, 0.0)))


@dataclass
class MetricReport:
    diversity_mean: float
    diversity_std: float
    sifid_mean: float
    sifid_std: float
    niqe_mean: float
    niqe_std: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "diversity": [self.diversity_mean, self.diversity_std],
            "sifid": [self.sifid_mean, self.sifid_std],
            "niqe": [self.niqe_mean, self.niqe_std],
            "sample_count": self.sample_count,
        }

    def to_csv(self) -> str:
        lines = ["metric,mean,std"]
        lines.append(f"diversity,{self.diversity_mean},{self.diversity_std}")
        lines.append(f"sifid,{self.sifid_mean},{self.sifid_std}")
        lines.append(f"niqe,{self.niqe_mean},{self.niqe_std}")
        lines.append(f"sample_count,{self.sample_count},")
        return "\n".join(lines) + "\n"


def evaluate_samples(samples, reference: np.ndarray, extractor,
                     niqe_model=None) -> MetricReport:
    """Diversity / SIFID / optional NIQE over a set of generated samples."""
    if len(samples) < 2:
        raise MetricError("need at least two samples")
    div = diversity(samples, reference)
    sifids = np.array([sifid(reference, s, extractor) for s in samples])
    if niqe_model is not None:
        niqes = np.array([niqe(s, niqe_model) for s in samples])
        n_mean, n_std = float(niqes.mean()), float(niqes.std())
    else:
        n_mean = n_std = float("nan")
    return MetricReport(
        diversity_mean=float(div), diversity_std=0.0,
        sifid_mean=float(sifids.mean()), sifid_std=float(sifids.std()),
        niqe_mean=n_mean, niqe_std=n_std, sample_count=len(samples),
    )
