"""Analysis experiments: quality vs. training-set diversity, capacity, cropping.

These orchestrate full (usually toy-sized) training runs and report trends;
headline numbers from large-scale studies are not reproducible at desk scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import replace

import numpy as np

from . import apps
from .identity import constant_id
from .metrics import evaluate_samples, sifid
from .training import TrainConfig, train_all


def panorama_crops(panorama: np.ndarray, num_crops: int, overlap: float) -> list:
    """num_crops square sub-images stepped left to right with given overlap."""
    h, w = panorama.shape[:2]
    cw = h
    step = int(round(cw * (1.0 - overlap)))
    if step <= 0:
        raise ValueError(f"overlap {overlap} leaves no step between crops")
    needed = cw + (num_crops - 1) * step
    if needed > w:
        raise ValueError(f"panorama width {w} too small for {num_crops} crops of {cw} "
                         f"with overlap {overlap} (needs {needed})")
    return [panorama[:, i * step : i * step + cw] for i in range(num_crops)]


def panorama_experiment(panorama: np.ndarray, num_crops: int, overlap: float,
                        config: TrainConfig, extractor, n_samples: int = 50,
                        include_self_pair: bool = False, replicates: int = 1) -> list:
    """Train on (crop 0, crop i) pairs and score id-0 samples against crop 0.

    Returns [(crop_index, mean_sifid)]; crop indices 1..num_crops-1 (plus 0
    when include_self_pair). All pairs share the same seed per replicate so
    the curve is a paired comparison; replicates > 1 averages over seeds.
    """
    crops = panorama_crops(panorama, num_crops, overlap)
    indices = list(range(0 if include_self_pair else 1, num_crops))
    curve = []
    for i in indices:
        scores = []
        for rep in range(replicates):
            cfg = replace(config, seed=config.seed + 1000 * rep)
            bundle = train_all([crops[0], crops[i]], cfg)
            ref = bundle.images[0]
            idm = constant_id(0, bundle.K, bundle.plan.sizes[0])
            scores.extend(sifid(ref, apps.sample(bundle, idm, seed=s), extractor)
                          for s in range(n_samples))
        curve.append((i, float(np.mean(scores))))
    return curve


def capacity_experiment(images: list, ks: list, channel_variants: list,
                        config: TrainConfig, extractor, n_samples: int = 50,
                        target_id: int = 0) -> list:
    """Quality of the target identity's samples as K and capacity vary.

    Returns one row per (K, channels): {"K", "channels", "sifid_mean"}.
    """
    if len(channel_variants) < 2:
        raise ValueError("need at least two channel variants to compare")
    if max(ks) > len(images):
        raise ValueError(f"asked for K={max(ks)} but only {len(images)} images given")
    rows = []
    for k_count in ks:
        for channels in channel_variants:
            cfg = replace(config, channels_base=int(channels))
            bundle = train_all(images[:k_count], cfg)
            ref = bundle.images[target_id]
            idm = constant_id(target_id, bundle.K, bundle.plan.sizes[0])
            scores = [sifid(ref, apps.sample(bundle, idm, seed=s), extractor)
                      for s in range(n_samples)]
            rows.append({"K": int(k_count), "channels": int(channels),
                         "sifid_mean": float(np.mean(scores))})
    return rows


def cropping_comparison(image: np.ndarray, config: TrainConfig, extractor,
                        n_samples: int = 50, crop_window: int = 128,
                        niqe_model=None) -> dict:
    """Full-image vs. cropped training on one image: Diversity/SIFID(/NIQE)."""
    results = {}
    for label, crop in (("vanilla", None), ("cropped", crop_window)):
        cfg = replace(config, crop_window=crop)
        bundle = train_all([image], cfg)
        idm = constant_id(0, 1, bundle.plan.sizes[0])
        samples = [apps.sample(bundle, idm, seed=s) for s in range(n_samples)]
        results[label] = evaluate_samples(samples, bundle.images[0], extractor,
                                          niqe_model=niqe_model)
    return results


def write_rows_csv(rows, path, fieldnames=None) -> None:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
