"""Identity-conditioned multi-scale patch GANs for a handful of images.

Train one model on a few images, then drive generation through per-pixel
identity maps: sampling, reconstruction, melding, morphing, structure-texture
fusion, spatial masking and editing.
"""

from .apps import (edit, fuse, meld, meld_many, morph, morph_pair_weights,
                   reconstruct, sample, spatial_sample)
from .bundle import ModelBundle, NoiseSet, load_bundle, save_bundle
from .identity import (IdentityMap, IdentitySchedule, blend_constant,
                       constant_id, load_id_map, mask_id, ramp_id, resample_id,
                       save_id_map, scale_schedule)
from .metrics import (FeatureStats, MetricReport, StubFeatureExtractor,
                      diversity, frechet_distance, niqe, sifid)
from .networks import channels_for_scale, receptive_field
from .pyramid import (CropWindow, ScalePlan, build_scale_plan, crop_with_halo,
                      load_image, resample, save_image)
from .training import TrainConfig, train_all, train_scale

__all__ = [
    "ModelBundle", "NoiseSet", "load_bundle", "save_bundle",
    "IdentityMap", "IdentitySchedule", "blend_constant", "constant_id",
    "mask_id", "ramp_id", "resample_id", "scale_schedule", "save_id_map",
    "load_id_map",
    "CropWindow", "ScalePlan", "build_scale_plan", "crop_with_halo",
    "load_image", "save_image", "resample",
    "channels_for_scale", "receptive_field",
    "TrainConfig", "train_all", "train_scale",
    "sample", "reconstruct", "meld", "meld_many", "morph",
    "morph_pair_weights", "fuse", "spatial_sample", "edit",
    "FeatureStats", "MetricReport", "StubFeatureExtractor", "diversity",
    "frechet_distance", "sifid", "niqe",
]

__version__ = "0.1.0"
