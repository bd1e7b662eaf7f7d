"""Training-free visual anomaly detection via deterministic diffusion
inversion and resampling, with analytic backends for desk-scale verification
and a wire protocol for pretrained model servers."""

__version__ = "0.1.0"

from .schedule import CLEAN, NoiseSchedule, ScheduleConfig, TimestepPlan, alpha_bar_at, build_plan, build_schedule
from .ddim import LatentTensor, PromptCondition, cfg_combine, invert, invert_step, reconstruct, sample_step
from .backends import (
    AnalyticGaussianDenoiser,
    ConstantDenoiser,
    GaussianWorldModel,
    ObjectMask,
    PatchFeatures,
    analytic_gaussian_eps,
    identity_features,
    mean_pool_features,
)
from .anomaly import AnomalyResult, apply_mask, dissimilarity_map, image_score, score_image, upsample_bilinear
from .metrics import MetricsReport, auroc, average_precision, evaluate, f1_max, pro_score

__all__ = [
    "CLEAN",
    "NoiseSchedule",
    "ScheduleConfig",
    "TimestepPlan",
    "alpha_bar_at",
    "build_plan",
    "build_schedule",
    "LatentTensor",
    "PromptCondition",
    "cfg_combine",
    "invert",
    "invert_step",
    "reconstruct",
    "sample_step",
    "AnalyticGaussianDenoiser",
    "ConstantDenoiser",
    "GaussianWorldModel",
    "ObjectMask",
    "PatchFeatures",
    "analytic_gaussian_eps",
    "identity_features",
    "mean_pool_features",
    "AnomalyResult",
    "apply_mask",
    "dissimilarity_map",
    "image_score",
    "score_image",
    "upsample_bilinear",
    "MetricsReport",
    "auroc",
    "average_precision",
    "evaluate",
    "f1_max",
    "pro_score",
]
