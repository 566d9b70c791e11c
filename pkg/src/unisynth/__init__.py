"""Unified multi-modal image synthesis for missing-modality imputation."""

from .conditioning import AvailabilityCondition, CurriculumSchedule, sample_condition, zero_impute
from .config import ExperimentConfig, load_config
from .metrics import evaluate_matrix, psnr, ssim, two_sample_ttest
from .model import Generator, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "AvailabilityCondition", "CurriculumSchedule", "ExperimentConfig", "Generator", "ModelConfig",
    "evaluate_matrix", "load_config", "psnr", "sample_condition", "ssim", "two_sample_ttest", "zero_impute",
]
