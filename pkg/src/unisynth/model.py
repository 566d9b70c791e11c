"""Generator assembly: encoder -> per-scale unification -> multi-stream decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from torch import nn

from .conditioning import AvailabilityCondition, zero_impute
from .decoder import MultiStreamDecoder
from .discriminator import Discriminators
from .encoder import CDSEncoder
from .fusion import FusionModule


@dataclass
class ModelConfig:
    n_modalities: int = 4
    image_size: tuple[int, int] = (64, 64)
    widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    encoder_variant: str = "CDS"
    encoder_shared_scales: int = 2
    fusion: str = "DFUM"
    fusion_combine: str = "mean"
    soft_normalize: bool = False
    attention_channels: int | None = None
    norm: str = "instance"
    output: str = "clamp"
    ceiling: float = 8.0
    dis_widths: tuple[int, ...] = (64, 128, 256)
    dis_deep_width: int = 512

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.widths = tuple(self.widths)
        self.dis_widths = tuple(self.dis_widths)

    def to_dict(self):
        return asdict(self)


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = CDSEncoder(cfg.n_modalities, cfg.image_size, cfg.widths, cfg.encoder_variant,
                                  cfg.encoder_shared_scales, cfg.norm)
        self.fusion = FusionModule(cfg.n_modalities, cfg.widths, cfg.fusion, combine=cfg.fusion_combine,
                                   soft_normalize=cfg.soft_normalize, branch_channels=cfg.attention_channels)
        self.decoder = MultiStreamDecoder(cfg.n_modalities, cfg.widths, cfg.norm, cfg.output, cfg.ceiling)

    def forward(self, pixels, ac: AvailabilityCondition):
        """``pixels`` must already be zero-imputed under ``ac``."""
        ac.check_input()
        return self.decoder(self.fusion(self.encoder(pixels), ac))

    def synthesize(self, images, ac: AvailabilityCondition):
        """Zero-impute complete or partial inputs and run the generator."""
        return self(zero_impute(images, ac), ac)


def build_models(cfg: ModelConfig):
    return Generator(cfg), Discriminators(cfg.n_modalities, cfg.dis_widths, cfg.dis_deep_width)
