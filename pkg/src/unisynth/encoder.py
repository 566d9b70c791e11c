"""Commonality- and discrepancy-sensitive encoder plus its ablation variants.

Each modality image goes through its own specific stream and through one
common stream shared by all modalities; per scale, the common features are
mixed into the specific pyramid by a concat + 1x1 convolution.  The deepest
``shared_scales`` blocks of the specific streams are a single module, so the
streams hold one copy of those weights.
"""
from __future__ import annotations

import torch
from torch import nn

CDS, MMS, COMMON = "CDS", "MMS", "C"
VARIANTS = (CDS, MMS, COMMON)
DEFAULT_WIDTHS = (32, 64, 128, 256, 512)


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm {kind!r}")


class ConvBlock(nn.Sequential):
    """3x3 convolution, normalization, leaky ReLU."""

    def __init__(self, cin, cout, stride=1, norm="instance"):
        super().__init__(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
            make_norm(norm, cout),
            nn.LeakyReLU(0.2),
        )


def scale_block(cin, cout, downsample, norm="instance"):
    return nn.Sequential(ConvBlock(cin, cout, 2 if downsample else 1, norm), ConvBlock(cout, cout, 1, norm))


class EncodingStream(nn.Module):
    def __init__(self, widths, norm="instance"):
        super().__init__()
        cins = (1,) + tuple(widths[:-1])
        self.blocks = nn.ModuleList(
            scale_block(cin, cout, s > 0, norm) for s, (cin, cout) in enumerate(zip(cins, widths))
        )

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


def fuse_common_specific(specific, common, mix: nn.Conv2d):
    """Channel-concatenate specific and common maps and mix them with a 1x1 conv."""
    if specific.shape[0] != common.shape[0] or specific.shape[-2:] != common.shape[-2:]:
        raise ValueError(f"cannot fuse maps of shape {tuple(specific.shape)} and {tuple(common.shape)}")
    if mix.in_channels != specific.shape[1] + common.shape[1]:
        raise ValueError(f"mixing layer expects {mix.in_channels} channels, "
                         f"got {specific.shape[1]} + {common.shape[1]}")
    return mix(torch.cat([specific, common], dim=1))


class CDSEncoder(nn.Module):
    """Encode B x M x H x W inputs into five per-modality feature scales.

    ``forward`` returns a list of tensors shaped B x M x C_s x H_s x W_s.
    """

    def __init__(self, n_modalities=4, image_size=(64, 64), widths=DEFAULT_WIDTHS,
                 variant=CDS, shared_scales=2, norm="instance"):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {variant!r}")
        widths = tuple(int(w) for w in widths)
        n_scales = len(widths)
        factor = 2 ** (n_scales - 1)
        if image_size[0] % factor or image_size[1] % factor:
            raise ValueError(f"image size {image_size} not divisible by {factor}")
        if not 0 <= shared_scales <= n_scales:
            raise ValueError("shared_scales out of range")
        self.n_modalities = n_modalities
        self.image_size = tuple(image_size)
        self.widths = widths
        self.variant = variant
        self.shared_from = n_scales - shared_scales

        self.common = EncodingStream(widths, norm) if variant in (CDS, COMMON) else None
        if variant in (CDS, MMS):
            cins = (1,) + widths[:-1]
            self.private = nn.ModuleList(
                nn.ModuleList(scale_block(cins[s], widths[s], s > 0, norm) for s in range(self.shared_from))
                for _ in range(n_modalities)
            )
            self.shared = nn.ModuleList(
                scale_block(cins[s], widths[s], s > 0, norm) for s in range(self.shared_from, n_scales)
            )
        else:
            self.private = self.shared = None
        if variant == CDS:
            self.mix = nn.ModuleList(
                nn.ModuleList(nn.Conv2d(2 * w, w, 1) for w in widths) for _ in range(n_modalities)
            )
        else:
            self.mix = None

    def specific_blocks(self, modality):
        """Scale blocks of the specific stream of one modality (shared ones included)."""
        return list(self.private[modality]) + list(self.shared)

    def common_features(self, x):
        """Common-stream pyramid for every modality, before any fusion."""
        b, m, h, w = x.shape
        feats = self.common(x.reshape(b * m, 1, h, w))
        return [f.reshape(b, m, *f.shape[1:]) for f in feats]

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.n_modalities or tuple(x.shape[-2:]) != self.image_size:
            raise ValueError(f"expected B x {self.n_modalities} x {self.image_size[0]} x "
                             f"{self.image_size[1]} input, got {tuple(x.shape)}")
        if self.variant == COMMON:
            return self.common_features(x)

        common = self.common_features(x) if self.variant == CDS else None
        b, m = x.shape[:2]
        n_scales = len(self.widths)
        pyramid = [[None] * m for _ in range(n_scales)]
        states = [x[:, i:i + 1] for i in range(m)]
        for s in range(n_scales):
            if s < self.shared_from:
                outs = [self.private[i][s](states[i]) for i in range(m)]
            else:
                # shared weights: one pass over all modalities at once
                joined = self.shared[s - self.shared_from](torch.cat(states, dim=0))
                outs = list(joined.split(b, dim=0))
            if common is not None:
                outs = [fuse_common_specific(outs[i], common[s][:, i], self.mix[i][s]) for i in range(m)]
            for i in range(m):
                pyramid[s][i] = outs[i]
            states = outs
        return [torch.stack(level, dim=1) for level in pyramid]
