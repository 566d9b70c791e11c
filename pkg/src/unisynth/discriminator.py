"""Per-modality least-squares patch discriminators."""
from __future__ import annotations

from torch import nn


class PatchDiscriminator(nn.Module):
    """Strided 4x4 conv stack ending in a one-channel score map."""

    def __init__(self, widths=(64, 128, 256), deep_width=512, in_channels=1):
        super().__init__()
        layers = []
        cin = in_channels
        for j, w in enumerate(widths):
            layers += [nn.Conv2d(cin, w, 4, stride=2, padding=1)]
            if j > 0:
                layers += [nn.InstanceNorm2d(w, affine=True)]
            layers += [nn.LeakyReLU(0.2)]
            cin = w
        layers += [nn.Conv2d(cin, deep_width, 4, stride=1, padding=1),
                   nn.InstanceNorm2d(deep_width, affine=True), nn.LeakyReLU(0.2),
                   nn.Conv2d(deep_width, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Discriminators(nn.Module):
    """One independent patch discriminator per modality."""

    def __init__(self, n_modalities=4, widths=(64, 128, 256), deep_width=512):
        super().__init__()
        self.n_modalities = n_modalities
        self.nets = nn.ModuleList(PatchDiscriminator(widths, deep_width) for _ in range(n_modalities))

    def discriminate(self, image, modality_index: int):
        """Score map for a B x 1 x H x W image of modality ``modality_index`` (0-based)."""
        if not 0 <= modality_index < self.n_modalities:
            raise IndexError(f"modality index {modality_index} out of range for {self.n_modalities} modalities")
        if image.dim() != 4 or image.shape[1] != 1:
            raise ValueError(f"expected B x 1 x H x W image, got {tuple(image.shape)}")
        return self.nets[modality_index](image)

    def forward(self, images, modalities):
        """Score maps for the listed modalities of a B x M x H x W stack."""
        return {i: self.discriminate(images[:, i:i + 1], i) for i in modalities}
