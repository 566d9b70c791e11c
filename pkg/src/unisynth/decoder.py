"""Modality-specific decoding streams over the unified feature pyramid."""
from __future__ import annotations

import torch
from torch import nn

from .encoder import ConvBlock


class UpBlock(nn.Module):
    """Nearest-neighbour x2 upsampling, conv, then merge with the skip map."""

    def __init__(self, cin, cout, norm="instance"):
        super().__init__()
        self.up = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), ConvBlock(cin, cout, 1, norm))
        self.merge = ConvBlock(2 * cout, cout, 1, norm)

    def forward(self, x, skip):
        x = self.up(x)
        if x.shape[-2:] != skip.shape[-2:]:
            raise ValueError(f"upsampled map {tuple(x.shape)} does not match skip {tuple(skip.shape)}")
        return self.merge(torch.cat([x, skip], dim=1))


class MultiStreamDecoder(nn.Module):
    """M decoding streams; the deepest block is one module shared by all of them.

    ``output`` is ``"clamp"`` (outputs clamped to [0, ceiling]) or ``"linear"``.
    """

    def __init__(self, n_modalities=4, widths=(32, 64, 128, 256, 512), norm="instance",
                 output="clamp", ceiling=8.0):
        super().__init__()
        if output not in ("clamp", "linear"):
            raise ValueError(f"unknown output activation {output!r}")
        widths = tuple(int(w) for w in widths)
        self.n_modalities = n_modalities
        self.widths = widths
        self.output = output
        self.ceiling = float(ceiling)
        deep = widths[-1]
        self.shared = nn.Sequential(ConvBlock(deep, deep, 1, norm), ConvBlock(deep, deep, 1, norm))
        self.ups = nn.ModuleList(
            nn.ModuleList(UpBlock(widths[s + 1], widths[s], norm) for s in reversed(range(len(widths) - 1)))
            for _ in range(n_modalities)
        )
        self.heads = nn.ModuleList(nn.Conv2d(widths[0], 1, 1) for _ in range(n_modalities))

    def stream_blocks(self, modality):
        return [self.shared] + list(self.ups[modality]) + [self.heads[modality]]

    def _check(self, unified):
        if len(unified) != len(self.widths):
            raise ValueError(f"expected {len(self.widths)} unified scales, got {len(unified)}")
        b, _, h, w = unified[0].shape
        for s, (f, c) in enumerate(zip(unified, self.widths)):
            want = (b, c, h >> s, w >> s)
            if tuple(f.shape) != want:
                raise ValueError(f"unified scale {s + 1} has shape {tuple(f.shape)}, expected {want}")

    def forward(self, unified):
        self._check(unified)
        deep = self.shared(unified[-1])
        outs = []
        for i in range(self.n_modalities):
            x = deep
            for up, skip in zip(self.ups[i], reversed(unified[:-1])):
                x = up(x, skip)
            outs.append(self.heads[i](x))
        y = torch.cat(outs, dim=1)
        if self.output == "clamp":
            y = y.clamp(0.0, self.ceiling)
        return y
