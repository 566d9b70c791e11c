"""Feature unification across a varying set of available modalities.

Per scale, the dynamic unifier combines a hard branch (element-wise max over
available modalities) with a soft branch (sum of features gated by a
per-modality spatial attention map).  Missing modalities never enter either
branch.  Max-only and mean/variance (HeMIS-style) unifiers are provided for
ablations.
"""
from __future__ import annotations

import torch
from torch import nn

from .conditioning import AvailabilityCondition, InvalidConditionError

DFUM, MAX, HEMIS = "DFUM", "MAX", "HEMIS"
STRATEGIES = (DFUM, MAX, HEMIS)
KERNELS = (3, 5, 7)


def _as_stack(features):
    if isinstance(features, (list, tuple)):
        features = torch.stack(list(features), dim=1)
    if features.dim() != 5:
        raise ValueError(f"features must be B x M x C x H x W, got {tuple(features.shape)}")
    return features


def _check(features, ac):
    if features.shape[1] != len(ac):
        raise ValueError(f"{features.shape[1]} modality maps but condition has {len(ac)} flags")
    avail = ac.available
    if not avail:
        raise InvalidConditionError(f"condition {ac} has no available modality")
    return avail


def hard_integrate(features, ac: AvailabilityCondition):
    """Element-wise max over the available modalities."""
    features = _as_stack(features)
    avail = _check(features, ac)
    if len(avail) == 1:
        return features[:, avail[0]]
    return torch.amax(features[:, avail], dim=1)


def soft_integrate(features, gates, ac: AvailabilityCondition, normalize=False):
    """Sum of ``gate_i * F_i`` over available modalities.

    ``gates`` is B x M x 1 x H x W (or full channel width).  With
    ``normalize`` the gates are divided by their sum over available modalities.
    """
    features = _as_stack(features)
    gates = _as_stack(gates)
    avail = _check(features, ac)
    if (gates.shape[:2] != features.shape[:2] or gates.shape[-2:] != features.shape[-2:]
            or gates.shape[2] not in (1, features.shape[2])):
        raise ValueError(f"gate shape {tuple(gates.shape)} incompatible with features {tuple(features.shape)}")
    total = None
    for i in avail:
        term = gates[:, i] * features[:, i]
        total = term if total is None else total + term
    if normalize:
        denom = None
        for i in avail:
            denom = gates[:, i] if denom is None else denom + gates[:, i]
        total = total / denom
    return total


class AttentionBlock(nn.Module):
    """Multi-receptive-field spatial attention producing one logit map."""

    def __init__(self, channels, branch_channels=None, kernels=KERNELS):
        super().__init__()
        cb = branch_channels or max(4, channels // 4)
        self.branches = nn.ModuleList(
            nn.Sequential(nn.Conv2d(channels, cb, k, padding=k // 2), nn.LeakyReLU(0.2)) for k in kernels
        )
        self.reduce = nn.Conv2d(cb * len(kernels), 1, 1)

    def forward(self, x):
        return self.reduce(torch.cat([branch(x) for branch in self.branches], dim=1))


class FeatureUnifier(nn.Module):
    """Unify M feature maps of one scale under an availability condition."""

    def __init__(self, n_modalities, channels, strategy=DFUM, combine="mean",
                 soft_normalize=False, branch_channels=None):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {strategy!r}")
        if combine not in ("mean", "concat"):
            raise ValueError(f"unknown combine operator {combine!r}")
        self.n_modalities = n_modalities
        self.channels = channels
        self.strategy = strategy
        self.combine = combine
        self.soft_normalize = soft_normalize
        self.attention = None
        self.mix = None
        if strategy == DFUM:
            self.attention = nn.ModuleList(AttentionBlock(channels, branch_channels) for _ in range(n_modalities))
            if combine == "concat":
                self.mix = nn.Conv2d(2 * channels, channels, 1)
        elif strategy == HEMIS:
            self.mix = nn.Conv2d(2 * channels, channels, 1)

    def compute_attention(self, features, ac):
        """Sigmoid gate maps, B x M x 1 x H x W; exactly zero for missing modalities."""
        if self.strategy != DFUM:
            raise RuntimeError(f"attention is only defined for {DFUM}, not {self.strategy}")
        features = _as_stack(features)
        avail = _check(features, ac)
        b, m, _, h, w = features.shape
        gates = [None] * m
        for i in range(m):
            if i in avail:
                gates[i] = torch.sigmoid(self.attention[i](features[:, i]))
            else:
                gates[i] = features.new_zeros(b, 1, h, w)
        return torch.stack(gates, dim=1)

    def forward(self, features, ac):
        features = _as_stack(features)
        if features.shape[2] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {features.shape[2]}")
        if self.strategy == MAX:
            return hard_integrate(features, ac)
        if self.strategy == HEMIS:
            avail = _check(features, ac)
            sel = features[:, avail]
            mean = sel.mean(dim=1)
            var = sel.var(dim=1, unbiased=False) if len(avail) > 1 else torch.zeros_like(mean)
            return self.mix(torch.cat([mean, var], dim=1))
        hard = hard_integrate(features, ac)
        soft = soft_integrate(features, self.compute_attention(features, ac), ac, self.soft_normalize)
        if self.combine == "concat":
            return self.mix(torch.cat([hard, soft], dim=1))
        return 0.5 * (hard + soft)


class FusionModule(nn.Module):
    """One unifier per scale."""

    def __init__(self, n_modalities, widths, strategy=DFUM, **kwargs):
        super().__init__()
        self.strategy = strategy
        self.scales = nn.ModuleList(FeatureUnifier(n_modalities, w, strategy, **kwargs) for w in widths)

    def forward(self, pyramid, ac):
        if len(pyramid) != len(self.scales):
            raise ValueError(f"expected {len(self.scales)} scales, got {len(pyramid)}")
        return [unifier(feats, ac) for unifier, feats in zip(self.scales, pyramid)]


def unify(features, ac, unifier: FeatureUnifier):
    return unifier(features, ac)
