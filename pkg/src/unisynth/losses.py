"""Masked synthesis / reconstruction / least-squares adversarial losses."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .conditioning import AvailabilityCondition


@dataclass(frozen=True)
class LossWeights:
    synthesis: float = 100.0
    reconstruction: float = 30.0
    adversarial: float = 1.0

    def __post_init__(self):
        if min(self.synthesis, self.reconstruction, self.adversarial) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossRecord:
    l_syn: float
    l_rec: float
    l_adv: float
    l_gen: float
    l_dis: float

    def as_dict(self):
        return {"l_syn": self.l_syn, "l_rec": self.l_rec, "l_adv": self.l_adv,
                "l_gen": self.l_gen, "l_dis": self.l_dis}


def _reduce(x, reduction):
    if reduction == "mean":
        return x.mean()
    if reduction == "sum":
        return x.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def _flags(ac, m):
    flags = ac.flags if isinstance(ac, AvailabilityCondition) else tuple(int(a) for a in ac)
    if len(flags) != m:
        raise ValueError(f"condition has {len(flags)} flags for {m} modalities")
    return flags


def _masked_l1(outputs, targets, ac, want, reduction):
    if outputs.shape != targets.shape:
        raise ValueError(f"output shape {tuple(outputs.shape)} != target shape {tuple(targets.shape)}")
    total = outputs.new_zeros(())
    for i, flag in enumerate(_flags(ac, outputs.shape[1])):
        if flag == want:
            total = total + _reduce((outputs[:, i] - targets[:, i]).abs(), reduction)
    return total


def synthesis_loss(outputs, targets, ac, reduction="mean"):
    """L1 over missing modalities: sum_i (1 - ac_i) * |Y_hat_i - Y_i|."""
    return _masked_l1(outputs, targets, ac, 0, reduction)


def reconstruction_loss(outputs, targets, ac, reduction="mean"):
    """L1 over available modalities."""
    return _masked_l1(outputs, targets, ac, 1, reduction)


def _paired(fake_scores, real_scores, ac):
    m = len(ac)
    flags = _flags(ac, m)
    pairs = []
    for i in range(m):
        if flags[i]:
            continue
        fake, real = fake_scores[i], real_scores[i]
        if fake.shape != real.shape:
            raise ValueError(f"score maps for modality {i} differ in shape: {tuple(fake.shape)} vs {tuple(real.shape)}")
        pairs.append((fake, real))
    return pairs


def generator_adversarial_loss(fake_scores, real_scores, ac, reduction="mean"):
    """sum over missing i of L2(D_i(fake) - 1) + L2(D_i(real)).

    ``fake_scores``/``real_scores`` map modality index to score maps (dict or
    sequence).  The real-image term carries no generator gradient but is kept
    in the reported value.
    """
    total = None
    for fake, real in _paired(fake_scores, real_scores, ac):
        term = _reduce((fake - 1) ** 2, reduction) + _reduce(real ** 2, reduction)
        total = term if total is None else total + term
    return total if total is not None else torch.zeros(())


def discriminator_loss(fake_scores, real_scores, ac, reduction="mean"):
    """sum over missing i of L2(D_i(fake)) + L2(D_i(real) - 1)."""
    total = None
    for fake, real in _paired(fake_scores, real_scores, ac):
        term = _reduce(fake ** 2, reduction) + _reduce((real - 1) ** 2, reduction)
        total = term if total is None else total + term
    return total if total is not None else torch.zeros(())


def total_generator_loss(l_syn, l_rec, l_adv, weights: LossWeights = LossWeights()):
    return weights.synthesis * l_syn + weights.reconstruction * l_rec + weights.adversarial * l_adv
