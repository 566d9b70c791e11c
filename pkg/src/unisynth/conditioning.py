"""Availability conditions, curriculum sampling and zero-imputation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch

UNIFORM = "uniform"


class InvalidConditionError(ValueError):
    pass


@dataclass(frozen=True)
class AvailabilityCondition:
    """Binary availability flags, one per modality (1 = available)."""

    flags: tuple[int, ...]

    def __post_init__(self):
        flags = tuple(int(f) for f in self.flags)
        if len(flags) < 2:
            raise InvalidConditionError("need at least two modalities")
        if any(f not in (0, 1) for f in flags):
            raise InvalidConditionError(f"flags must be 0/1, got {self.flags}")
        object.__setattr__(self, "flags", flags)

    @classmethod
    def parse(cls, text: str) -> "AvailabilityCondition":
        text = text.strip()
        if not text or any(c not in "01" for c in text):
            raise InvalidConditionError(f"bad condition string {text!r}")
        return cls(tuple(int(c) for c in text))

    def __str__(self):
        return "".join(str(f) for f in self.flags)

    def __len__(self):
        return len(self.flags)

    @property
    def available(self) -> list[int]:
        return [i for i, f in enumerate(self.flags) if f]

    @property
    def missing(self) -> list[int]:
        return [i for i, f in enumerate(self.flags) if not f]

    @property
    def n_missing(self) -> int:
        return len(self.flags) - sum(self.flags)

    def check_input(self):
        if not any(self.flags):
            raise InvalidConditionError(f"condition {self} has no available modality")

    def check_training(self):
        self.check_input()
        if all(self.flags):
            raise InvalidConditionError(f"condition {self} has no missing modality")

    def as_tensor(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.tensor(self.flags, dtype=dtype, device=device)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Epoch counts for the easy / moderate / hard phases."""

    phase_lengths: tuple[int, int, int] = (10, 10, 10)

    def __post_init__(self):
        lengths = tuple(int(n) for n in self.phase_lengths)
        if len(lengths) != 3 or any(n < 0 for n in lengths):
            raise ValueError(f"phase lengths must be three non-negative ints, got {self.phase_lengths}")
        object.__setattr__(self, "phase_lengths", lengths)


def curriculum_missing_count(epoch: int, schedule: CurriculumSchedule, n_modalities: int):
    """Missing-count rule for a 0-based epoch: an int k, or ``UNIFORM``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if n_modalities < 2:
        raise ValueError("need at least two modalities")
    boundary = 0
    for k, length in enumerate(schedule.phase_lengths, start=1):
        boundary += length
        if epoch < boundary:
            return min(k, n_modalities - 1)
    return UNIFORM


def sample_condition(rng: np.random.Generator, rule, n_modalities: int,
                     uniform_over: str = "counts") -> AvailabilityCondition:
    """Draw a training condition under a missing-count rule.

    ``uniform_over`` selects how the uniform rule is resolved: ``"counts"``
    draws the missing count first and then a subset, ``"subsets"`` draws
    uniformly among all 2**M - 2 valid conditions.
    """
    m = n_modalities
    if rule == UNIFORM:
        if uniform_over == "counts":
            k = int(rng.integers(1, m))
        elif uniform_over == "subsets":
            configs = all_conditions(m)
            return configs[int(rng.integers(len(configs)))]
        else:
            raise ValueError(f"unknown uniform_over {uniform_over!r}")
    else:
        k = int(rule)
        if not 1 <= k <= m - 1:
            raise InvalidConditionError(f"missing count {k} outside 1..{m - 1}")
    missing = rng.choice(m, size=k, replace=False)
    flags = np.ones(m, dtype=int)
    flags[missing] = 0
    return AvailabilityCondition(tuple(flags.tolist()))


def all_conditions(n_modalities: int) -> list[AvailabilityCondition]:
    """Every condition with >= 1 available and >= 1 missing modality.

    Ordered by number of available modalities, then by combinations taken
    from the last modality backwards (the layout of the usual result tables).
    """
    m = n_modalities
    out = []
    for n_avail in range(1, m):
        for combo in itertools.combinations(range(m), n_avail):
            flags = [0] * m
            for p in combo:
                flags[m - 1 - p] = 1
            out.append(AvailabilityCondition(tuple(flags)))
    return out


def zero_impute(batch: torch.Tensor, ac: AvailabilityCondition) -> torch.Tensor:
    """Zero the channels of missing modalities; ``batch`` is B x M x H x W."""
    ac.check_input()
    if batch.dim() != 4 or batch.shape[1] != len(ac):
        raise ValueError(f"expected B x {len(ac)} x H x W, got {tuple(batch.shape)}")
    out = batch.clone()
    for i in ac.missing:
        out[:, i] = 0
    return out
