"""Periodic layer-freezing schedules.

Every `period` optimizer steps a fresh set of active layer groups is drawn.
Two modes:

  * fixed_gamma (default; the variant used for real training runs): exactly
    `gamma` middle layers are drawn uniformly without replacement, on top of
    the always-active set (embedding and head by default).
  * bernoulli: one uniform draw per layer against the probability vector
    {1.0, gamma/N, ..., gamma/N, 1.0}; a layer freezes when its draw exceeds
    its probability, so gamma is the expected number of unfrozen middle
    layers.

Mask randomness is counter-based: the mask for period i is a pure function
of (rng_seed, i), so any period can be resampled independently of training
order and identical mask sequences can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class FreezeSchedule:
    num_middle: int                 # count of middle (block) layers
    period: int                     # K: steps between mask resamplings
    total_steps: int                # T
    rng_seed: int
    mode: str = "fixed_gamma"       # "fixed_gamma" | "bernoulli"
    gamma: int = 2
    always_active: frozenset[int] = field(default=None)  # type: ignore[assignment]
    moment_policy: str = "discard"

    def __post_init__(self):
        if self.mode not in ("fixed_gamma", "bernoulli"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.num_middle < 1:
            raise ConfigError("num_middle must be >= 1")
        if not 0 <= self.gamma <= self.num_middle:
            raise ConfigError(
                f"gamma must lie in [0, {self.num_middle}], got {self.gamma}"
            )
        if self.period < 1 or self.total_steps < 1:
            raise ConfigError("period and total_steps must be >= 1")
        if self.always_active is None:
            object.__setattr__(
                self, "always_active", frozenset({0, self.num_middle + 1})
            )
        else:
            object.__setattr__(self, "always_active", frozenset(self.always_active))
        bad = [i for i in self.always_active if not 0 <= i <= self.num_middle + 1]
        if bad:
            raise ConfigError(f"always_active indices out of range: {bad}")

    @property
    def num_periods(self) -> int:
        return ceil(self.total_steps / self.period)

    def probabilities(self) -> np.ndarray:
        """The per-layer activation probability vector (length num_middle+2)."""
        p = np.full(self.num_middle + 2, self.gamma / self.num_middle)
        p[0] = 1.0
        p[-1] = 1.0
        return p

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "gamma": self.gamma,
            "period": self.period,
            "total_steps": self.total_steps,
            "rng_seed": self.rng_seed,
            "always_active": sorted(self.always_active),
            "moment_policy": self.moment_policy,
        }


@dataclass(frozen=True)
class ActiveMask:
    period_index: int
    active: frozenset[int]

    def sorted(self) -> list[int]:
        return sorted(self.active)


def sample_mask(sched: FreezeSchedule, period_index: int) -> ActiveMask:
    """Draw the active-layer set for one period.

    Stateless: equal (rng_seed, period_index) always gives the same mask.
    """
    if not 0 <= period_index < sched.num_periods:
        raise ConfigError(
            f"period index {period_index} out of range [0, {sched.num_periods})"
        )
    rng = np.random.default_rng([sched.rng_seed, period_index])
    middle = np.arange(1, sched.num_middle + 1)
    if sched.mode == "fixed_gamma":
        chosen = rng.choice(middle, size=sched.gamma, replace=False)
        active = set(int(i) for i in chosen)
    else:
        p = sched.probabilities()
        u = rng.random(sched.num_middle + 2)
        active = {int(i) for i in range(sched.num_middle + 2) if u[i] <= p[i]}
    active |= sched.always_active
    return ActiveMask(period_index, frozenset(active))


class NormRatioProbabilities:
    """Per-layer sampling probabilities derived from recorded weight norms."""

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=np.float64)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return float(self.values[i])


def probabilities_from_norms(lora_norms, full_norms) -> NormRatioProbabilities:
    """Elementwise norm ratio, clipped into [0, 1].

    Ratios above 1 (typical for embedding/head layers) clip to 1.0 since the
    always-active layers are pinned to probability 1 anyway.
    """
    w_tilde = np.asarray(lora_norms, dtype=np.float64)
    w = np.asarray(full_norms, dtype=np.float64)
    if w_tilde.shape != w.shape:
        raise ConfigError(
            f"norm vectors differ in shape: {w_tilde.shape} vs {w.shape}"
        )
    if np.any(w <= 0):
        raise DomainError("full-parameter norms must be strictly positive")
    return NormRatioProbabilities(np.clip(w_tilde / w, 0.0, 1.0))
