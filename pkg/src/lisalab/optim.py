"""AdamW (decoupled weight decay) over layer groups with trainability masks.

Update per trainable element, matching the standard bias-corrected form:

    t <- t + 1
    m <- beta1*m + (1-beta1)*g
    v <- beta2*v + (1-beta2)*g^2
    mhat = m / (1 - beta1^t);  vhat = v / (1 - beta2^t)
    theta <- theta - lr*mhat/(sqrt(vhat)+eps) - lr*weight_decay*theta

The decay term uses the pre-update theta (fully decoupled from the moments).
Frozen groups are untouched: parameters, moment buffers, and step counters
all stay bitwise constant while a group is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

MOMENT_POLICIES = ("discard", "retain")


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    # Common practice: decay weight matrices but not norm gains/biases.
    decay_matrices_only: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "decay_matrices_only": self.decay_matrices_only,
        }


class _Slot:
    __slots__ = ("m", "v", "t")

    def __init__(self, shape):
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0


class AdamWState:
    """Per-parameter first/second moments plus a step counter, keyed by name."""

    def __init__(self):
        self.slots: dict[str, _Slot] = {}

    def slot(self, name: str, shape) -> _Slot:
        s = self.slots.get(name)
        if s is None:
            s = _Slot(shape)
            self.slots[name] = s
        return s

    def drop(self, name: str) -> None:
        self.slots.pop(name, None)

    def moment_bytes(self) -> int:
        return sum(2 * s.m.size * 8 for s in self.slots.values())

    def counter_bytes(self) -> int:
        return 8 * len(self.slots)


def state_bytes(state: AdamWState) -> int:
    """Bytes held by moment buffers (2 x elements x 8) plus step counters."""
    return state.moment_bytes() + state.counter_bytes()


def adamw_step(model, state: AdamWState, cfg: AdamWConfig) -> None:
    """Apply one AdamW update to every trainable parameter.

    `model` is anything exposing `.layers` (a list of LayerGroup).  Params in
    non-trainable groups, and params with requires_grad=False (e.g. LoRA base
    weights), are skipped entirely.
    """
    for group in model.layers:
        if not group.trainable:
            continue
        for p in group.params:
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise ContractError(
                    f"trainable parameter {p.name!r} has no gradient"
                )
            g = p.grad
            s = state.slot(p.name, p.shape)
            s.t += 1
            s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * g
            s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * (g * g)
            mhat = s.m / (1.0 - cfg.beta1 ** s.t)
            vhat = s.v / (1.0 - cfg.beta2 ** s.t)
            update = cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
            if cfg.weight_decay > 0.0 and (
                not cfg.decay_matrices_only or p.data.ndim >= 2
            ):
                update = update + cfg.lr * cfg.weight_decay * p.data
            p.data = p.data - update


def zero_grads(model) -> None:
    for group in model.layers:
        for p in group.params:
            p.grad = None


def set_trainable_mask(
    model,
    active: set[int],
    state: AdamWState | None = None,
    moment_policy: str = "discard",
) -> None:
    """Mark the groups in `active` trainable and freeze the rest.

    Under policy "discard", moment buffers of newly-frozen groups are dropped
    (they restart from zero on reactivation); under "retain" they persist
    untouched across frozen periods.
    """
    if moment_policy not in MOMENT_POLICIES:
        raise ConfigError(f"unknown moment_policy {moment_policy!r}")
    n = len(model.layers)
    bad = [i for i in active if not 0 <= i < n]
    if bad:
        raise ConfigError(f"active layer indices out of range: {bad}")
    for idx, group in enumerate(model.layers):
        now_active = idx in active
        if (
            moment_policy == "discard"
            and group.trainable
            and not now_active
            and state is not None
        ):
            for p in group.params:
                state.drop(p.name)
        group.trainable = now_active
