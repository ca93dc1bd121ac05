"""Low-rank adapters on linear projections, with exact merge-back.

An adapter on a base weight W (d_in x d_out, applied as x @ W) adds
(alpha/rank) * x @ A @ B with A: (d_in, rank) drawn normal(0, 0.02) and
B: (rank, d_out) zero, so attaching never changes model outputs.  While
attached, every base parameter is frozen (requires_grad=False) and only
adapter factors train.  Merging folds W <- W + (alpha/rank) * A @ B and
restores the plain model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import INIT_STD, LayeredModel
from .tensor import Tensor

# Per-block linear projections that receive adapters.
_BLOCK_TARGETS = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 4
    alpha: float | None = None  # defaults to rank, i.e. scaling factor 1
    include_head: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.rank))
        elif self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "alpha": self.alpha,
            "include_head": self.include_head,
        }


class LoRAAdapter:
    __slots__ = ("target", "a", "b", "rank", "scaling")

    def __init__(self, target: str, a: Tensor, b: Tensor, rank: int, scaling: float):
        self.target = target
        self.a = a
        self.b = b
        self.rank = rank
        self.scaling = scaling


def target_names(model: LayeredModel, cfg: LoRAConfig) -> list[str]:
    names = [
        f"block{i}.{t}" for i in range(model.cfg.num_blocks) for t in _BLOCK_TARGETS
    ]
    if cfg.include_head and not model.cfg.tie_embeddings:
        names.append("head.w_out")
    return names


def _in_out_dims(model: LayeredModel, name: str) -> tuple[int, int]:
    shape = model.param(name).shape
    if name == "head.w_out":
        # stored (vocab, dim) and applied transposed
        return shape[1], shape[0]
    return shape[0], shape[1]


def adapter_param_count(model: LayeredModel, cfg: LoRAConfig) -> int:
    return sum(
        cfg.rank * (d_in + d_out)
        for d_in, d_out in (
            _in_out_dims(model, n) for n in target_names(model, cfg)
        )
    )


def attach_adapters(model: LayeredModel, cfg: LoRAConfig, seed: int) -> LayeredModel:
    """Attach zero-initialized adapters in place and freeze the base weights."""
    if model.adapters:
        raise ConfigError("model already has adapters attached")
    targets = target_names(model, cfg)
    for name in targets:
        d_in, d_out = _in_out_dims(model, name)
        if cfg.rank > min(d_in, d_out):
            raise ConfigError(
                f"rank {cfg.rank} exceeds min dim {min(d_in, d_out)} of {name!r}"
            )
    rng = np.random.default_rng(seed)
    for name in targets:
        d_in, d_out = _in_out_dims(model, name)
        a = Tensor(
            rng.normal(0.0, INIT_STD, (d_in, cfg.rank)),
            requires_grad=True,
            name=f"lora.{name}.a",
        )
        b = Tensor(
            np.zeros((cfg.rank, d_out)), requires_grad=True, name=f"lora.{name}.b"
        )
        group_idx = model.group_index_of(name)
        model.register_param(group_idx, a)
        model.register_param(group_idx, b)
        model.adapters[name] = LoRAAdapter(name, a, b, cfg.rank, cfg.scaling)
    for p in model.named_params():
        if not p.name.startswith("lora."):
            p.requires_grad = False
    return model


def merge(model: LayeredModel) -> LayeredModel:
    """Fold adapters into their base weights and restore the plain model."""
    if not model.adapters:
        raise ConfigError("no adapters attached")
    for name, ad in list(model.adapters.items()):
        delta = ad.scaling * (ad.a.data @ ad.b.data)
        w = model.param(name)
        if name == "head.w_out":
            delta = delta.T
        w.data = w.data + delta
        model.drop_param(ad.a.name)
        model.drop_param(ad.b.name)
    model.adapters.clear()
    for p in model.named_params():
        p.requires_grad = True
    return model


def effective_weight(model: LayeredModel, name: str) -> np.ndarray:
    """The merged view W + scaling * A @ B of a (possibly adapted) weight."""
    w = model.param(name).data
    ad = model.adapters.get(name)
    if ad is None:
        return w
    delta = ad.scaling * (ad.a.data @ ad.b.data)
    if name == "head.w_out":
        delta = delta.T
    return w + delta
