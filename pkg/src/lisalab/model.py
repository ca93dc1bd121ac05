"""A tiny decoder-only transformer with an explicit layer-group index space.

Layer groups are the freezing unit: index 0 is the embedding group (token +
positional tables), indices 1..num_blocks are whole transformer blocks
(attention projections, MLP, layer norms, biases), and index num_blocks+1 is
the LM head group (final norm + output projection).  Every trainable
parameter belongs to exactly one group; with tied embeddings the output
projection aliases the token table and is attributed to the embedding group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

INIT_STD = 0.02  # GPT-2 style init for embeddings and projections
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_seq_len: int
    model_dim: int
    num_heads: int
    num_blocks: int
    mlp_ratio: int = 4
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.vocab_size < 1 or self.max_seq_len < 1:
            raise ConfigError("vocab_size and max_seq_len must be positive")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.model_dim < 1 or self.num_heads < 1:
            raise ConfigError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def mlp_dim(self) -> int:
        return self.model_dim * self.mlp_ratio

    @property
    def num_layer_groups(self) -> int:
        return self.num_blocks + 2

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "num_blocks": self.num_blocks,
            "mlp_ratio": self.mlp_ratio,
            "tie_embeddings": self.tie_embeddings,
        }


class LayerGroup:
    """A named freezing unit holding a list of named parameter tensors."""

    def __init__(self, name: str, params: list[Tensor]):
        self.name = name
        self.params = params
        self.trainable = True


class LayeredModel:
    """Transformer parameters arranged into layer groups 0..num_blocks+1."""

    def __init__(self, cfg: ModelConfig, layers: list[LayerGroup]):
        self.cfg = cfg
        self.layers = layers
        self.adapters: dict[str, object] = {}  # target param name -> LoRAAdapter
        self._by_name = {p.name: p for g in layers for p in g.params}

    def param(self, name: str) -> Tensor:
        return self._by_name[name]

    def named_params(self):
        for g in self.layers:
            for p in g.params:
                yield p

    def register_param(self, group_index: int, p: Tensor) -> None:
        if p.name in self._by_name:
            raise ConfigError(f"duplicate parameter name {p.name!r}")
        self.layers[group_index].params.append(p)
        self._by_name[p.name] = p

    def drop_param(self, name: str) -> None:
        p = self._by_name.pop(name)
        for g in self.layers:
            if p in g.params:
                g.params.remove(p)
                return

    def count_params(self) -> int:
        return sum(p.numel for p in self.named_params())

    def group_index_of(self, param_name: str) -> int:
        for i, g in enumerate(self.layers):
            if any(p.name == param_name for p in g.params):
                return i
        raise KeyError(param_name)


def build_model(cfg: ModelConfig, seed: int) -> LayeredModel:
    """Deterministically initialize a model from a seed.

    normal(0, 0.02) for embeddings and projections, zeros for biases, ones
    for norm gains; parameters are drawn in a fixed order so equal seeds give
    bitwise-equal models.
    """
    rng = np.random.default_rng(seed)
    d, dm = cfg.model_dim, cfg.mlp_dim

    def w(shape, name):
        return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True, name=name)

    def zeros(shape, name):
        return Tensor(np.zeros(shape), requires_grad=True, name=name)

    def ones(shape, name):
        return Tensor(np.ones(shape), requires_grad=True, name=name)

    wte = w((cfg.vocab_size, d), "embed.wte")
    wpe = w((cfg.max_seq_len, d), "embed.wpe")
    groups = [LayerGroup("embed", [wte, wpe])]

    for i in range(cfg.num_blocks):
        pre = f"block{i}"
        params = [
            ones((d,), f"{pre}.ln1.gain"),
            zeros((d,), f"{pre}.ln1.bias"),
            w((d, d), f"{pre}.attn.wq"),
            zeros((d,), f"{pre}.attn.bq"),
            w((d, d), f"{pre}.attn.wk"),
            zeros((d,), f"{pre}.attn.bk"),
            w((d, d), f"{pre}.attn.wv"),
            zeros((d,), f"{pre}.attn.bv"),
            w((d, d), f"{pre}.attn.wo"),
            zeros((d,), f"{pre}.attn.bo"),
            ones((d,), f"{pre}.ln2.gain"),
            zeros((d,), f"{pre}.ln2.bias"),
            w((d, dm), f"{pre}.mlp.w1"),
            zeros((dm,), f"{pre}.mlp.b1"),
            w((dm, d), f"{pre}.mlp.w2"),
            zeros((d,), f"{pre}.mlp.b2"),
        ]
        groups.append(LayerGroup(f"block{i}", params))

    head_params = [
        ones((d,), "head.ln_f.gain"),
        zeros((d,), "head.ln_f.bias"),
    ]
    if not cfg.tie_embeddings:
        head_params.append(w((cfg.vocab_size, d), "head.w_out"))
    groups.append(LayerGroup("head", head_params))
    return LayeredModel(cfg, groups)


def _linear(model: LayeredModel, x: Tensor, w_name: str, b_name: str | None) -> Tensor:
    """x @ W (+ bias), routing through a low-rank adapter when one is attached."""
    w = model.param(w_name)
    y = T.matmul(x, w)
    ad = model.adapters.get(w_name)
    if ad is not None:
        y = T.add(y, T.scale(T.matmul(T.matmul(x, ad.a), ad.b), ad.scaling))
    if b_name is not None:
        y = T.add(y, model.param(b_name))
    return y


def forward(model: LayeredModel, tokens: np.ndarray) -> Tensor:
    """Causal forward pass; returns logits of shape (batch, seq, vocab)."""
    cfg = model.cfg
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError("tokens must be a (batch, seq) integer array")
    bsz, seq = tokens.shape
    if seq > cfg.max_seq_len:
        raise ShapeError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise IndexError("token index out of vocabulary range")

    tok = T.embedding_lookup(model.param("embed.wte"), tokens)
    pos = T.embedding_lookup(model.param("embed.wpe"), np.arange(seq))
    x = T.add(tok, pos)

    nh, hd = cfg.num_heads, cfg.head_dim
    causal = np.tril(np.ones((seq, seq), dtype=bool))
    inv_sqrt_hd = 1.0 / np.sqrt(hd)

    for i in range(cfg.num_blocks):
        pre = f"block{i}"
        a = T.layer_norm(
            x, model.param(f"{pre}.ln1.gain"), model.param(f"{pre}.ln1.bias"), LN_EPS
        )

        def heads(t):
            return T.transpose(T.reshape(t, (bsz, seq, nh, hd)), (0, 2, 1, 3))

        q = heads(_linear(model, a, f"{pre}.attn.wq", f"{pre}.attn.bq"))
        k = heads(_linear(model, a, f"{pre}.attn.wk", f"{pre}.attn.bk"))
        v = heads(_linear(model, a, f"{pre}.attn.wv", f"{pre}.attn.bv"))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), inv_sqrt_hd)
        probs = T.softmax(scores, mask=causal)
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (bsz, seq, cfg.model_dim))
        x = T.add(x, _linear(model, ctx, f"{pre}.attn.wo", f"{pre}.attn.bo"))

        m = T.layer_norm(
            x, model.param(f"{pre}.ln2.gain"), model.param(f"{pre}.ln2.bias"), LN_EPS
        )
        h = T.gelu(_linear(model, m, f"{pre}.mlp.w1", f"{pre}.mlp.b1"))
        x = T.add(x, _linear(model, h, f"{pre}.mlp.w2", f"{pre}.mlp.b2"))

    x = T.layer_norm(
        x, model.param("head.ln_f.gain"), model.param("head.ln_f.bias"), LN_EPS
    )
    out_table = "embed.wte" if cfg.tie_embeddings else "head.w_out"
    w = model.param(out_table)
    logits = T.matmul(x, T.matrix_t(w))
    ad = model.adapters.get(out_table) if not cfg.tie_embeddings else None
    if ad is not None:
        logits = T.add(logits, T.scale(T.matmul(T.matmul(x, ad.a), ad.b), ad.scaling))
    return logits


def loss_on_batch(model: LayeredModel, tokens: np.ndarray, targets: np.ndarray) -> Tensor:
    return T.cross_entropy(forward(model, tokens), targets)


def layer_params(model: LayeredModel, index: int) -> list[Tensor]:
    """Parameters attributed to layer group `index` (0..num_blocks+1)."""
    if not 0 <= index < len(model.layers):
        raise IndexError(
            f"layer index {index} out of range [0, {len(model.layers)})"
        )
    return list(model.layers[index].params)
