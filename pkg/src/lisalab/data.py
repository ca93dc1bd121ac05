"""Datasets: deterministic synthetic token tasks and character/byte text.

synthetic_copy   : target[t] = input[t-1] (target[0] = input[0]); the model
                   learns to emit the input stream delayed by one position.
synthetic_modsum : target[t] = (input[t] + input[t-1]) mod vocab.
text_file        : char- or byte-level language modelling on a local file,
                   chunked to the configured length with a recorded
                   train/validation split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

KINDS = ("synthetic_copy", "synthetic_modsum", "text_file")
VOCAB_POLICIES = ("char", "byte")


@dataclass(frozen=True)
class DatasetDescriptor:
    kind: str
    vocab_size: int = 64
    seq_len: int = 32
    num_samples: int = 1024
    seed: int = 0
    path: str | None = None
    vocab_policy: str = "char"
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.seq_len < 1 or self.num_samples < 1:
            raise ConfigError("seq_len and num_samples must be positive")
        if self.kind != "text_file" and self.vocab_size < 2:
            raise ConfigError("synthetic tasks need vocab_size >= 2")
        if self.kind == "text_file":
            if self.path is None:
                raise ConfigError("text_file dataset needs a path")
            if self.vocab_policy not in VOCAB_POLICIES:
                raise ConfigError(f"unknown vocab_policy {self.vocab_policy!r}")
            if not 0.0 < self.train_fraction <= 1.0:
                raise ConfigError("train_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "seq_len": self.seq_len,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "path": self.path,
            "vocab_policy": self.vocab_policy,
            "train_fraction": self.train_fraction,
        }


@dataclass
class TokenDataset:
    inputs: np.ndarray   # (N, S) int64
    targets: np.ndarray  # (N, S) int64
    vocab_size: int
    val_inputs: np.ndarray | None = None
    val_targets: np.ndarray | None = None
    vocab: list[str] | None = None  # text datasets: index -> symbol


def _copy_targets(inputs: np.ndarray) -> np.ndarray:
    targets = np.empty_like(inputs)
    targets[:, 0] = inputs[:, 0]
    targets[:, 1:] = inputs[:, :-1]
    return targets


def _modsum_targets(inputs: np.ndarray, vocab: int) -> np.ndarray:
    shifted = np.zeros_like(inputs)
    shifted[:, 1:] = inputs[:, :-1]
    return (inputs + shifted) % vocab


def make_dataset(desc: DatasetDescriptor) -> TokenDataset:
    if desc.kind == "text_file":
        return ingest_text(
            desc.path,
            desc.vocab_policy,
            seq_len=desc.seq_len,
            train_fraction=desc.train_fraction,
        )
    rng = np.random.default_rng(desc.seed)
    inputs = rng.integers(0, desc.vocab_size, size=(desc.num_samples, desc.seq_len))
    inputs = inputs.astype(np.int64)
    if desc.kind == "synthetic_copy":
        targets = _copy_targets(inputs)
    else:
        targets = _modsum_targets(inputs, desc.vocab_size)
    return TokenDataset(inputs, targets, desc.vocab_size)


def ingest_text(
    path, vocab_policy: str = "char", *, seq_len: int = 128, train_fraction: float = 0.9
) -> TokenDataset:
    """Tokenize a text file and chunk it for next-token training.

    The vocabulary is built deterministically (sorted unique characters, or
    all 256 byte values).  Chunks of seq_len+1 symbols yield (input, target)
    pairs by shifting; the first ceil(train_fraction * M) chunks form the
    training split and the remainder the validation split, in file order.
    """
    if vocab_policy not in VOCAB_POLICIES:
        raise ConfigError(f"unknown vocab_policy {vocab_policy!r}")
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read text file {path}: {exc}") from exc
    if not raw:
        raise DataError(f"text file {path} is empty")
    if vocab_policy == "byte":
        ids = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
        vocab_size = 256
        vocab = [f"0x{i:02x}" for i in range(256)]
    else:
        text = raw.decode("utf-8")
        symbols = sorted(set(text))
        lookup = {c: i for i, c in enumerate(symbols)}
        ids = np.array([lookup[c] for c in text], dtype=np.int64)
        vocab_size = len(symbols)
        vocab = symbols
    n_chunks = (len(ids) - 1) // seq_len
    if n_chunks < 1:
        raise DataError(
            f"text file {path} too short for seq_len {seq_len} "
            f"({len(ids)} symbols)"
        )
    usable = ids[: n_chunks * seq_len + 1]
    inputs = usable[:-1].reshape(n_chunks, seq_len)
    targets = usable[1:].reshape(n_chunks, seq_len)
    n_train = max(1, int(np.ceil(train_fraction * n_chunks)))
    return TokenDataset(
        inputs[:n_train].copy(),
        targets[:n_train].copy(),
        vocab_size,
        val_inputs=inputs[n_train:].copy(),
        val_targets=targets[n_train:].copy(),
        vocab=vocab,
    )


def batch_iterator(dataset: TokenDataset, batch_size: int, steps: int):
    """Yield `steps` (inputs, targets) batches, cycling the sample set in order."""
    n = dataset.inputs.shape[0]
    pos = 0
    for _ in range(steps):
        idx = (pos + np.arange(batch_size)) % n
        yield dataset.inputs[idx], dataset.targets[idx]
        pos = (pos + batch_size) % n
