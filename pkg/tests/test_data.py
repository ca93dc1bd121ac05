import numpy as np
import pytest

from lisalab.data import (
    DatasetDescriptor,
    batch_iterator,
    ingest_text,
    make_dataset,
)
from lisalab.errors import ConfigError, DataError


class TestSynthetic:
    def test_copy_targets_are_shifted_input(self):
        ds = make_dataset(
            DatasetDescriptor("synthetic_copy", vocab_size=16, seq_len=8,
                              num_samples=10, seed=0)
        )
        assert np.array_equal(ds.targets[:, 1:], ds.inputs[:, :-1])
        assert np.array_equal(ds.targets[:, 0], ds.inputs[:, 0])

    def test_modsum_targets(self):
        ds = make_dataset(
            DatasetDescriptor("synthetic_modsum", vocab_size=7, seq_len=6,
                              num_samples=4, seed=1)
        )
        shifted = np.zeros_like(ds.inputs)
        shifted[:, 1:] = ds.inputs[:, :-1]
        assert np.array_equal(ds.targets, (ds.inputs + shifted) % 7)

    def test_deterministic_generation(self):
        desc = DatasetDescriptor("synthetic_copy", vocab_size=16, seq_len=8,
                                 num_samples=10, seed=3)
        a, b = make_dataset(desc), make_dataset(desc)
        assert np.array_equal(a.inputs, b.inputs)

    def test_tokens_within_vocab(self):
        ds = make_dataset(
            DatasetDescriptor("synthetic_copy", vocab_size=5, seq_len=64,
                              num_samples=50, seed=0)
        )
        assert ds.inputs.min() >= 0 and ds.inputs.max() < 5

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            DatasetDescriptor("synthetic_noise")


class TestTextIngestion:
    def test_ab_file_vocab_two(self, tmp_path):
        f = tmp_path / "ab.txt"
        f.write_text("ab" * 200)
        ds = ingest_text(f, "char", seq_len=16)
        assert ds.vocab_size == 2
        assert ds.vocab == ["a", "b"]

    def test_same_file_identical_streams(self, tmp_path):
        f = tmp_path / "t.txt"
        f.write_text("hello world " * 50)
        a = ingest_text(f, "char", seq_len=8)
        b = ingest_text(f, "char", seq_len=8)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.val_inputs, b.val_inputs)

    def test_split_partitions_chunks(self, tmp_path):
        f = tmp_path / "t.txt"
        f.write_text("abcdefgh" * 40)
        ds = ingest_text(f, "char", seq_len=8, train_fraction=0.75)
        n_total = (len("abcdefgh" * 40) - 1) // 8
        assert ds.inputs.shape[0] + ds.val_inputs.shape[0] == n_total
        assert ds.inputs.shape[0] == int(np.ceil(0.75 * n_total))

    def test_byte_policy(self, tmp_path):
        f = tmp_path / "t.bin"
        f.write_bytes(bytes(range(250)) * 3)
        ds = ingest_text(f, "byte", seq_len=16)
        assert ds.vocab_size == 256

    def test_targets_are_next_tokens(self, tmp_path):
        f = tmp_path / "t.txt"
        f.write_text("abcdefghij" * 10)
        ds = ingest_text(f, "char", seq_len=5, train_fraction=1.0)
        assert np.array_equal(ds.inputs[0, 1:], ds.targets[0, :-1])

    def test_empty_file_rejected(self, tmp_path):
        f = tmp_path / "empty.txt"
        f.write_text("")
        with pytest.raises(DataError):
            ingest_text(f, "char", seq_len=8)

    def test_too_short_file_rejected(self, tmp_path):
        f = tmp_path / "short.txt"
        f.write_text("ab")
        with pytest.raises(DataError):
            ingest_text(f, "char", seq_len=64)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            ingest_text(tmp_path / "nope.txt", "char", seq_len=8)


class TestBatching:
    def test_cycles_in_order(self):
        ds = make_dataset(
            DatasetDescriptor("synthetic_copy", vocab_size=8, seq_len=4,
                              num_samples=6, seed=0)
        )
        batches = list(batch_iterator(ds, batch_size=4, steps=3))
        assert len(batches) == 3
        assert np.array_equal(batches[0][0], ds.inputs[[0, 1, 2, 3]])
        assert np.array_equal(batches[1][0], ds.inputs[[4, 5, 0, 1]])
        assert np.array_equal(batches[2][0], ds.inputs[[2, 3, 4, 5]])
