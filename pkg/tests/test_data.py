import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcollab.data import (
    DATA_DIR_ENV,
    limit_dataset,
    load_split,
    maybe_decompress,
    normalize,
    parse_idx_images,
    parse_idx_labels,
    partition_iid,
    resolve_data_dir,
)
from fedcollab.errors import FormatError, InputError

from idx_oracle import images_bytes, labels_bytes


class TestImages:
    def test_empty_file(self):
        assert parse_idx_images(images_bytes(np.zeros((0, 784)))).shape == (0, 784)

    def test_labels_magic_rejected(self):
        with pytest.raises(FormatError):
            parse_idx_images(images_bytes(np.zeros((1, 784)), magic=0x00000801))

    def test_two_image_roundtrip(self):
        x = np.random.default_rng(0).integers(0, 256, size=(2, 784), dtype=np.uint8)
        np.testing.assert_array_equal(parse_idx_images(images_bytes(x)), x)

    def test_truncated_and_padded(self):
        raw = images_bytes(np.ones((3, 784)))
        with pytest.raises(FormatError):
            parse_idx_images(raw[:-1])
        with pytest.raises(FormatError):
            parse_idx_images(raw + b"\x00")

    def test_wrong_geometry(self):
        raw = struct.pack(">IIII", 0x803, 1, 14, 56) + bytes(784)
        with pytest.raises(FormatError):
            parse_idx_images(raw)

    def test_every_proper_prefix_rejected(self):
        raw = images_bytes(np.arange(784).reshape(1, 784) % 256)
        for cut in list(range(0, 20)) + [100, 799]:
            with pytest.raises(FormatError):
                parse_idx_images(raw[:cut])


class TestLabels:
    def test_empty(self):
        assert parse_idx_labels(labels_bytes([])).shape == (0,)

    def test_direct_read(self):
        raw = bytes.fromhex("00000801 00000003 07 02 09".replace(" ", ""))
        assert parse_idx_labels(raw).tolist() == [7, 2, 9]

    def test_non_digit_label(self):
        with pytest.raises(FormatError):
            parse_idx_labels(labels_bytes([1, 10]))

    def test_truncated(self):
        with pytest.raises(FormatError):
            parse_idx_labels(labels_bytes([1, 2, 3])[:-1])
        with pytest.raises(FormatError):
            parse_idx_labels(b"\x00\x00\x08")

    @given(st.lists(st.integers(0, 9), max_size=50))
    def test_roundtrip(self, labels):
        assert parse_idx_labels(labels_bytes(labels)).tolist() == labels

    @given(st.binary(max_size=40))
    def test_arbitrary_bytes_never_crash(self, raw):
        try:
            parse_idx_labels(raw)
        except FormatError:
            pass


def test_gzip_detected_by_prefix():
    raw = labels_bytes([3, 1])
    assert maybe_decompress(gzip.compress(raw)) == raw
    assert maybe_decompress(raw) == raw


def test_normalize():
    ds = normalize(np.array([[0, 255, 128]], dtype=np.uint8), np.array([4]))
    np.testing.assert_allclose(ds.images[0], [0.0, 1.0, 128 / 255])
    assert ds.images[0, 2] == pytest.approx(0.50196, abs=1e-5)


def test_load_split_plain_and_gzip(tiny_mnist_dir):
    train = load_split(tiny_mnist_dir, "train")
    assert train.images.shape == (120, 784)
    assert 0.0 <= train.images.min() and train.images.max() <= 1.0
    gz = tiny_mnist_dir / "gz"
    gz.mkdir()
    for f in tiny_mnist_dir.glob("t10k-*"):
        (gz / (f.name + ".gz")).write_bytes(gzip.compress(f.read_bytes()))
    np.testing.assert_array_equal(load_split(gz, "test").images, load_split(tiny_mnist_dir, "test").images)


def test_env_var_overrides_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    assert resolve_data_dir("/somewhere/else") == tmp_path
    monkeypatch.delenv(DATA_DIR_ENV)
    assert str(resolve_data_dir("/somewhere/else")) == "/somewhere/else"


class TestPartition:
    def test_single_shard(self):
        (shard,) = partition_iid(50, 1, seed=0)
        assert sorted(shard.indices.tolist()) == list(range(50))

    def test_full_mnist_scale_even_split(self):
        assert [len(s) for s in partition_iid(32000, 10, seed=0)] == [3200] * 10

    def test_too_many_workers(self):
        with pytest.raises(InputError):
            partition_iid(3, 4, seed=0)

    @settings(max_examples=100)
    @given(st.integers(1, 500), st.data())
    def test_is_a_set_partition(self, n, data):
        k = data.draw(st.integers(1, n))
        seed = data.draw(st.integers(0, 2**32))
        shards = partition_iid(n, k, seed)
        sets = [set(s.indices.tolist()) for s in shards]
        assert set().union(*sets) == set(range(n))
        assert sum(len(s) for s in sets) == n
        sizes = [len(s) for s in sets]
        assert max(sizes) - min(sizes) <= 1

    def test_same_seed_same_partition(self):
        a, b = partition_iid(100, 7, 3), partition_iid(100, 7, 3)
        assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))
        c = partition_iid(100, 7, 4)
        assert not all(np.array_equal(x.indices, y.indices) for x, y in zip(a, c))


def test_limit_dataset_is_seeded_subset():
    ds = normalize(np.arange(20 * 784).reshape(20, 784) % 256, np.arange(20) % 10)
    a, b = limit_dataset(ds, 8, seed=1), limit_dataset(ds, 8, seed=1)
    assert len(a) == 8
    np.testing.assert_array_equal(a.images, b.images)
    assert limit_dataset(ds, None, seed=1) is ds
