import struct

import numpy as np
import pytest

from anchorattn.anchorfile import read_anchors, read_matrix_csv, write_anchors, write_anchors_csv
from anchorattn.data import (
    load_idx_dataset,
    make_synthetic_task,
    patchify,
    read_idx,
    three_cluster_keys,
    write_idx,
)
from anchorattn.errors import DataError, DimensionError


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


class TestIdx:
    def test_all_zero_image(self, tmp_path):
        path = tmp_path / "img.idx"
        path.write_bytes(idx_bytes(0x00000803, (1, 28, 28), [0] * 784))
        task = load_idx_dataset(path, patch=7)
        assert task.X.shape == (1, 16, 49)
        assert not task.X.any()

    def test_known_pixels(self, tmp_path):
        img = np.zeros((4, 4), dtype=np.uint8)
        img[0, 0], img[0, 3], img[2, 1], img[3, 3] = 255, 51, 102, 204
        path = tmp_path / "img.idx"
        path.write_bytes(idx_bytes(0x00000803, (1, 4, 4), img.ravel().tolist()))
        labels = tmp_path / "lab.idx"
        labels.write_bytes(idx_bytes(0x00000801, (1,), [2]))
        task = load_idx_dataset(path, labels, patch=2)
        # patches in row-major order, pixels row-major inside each patch
        expected = np.zeros((4, 4))
        expected[0, 0] = 1.0
        expected[1, 1] = 0.2
        expected[2, 1] = 0.4
        expected[3, 3] = 0.8
        assert np.array_equal(task.X[0], expected)
        assert task.labels.tolist() == [2] and task.classes == 3

    def test_roundtrip(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(5, 8, 12), dtype=np.uint8)
        labels = rng.integers(0, 10, size=5, dtype=np.uint8)
        write_idx(tmp_path / "i.idx", images)
        write_idx(tmp_path / "l.idx.gz", labels)
        assert np.array_equal(read_idx(tmp_path / "i.idx"), images)
        assert np.array_equal(read_idx(tmp_path / "l.idx.gz"), labels)
        task = load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx.gz", patch=4)
        assert np.array_equal(task.X, patchify(images / 255.0, 4))
        assert np.array_equal(task.labels, labels)

    def test_header_magic_bytes(self, tmp_path):
        write_idx(tmp_path / "i.idx", np.zeros((2, 3, 3), dtype=np.uint8))
        write_idx(tmp_path / "l.idx", np.zeros(2, dtype=np.uint8))
        assert (tmp_path / "i.idx").read_bytes()[:4] == bytes.fromhex("00000803")
        assert (tmp_path / "l.idx").read_bytes()[:4] == bytes.fromhex("00000801")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\x01\x00\x08\x01" + struct.pack(">I", 1) + b"\x00")
        with pytest.raises(DataError, match="offset 0") as info:
            read_idx(path)
        assert info.value.offset == 0

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(idx_bytes(0x00000803, (2, 4, 4), [0] * 20))
        with pytest.raises(DataError) as info:
            read_idx(path)
        assert info.value.offset == 16 + 20

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "h.idx"
        path.write_bytes(b"\x00\x00\x08\x03\x00\x00")
        with pytest.raises(DataError, match="offset 6"):
            read_idx(path)

    def test_label_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "i.idx", np.zeros((3, 4, 4), dtype=np.uint8))
        write_idx(tmp_path / "l.idx", np.zeros(2, dtype=np.uint8))
        with pytest.raises(DataError):
            load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx", patch=2)

    def test_patch_must_tile(self):
        with pytest.raises(DimensionError):
            patchify(np.zeros((1, 5, 5)), 2)


class TestSyntheticTask:
    def test_deterministic(self):
        a, b = make_synthetic_task(samples=90, seed=3), make_synthetic_task(samples=90, seed=3)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.X, make_synthetic_task(samples=90, seed=4).X)

    @pytest.mark.parametrize("samples,classes", [(2000, 3), (101, 4), (7, 2)])
    def test_balanced(self, samples, classes):
        counts = np.bincount(make_synthetic_task(samples=samples, classes=classes, tokens=8).labels, minlength=classes)
        assert counts.max() - counts.min() <= 1 and counts.sum() == samples

    def test_split_is_stratified(self):
        train, hold = make_synthetic_task(samples=600, tokens=8).split(0.2)
        assert len(train) + len(hold) == 600
        assert np.bincount(hold.labels).tolist() == [40, 40, 40]


def test_three_cluster_keys():
    keys, centres = three_cluster_keys(per_cluster=10, dim=4)
    assert keys.shape == (30, 4)
    for c in range(3):
        assert np.linalg.norm(keys[10 * c:10 * (c + 1)].mean(axis=0) - centres[c]) < 0.5


class TestAnchorFile:
    def test_roundtrip(self, tmp_path, rng):
        W = rng.standard_normal((5, 3))
        write_anchors(tmp_path / "a.bin", W)
        raw = (tmp_path / "a.bin").read_bytes()
        assert raw[:4] == b"ANCH" and struct.unpack("<II", raw[4:12]) == (5, 3) and len(raw) == 12 + 8 * 15
        assert np.array_equal(read_anchors(tmp_path / "a.bin"), W)
        write_anchors_csv(tmp_path / "a.csv", W)
        assert np.array_equal(read_matrix_csv(tmp_path / "a.csv"), W)

    def test_corrupt(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(DataError):
            read_anchors(tmp_path / "a.bin")
        (tmp_path / "b.bin").write_bytes(b"ANCH" + struct.pack("<II", 2, 2) + bytes(8))
        with pytest.raises(DataError):
            read_anchors(tmp_path / "b.bin")
