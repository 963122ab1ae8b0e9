import numpy as np
import pytest
from PIL import Image

from cycletrans.data import (
    DomainDataset,
    ImageTensor,
    denormalize_u8,
    load_dataset,
    normalize_u8,
    split_paired,
    unpaired_batch_iterator,
)
from cycletrans.exceptions import (
    BatchTooLarge,
    ChannelError,
    DatasetEmpty,
    DecodeError,
    PairingMismatch,
    ShapeError,
)


def _write_png(path, arr):
    Image.fromarray(arr).save(path)


def _make_dataset(n, size=8, domain="X", seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.uniform(-1, 1, (n, size, size, 1)).astype(np.float32)
    return DomainDataset(domain, imgs, tuple(f"g{i}_{i}" for i in range(n)))


class TestLoadDataset:
    def test_count_and_shape(self, tmp_path):
        for i in range(3):
            _write_png(tmp_path / f"im{i}.png", np.full((32, 32), 100, np.uint8))
        ds = load_dataset(tmp_path, 64)
        assert len(ds) == 3
        assert ds.images.shape == (3, 64, 64, 1)

    def test_normalization_endpoints(self, tmp_path):
        arr = np.zeros((16, 16), np.uint8)
        arr[0, 0] = 255
        _write_png(tmp_path / "a.png", arr)
        ds = load_dataset(tmp_path, 16)
        assert ds.images.min() == pytest.approx(-1.0)
        assert ds.images[0, 0, 0, 0] == pytest.approx(1.0)

    def test_16bit_endpoints(self, tmp_path):
        arr = np.zeros((16, 16), np.uint16)
        arr[0, 0] = 65535
        _write_png(tmp_path / "a.png", arr)
        ds = load_dataset(tmp_path, 16)
        assert ds.images[0, 0, 0, 0] == pytest.approx(1.0)
        assert ds.images.min() == pytest.approx(-1.0)

    def test_downsampling_shape(self, tmp_path):
        _write_png(tmp_path / "big.png", np.random.default_rng(0).integers(0, 256, (512, 512)).astype(np.uint8))
        ds = load_dataset(tmp_path, 256)
        assert ds.images.shape == (1, 256, 256, 1)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DatasetEmpty):
            load_dataset(tmp_path, 32)

    def test_corrupt_file_names_the_file(self, tmp_path):
        (tmp_path / "broken.png").write_bytes(b"not a png at all")
        with pytest.raises(DecodeError, match="broken.png"):
            load_dataset(tmp_path, 32)

    def test_rgb_rejected(self, tmp_path):
        rgb = np.zeros((16, 16, 3), np.uint8)
        _write_png(tmp_path / "c.png", rgb)
        with pytest.raises(ChannelError):
            load_dataset(tmp_path, 16)

    def test_ordering_is_by_filename(self, tmp_path):
        for name, v in (("b.png", 10), ("a.png", 20), ("c.png", 30)):
            _write_png(tmp_path / name, np.full((16, 16), v, np.uint8))
        ds = load_dataset(tmp_path, 16)
        assert ds.sample_ids == ("a", "b", "c")


class TestNormalizationRoundTrip:
    def test_all_256_values_exact(self):
        values = np.arange(256, dtype=np.uint8)
        assert np.array_equal(denormalize_u8(normalize_u8(values)), values)


class TestImageTensor:
    def test_range_violation(self):
        with pytest.raises(ShapeError):
            ImageTensor(np.full((1, 4, 4, 1), 1.5, np.float32))

    def test_non_square(self):
        with pytest.raises(ShapeError):
            ImageTensor(np.zeros((1, 4, 8, 1), np.float32))

    def test_channel_axis_required(self):
        with pytest.raises(ShapeError):
            ImageTensor(np.zeros((1, 4, 4, 3), np.float32))


class TestUnpairedIterator:
    def test_same_seed_same_stream(self):
        dx, dy = _make_dataset(10), _make_dataset(10, domain="Y", seed=1)
        a = unpaired_batch_iterator(dx, dy, 4, seed=7)
        b = unpaired_batch_iterator(dx, dy, 4, seed=7)
        for _ in range(6):
            xa, ya = next(a)
            xb, yb = next(b)
            assert np.array_equal(xa.data, xb.data)
            assert np.array_equal(ya.data, yb.data)

    def test_x_and_y_permutations_independent(self):
        # identical permutations for both domains should be very rare
        n = 10
        dx, dy = _make_dataset(n), _make_dataset(n, domain="Y", seed=1)
        collisions = 0
        for seed in range(100):
            it = unpaired_batch_iterator(dx, dy, n, seed=seed)
            bx, by = next(it)
            perm_x = [int(np.argmax(np.all(dx.images == bx.data[i], axis=(1, 2, 3)))) for i in range(n)]
            perm_y = [int(np.argmax(np.all(dy.images == by.data[i], axis=(1, 2, 3)))) for i in range(n)]
            collisions += perm_x == perm_y
        assert collisions <= 2

    def test_drop_last(self):
        dx, dy = _make_dataset(10), _make_dataset(10, domain="Y", seed=1)
        it = unpaired_batch_iterator(dx, dy, 4, seed=0)
        seen = [next(it) for _ in range(2)]
        assert all(b[0].batch == 4 for b in seen)
        # third batch starts the next epoch (still full-sized)
        x3, _ = next(it)
        assert x3.batch == 4

    def test_epoch_covers_dataset_without_duplicates(self):
        dx, dy = _make_dataset(9), _make_dataset(9, domain="Y", seed=1)
        it = unpaired_batch_iterator(dx, dy, 3, seed=0)
        served = np.concatenate([next(it)[0].data for _ in range(3)])
        # multiset equality with the full dataset
        a = np.sort(served.reshape(9, -1), axis=0)
        b = np.sort(dx.images.reshape(9, -1), axis=0)
        assert np.array_equal(a, b)

    def test_batch_too_large(self):
        dx, dy = _make_dataset(3), _make_dataset(5, domain="Y", seed=1)
        with pytest.raises(BatchTooLarge):
            next(unpaired_batch_iterator(dx, dy, 4, seed=0))


def _write_paired_root(root, groups=10, per_group=2, size=32):
    (root / "X").mkdir(parents=True)
    (root / "Y").mkdir(parents=True)
    rng = np.random.default_rng(0)
    for g in range(groups):
        for k in range(per_group):
            name = f"p{g:02d}_{g * per_group + k:04d}.png"
            _write_png(root / "X" / name, rng.integers(0, 256, (size, size)).astype(np.uint8))
            _write_png(root / "Y" / name, rng.integers(0, 256, (size, size)).astype(np.uint8))


class TestSplitPaired:
    def test_group_counts(self, tmp_path):
        _write_paired_root(tmp_path)
        dx, dy, val = split_paired(tmp_path, 0.2, seed=0)
        val_groups = {p.split("_")[0] for p in val.pair_ids}
        train_groups = {s.split("_")[0] for s in dx.sample_ids}
        assert len(val_groups) == 2
        assert len(train_groups) == 8

    def test_validation_ids_disjoint_from_training(self, tmp_path):
        _write_paired_root(tmp_path)
        dx, dy, val = split_paired(tmp_path, 0.2, seed=1)
        assert not set(val.pair_ids) & set(dx.sample_ids)
        assert not set(val.pair_ids) & set(dy.sample_ids)
        # group-level disjointness, not just sample-level
        assert not {p.split("_")[0] for p in val.pair_ids} & {
            s.split("_")[0] for s in dx.sample_ids
        }

    def test_same_seed_same_split(self, tmp_path):
        _write_paired_root(tmp_path)
        _, _, val_a = split_paired(tmp_path, 0.3, seed=5)
        _, _, val_b = split_paired(tmp_path, 0.3, seed=5)
        assert val_a.pair_ids == val_b.pair_ids

    def test_pairing_mismatch(self, tmp_path):
        _write_paired_root(tmp_path, groups=2)
        _write_png(tmp_path / "X" / "p99_0099.png", np.zeros((32, 32), np.uint8))
        with pytest.raises(PairingMismatch, match="p99_0099.png"):
            split_paired(tmp_path, 0.5, seed=0)
