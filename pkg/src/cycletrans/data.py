"""Image ingestion, normalization, unpaired batching, and paired splits.

Images live in two representations:

* on disk: 8- or 16-bit single-channel PNG files,
* in memory: :class:`ImageTensor`, a float32 array of shape
  ``(batch, height, width, 1)`` with values in the canonical range [-1, 1].

Paired directory roots contain matched filenames under ``X/`` and ``Y/``
subfolders.  The grouping key used for train/validation splitting is the
filename prefix before the first underscore (e.g. ``p03`` in
``p03_0017.png``), standing in for a subject-level split.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    BatchTooLarge,
    ChannelError,
    ConfigError,
    DatasetEmpty,
    DecodeError,
    PairingMismatch,
    ShapeError,
)

VALUE_RANGE = (-1.0, 1.0)

_GRAYSCALE_MODES = {"L", "I", "I;16", "I;16B", "I;16L", "I;16N"}


@dataclass(frozen=True)
class ImageTensor:
    """Batch of single-channel images, float32, shape (batch, h, w, 1)."""

    data: np.ndarray
    value_range: tuple[float, float] = VALUE_RANGE

    def __post_init__(self):
        d = self.data
        if d.ndim != 4 or d.shape[3] != 1:
            raise ShapeError(f"expected (batch, h, w, 1), got {d.shape}")
        if d.shape[1] != d.shape[2]:
            raise ShapeError(f"images must be square, got {d.shape[1]}x{d.shape[2]}")
        lo, hi = self.value_range
        if not np.isfinite(d).all():
            raise ShapeError("image values must be finite")
        if d.min() < lo - 1e-6 or d.max() > hi + 1e-6:
            raise ShapeError(
                f"values outside [{lo}, {hi}]: min={d.min():.6f} max={d.max():.6f}"
            )

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DomainDataset:
    """All samples of one image domain, stacked into a single array."""

    domain_id: str
    images: np.ndarray          # (n, h, w, 1) float32 in [-1, 1]
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ShapeError("sample_ids must be unique within a dataset")
        if self.images.shape[0] != len(self.sample_ids):
            raise ShapeError("images and sample_ids length mismatch")

    def __len__(self) -> int:
        return self.images.shape[0]

    def batch(self, indices) -> ImageTensor:
        return ImageTensor(self.images[np.asarray(indices)])


@dataclass(frozen=True)
class PairedValidationSet:
    """Withheld ground-truth pairs; never sampled during training."""

    xs: np.ndarray              # (n, h, w, 1)
    ys: np.ndarray              # (n, h, w, 1)
    pair_ids: tuple[str, ...]

    def __len__(self) -> int:
        return self.xs.shape[0]


def normalize_u8(values: np.ndarray) -> np.ndarray:
    """Map 8-bit intensities [0, 255] onto the canonical range [-1, 1]."""
    return np.asarray(values, dtype=np.float64) / 255.0 * 2.0 - 1.0


def denormalize_u8(values: np.ndarray) -> np.ndarray:
    """Invert :func:`normalize_u8`, rounding back to exact 8-bit values."""
    v = (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * 255.0
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def _decode_grayscale(path: Path) -> np.ndarray:
    """Read one PNG as a float32 array in [0, 1]; reject non-grayscale."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in _GRAYSCALE_MODES:
                raise ChannelError(f"{path.name}: mode {mode!r} is not grayscale")
            arr = np.asarray(im)
    except ChannelError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype in (np.uint16, np.int32):
        scale = 65535.0
    else:
        raise DecodeError(f"{path.name}: unsupported sample depth {arr.dtype}")
    return arr.astype(np.float32) / scale


def _resize_bilinear(img01: np.ndarray, resolution: int) -> np.ndarray:
    """Antialiased bilinear resample of a [0, 1] image to resolution**2."""
    if img01.shape == (resolution, resolution):
        return img01
    pil = Image.fromarray(img01.astype(np.float32), mode="F")
    out = pil.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32)


def load_dataset(path, resolution: int, domain_id: str = "X") -> DomainDataset:
    """Load every PNG under ``path`` into a DomainDataset.

    Images are resampled to ``resolution`` x ``resolution`` with antialiased
    bilinear interpolation and normalized to [-1, 1].  Ordering is
    deterministic (sorted by filename).

    Raises
    ------
    DatasetEmpty
        if the directory contains no PNG files.
    DecodeError / ChannelError
        for unreadable or non-grayscale inputs (names the file).
    """
    root = Path(path)
    files = sorted(p for p in root.glob("*.png") if p.is_file())
    if not files:
        raise DatasetEmpty(f"no PNG files in {root}")
    images = np.empty((len(files), resolution, resolution, 1), dtype=np.float32)
    for i, f in enumerate(files):
        img01 = _resize_bilinear(_decode_grayscale(f), resolution)
        images[i, :, :, 0] = img01 * 2.0 - 1.0
    np.clip(images, -1.0, 1.0, out=images)
    ids = tuple(f.stem for f in files)
    return DomainDataset(domain_id=domain_id, images=images, sample_ids=ids)


def group_key(sample_id: str) -> str:
    """Grouping key for subject-level splits: prefix before first underscore."""
    return sample_id.split("_", 1)[0]


def _epoch_permutation(seed: int, stream: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, stream, epoch)))
    return rng.permutation(n)


def steps_per_epoch(dx: DomainDataset, dy: DomainDataset, batch_size: int) -> int:
    """Full batches per epoch under the drop-last policy."""
    return min(len(dx), len(dy)) // batch_size


def unpaired_batch_iterator(
    dx: DomainDataset,
    dy: DomainDataset,
    batch_size: int,
    seed: int,
    start_epoch: int = 0,
    start_batch: int = 0,
) -> Iterator[tuple[ImageTensor, ImageTensor]]:
    """Yield unpaired (x, y) batches, reshuffling both domains every epoch.

    The X and Y index streams use independently seeded permutations, so no
    positional pairing survives.  The stream is endless and fully
    reproducible from ``seed``; ``start_epoch``/``start_batch`` allow a
    training run to resume mid-stream.  Partial final batches are dropped.
    """
    if len(dx) == 0 or len(dy) == 0:
        raise DatasetEmpty("both domains must be non-empty")
    if batch_size > min(len(dx), len(dy)):
        raise BatchTooLarge(
            f"batch_size {batch_size} exceeds smallest dataset ({min(len(dx), len(dy))})"
        )
    n_batches = steps_per_epoch(dx, dy, batch_size)
    epoch = start_epoch
    while True:
        perm_x = _epoch_permutation(seed, 0, epoch, len(dx))
        perm_y = _epoch_permutation(seed, 1, epoch, len(dy))
        first = start_batch if epoch == start_epoch else 0
        for b in range(first, n_batches):
            sl = slice(b * batch_size, (b + 1) * batch_size)
            yield dx.batch(perm_x[sl]), dy.batch(perm_y[sl])
        epoch += 1


def _load_paired_arrays(paired_root, resolution):
    root = Path(paired_root)
    x_dir, y_dir = root / "X", root / "Y"
    x_files = sorted(p.name for p in x_dir.glob("*.png"))
    y_files = sorted(p.name for p in y_dir.glob("*.png"))
    if not x_files or not y_files:
        raise DatasetEmpty(f"paired root {root} needs PNGs under X/ and Y/")
    only_x = set(x_files) - set(y_files)
    only_y = set(y_files) - set(x_files)
    if only_x or only_y:
        missing = sorted(only_x | only_y)[0]
        raise PairingMismatch(f"{missing} present in only one of X/ and Y/")
    if resolution is None:
        with Image.open(x_dir / x_files[0]) as im:
            resolution = im.size[0]
    dx = load_dataset(x_dir, resolution, domain_id="X")
    dy = load_dataset(y_dir, resolution, domain_id="Y")
    return dx, dy


def split_paired(
    paired_root,
    val_fraction: float,
    seed: int,
    resolution: int | None = None,
) -> tuple[DomainDataset, DomainDataset, PairedValidationSet]:
    """Split a paired root into unpaired training domains + paired validation.

    Groups (filename prefixes) are partitioned, so no subject appears in both
    splits.  Training X and Y are returned as independent datasets with the
    pairing metadata discarded; the withheld groups keep their ground-truth
    pairs for validation.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    dx, dy = _load_paired_arrays(paired_root, resolution)
    groups = sorted({group_key(s) for s in dx.sample_ids})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    order = [groups[i] for i in rng.permutation(len(groups))]
    n_val = max(1, int(round(val_fraction * len(groups))))
    val_groups = set(order[:n_val])

    is_val = np.array([group_key(s) in val_groups for s in dx.sample_ids])
    train_idx = np.flatnonzero(~is_val)
    val_idx = np.flatnonzero(is_val)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DatasetEmpty("split produced an empty train or validation set")

    train_x = DomainDataset(
        "X", dx.images[train_idx], tuple(dx.sample_ids[i] for i in train_idx)
    )
    train_y = DomainDataset(
        "Y", dy.images[train_idx], tuple(dy.sample_ids[i] for i in train_idx)
    )
    val = PairedValidationSet(
        xs=dx.images[val_idx],
        ys=dy.images[val_idx],
        pair_ids=tuple(dx.sample_ids[i] for i in val_idx),
    )
    return train_x, train_y, val
