"""Synthetic two-domain corpus with an exactly known domain transform.

Domain X holds random compositions of anti-aliased ellipses and rectangles
with smooth intensity ramps.  Domain Y is a deterministic transform T of X:
pixelwise inversion, then Gaussian blur, then (optionally) an additive fixed
sinusoidal grid, clipped to [0, 1].  Because T is known, unpaired training
can be validated against withheld ground-truth pairs.

Files are exported as 8-bit PNGs under ``X/`` and ``Y/`` with matching
names.  X images are quantized to 8 bits *before* T is applied, so a
re-loaded x reproduces its stored y bit-for-bit through
:func:`apply_transform`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .data import PairedValidationSet, group_key, split_paired
from .exceptions import ConfigError, IoError, PairingMismatch

TRANSFORMS = ("invert_blur", "invert_blur_texture")

N_GROUPS = 10          # pseudo-subjects, assigned round-robin
TEXTURE_PERIOD = 16.0  # pixels per grid cycle

MANIFEST_NAME = "synth_manifest.json"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic corpus; fully determines its bytes."""

    n_images: int = 200
    resolution: int = 64
    transform: str = "invert_blur_texture"
    blur_sigma: float = 2.0
    texture_amplitude: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.resolution < 32:
            raise ConfigError("resolution must be >= 32")
        if self.n_images < 10:
            raise ConfigError("n_images must be >= 10")


def texture_grid(resolution: int) -> np.ndarray:
    """Fixed unit-amplitude sinusoidal grid shared by every Y image."""
    u = np.arange(resolution, dtype=np.float64)
    gu = np.sin(2.0 * np.pi * u / TEXTURE_PERIOD)
    return np.outer(gu, gu)


def apply_transform(x01: np.ndarray, spec: SynthSpec) -> np.ndarray:
    """The domain map T: invert, blur, optionally add the texture grid."""
    y = 1.0 - np.asarray(x01, dtype=np.float64)
    y = gaussian_filter(y, sigma=spec.blur_sigma, mode="reflect")
    if spec.transform == "invert_blur_texture":
        y = y + spec.texture_amplitude * texture_grid(x01.shape[0])
    return np.clip(y, 0.0, 1.0)


def _rotated_coords(resolution, cx, cy, theta):
    v, u = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    du, dv = u - cx, v - cy
    c, s = np.cos(theta), np.sin(theta)
    return c * du + s * dv, -s * du + c * dv


def _soft_mask(signed_dist_px: np.ndarray, softness: float = 1.5) -> np.ndarray:
    """Anti-aliased edge: 1 inside, 0 outside, linear over ~softness pixels."""
    return np.clip(0.5 - signed_dist_px / softness, 0.0, 1.0)


def render_shape_image(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """One domain-X image in [0, 1]: 2-5 soft shapes over a gentle ramp."""
    theta = rng.uniform(0, 2 * np.pi)
    v, u = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    ramp = (np.cos(theta) * u + np.sin(theta) * v) / resolution
    img = rng.uniform(0.05, 0.25) + rng.uniform(0.0, 0.15) * ramp

    for _ in range(rng.integers(2, 6)):
        cx, cy = rng.uniform(0.15, 0.85, size=2) * resolution
        half_w = rng.uniform(0.08, 0.28) * resolution
        half_h = rng.uniform(0.08, 0.28) * resolution
        xr, yr = _rotated_coords(resolution, cx, cy, rng.uniform(0, np.pi))
        if rng.random() < 0.5:
            # ellipse: normalized radius mapped back to approximate pixels
            q = np.sqrt((xr / half_w) ** 2 + (yr / half_h) ** 2)
            dist = (q - 1.0) * min(half_w, half_h)
        else:
            dist = np.maximum(np.abs(xr) - half_w, np.abs(yr) - half_h)
        mask = _soft_mask(dist)
        base = rng.uniform(0.3, 0.95)
        grad = rng.uniform(-0.25, 0.25)
        phi = rng.uniform(0, 2 * np.pi)
        shade = base + grad * (np.cos(phi) * xr + np.sin(phi) * yr) / max(
            half_w, half_h
        )
        img = img * (1.0 - mask) + shade * mask

    return np.clip(img, 0.0, 1.0)


def _quantize8(img01: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img01 * 255.0), 0, 255).astype(np.uint8)


def sample_name(index: int) -> str:
    return f"p{index % N_GROUPS:02d}_{index:04d}.png"


def generate_corpus(spec: SynthSpec, out_dir) -> Path:
    """Write a paired corpus (X/, Y/, manifest) under ``out_dir``.

    Deterministic: the same spec always produces a byte-identical tree.
    Also records the corpus-mean SSIM between x and T(x) in the manifest as
    a difficulty statistic (the transform should be far from identity).
    """
    from .metrics import ssim  # local import; metrics depends on nothing here

    root = Path(out_dir)
    try:
        (root / "X").mkdir(parents=True, exist_ok=True)
        (root / "Y").mkdir(parents=True, exist_ok=True)
        probe = root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"cannot write corpus under {root}: {exc}") from exc

    ssim_sum = 0.0
    for i in range(spec.n_images):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, i)))
        x = _quantize8(render_shape_image(rng, spec.resolution)) / 255.0
        y = _quantize8(apply_transform(x, spec)) / 255.0
        name = sample_name(i)
        Image.fromarray(_quantize8(x)).save(root / "X" / name)
        Image.fromarray(_quantize8(y)).save(root / "Y" / name)
        ssim_sum += ssim(x, y)

    manifest = dict(asdict(spec), mean_ssim_x_y=ssim_sum / spec.n_images)
    with open(root / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def load_manifest(out_dir) -> SynthSpec:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"{out_dir} has no {MANIFEST_NAME}; not a generated corpus")
    raw = json.loads(path.read_text())
    raw.pop("mean_ssim_x_y", None)
    return SynthSpec(**raw)


def oracle_pairs(out_dir, val_fraction: float = 0.2, seed: int = 0) -> PairedValidationSet:
    """Reconstruct the withheld (x, T(x)) validation pairs of a corpus.

    Pairs come from validation-split groups only (the same split that
    training uses for matching ``val_fraction``/``seed``), and every
    returned y is verified to equal T(x) exactly under 8-bit quantization.
    """
    spec = load_manifest(out_dir)
    _, _, val = split_paired(out_dir, val_fraction, seed, resolution=spec.resolution)
    for i, pid in enumerate(val.pair_ids):
        # recover exact 8-bit values so T can be replayed bit-for-bit
        x_u8 = np.rint((val.xs[i, :, :, 0].astype(np.float64) + 1.0) / 2.0 * 255.0)
        y_u8 = np.rint((val.ys[i, :, :, 0].astype(np.float64) + 1.0) / 2.0 * 255.0)
        expected = _quantize8(apply_transform(x_u8 / 255.0, spec))
        if not np.array_equal(y_u8.astype(np.uint8), expected):
            raise PairingMismatch(f"{pid}: stored Y is not T(X) for this corpus")
    return val
