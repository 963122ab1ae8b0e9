"""Full-reference image quality metrics: MSE, PSNR, SSIM, UQI, VIF, and a
learned perceptual distance.

All intensity metrics operate on images in [0, 1] with a fixed dynamic range
of 1.0.  Inputs may be single images ``(h, w)``, ``(h, w, 1)``, or batches
``(b, h, w, 1)``; batch results are averaged.  The learned perceptual
distance runs on the canonical [-1, 1] representation because that is the
feature extractor's native input domain.

PSNR is capped at 100 dB so reports stay finite and comparable.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import convolve2d

from .exceptions import (
    DatasetEmpty,
    FrozenViolation,
    ScaleError,
    ShapeError,
    WindowError,
)

PSNR_CAP_DB = 100.0

METRIC_COLUMNS = ("ssim", "psnr_db", "mse", "uqi", "vif", "lpd")


def _as_batch(img) -> np.ndarray:
    """Coerce (h,w) / (h,w,1) / (b,h,w) / (b,h,w,1) input to float64 (b,h,w)."""
    a = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    elif a.ndim == 3 and a.shape[-1] == 1 and a.shape[0] == a.shape[1]:
        a = a[None, :, :, 0]
    elif a.ndim == 3:
        pass
    elif a.ndim == 4 and a.shape[-1] == 1:
        a = a[:, :, :, 0]
    else:
        raise ShapeError(f"unsupported image shape {a.shape}")
    return a


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def to_unit_range(img) -> np.ndarray:
    """Map a canonical [-1, 1] image batch onto [0, 1] for metric use."""
    return (_as_batch(img) + 1.0) / 2.0


def mse(a, b) -> float:
    """Mean squared difference over all pixels and batch entries."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range, capped."""
    m = mse(a, b)
    if m < 1e-12:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / m)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()

_SSIM_WINDOW = _gaussian_window()


def ssim(a, b, c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Mean local structural similarity, 11x11 Gaussian window (sigma 1.5).

    Follows the standard definition with stabilizers C1=(0.01R)^2 and
    C2=(0.03R)^2 at dynamic range R=1, evaluated over valid window
    positions only.
    """
    a, b = _pair(a, b)
    win = _SSIM_WINDOW
    if a.shape[1] < win.shape[0] or a.shape[2] < win.shape[1]:
        raise WindowError(
            f"image {a.shape[1]}x{a.shape[2]} smaller than {win.shape[0]}x{win.shape[1]} window"
        )
    vals = []
    for i in range(a.shape[0]):
        x, y = a[i], b[i]
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        xx = convolve2d(x * x, win, mode="valid") - mu_x**2
        yy = convolve2d(y * y, win, mode="valid") - mu_y**2
        xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def uqi(a, b, window: int = 8) -> float:
    """Universal quality index: SSIM with no stabilizers, uniform windows.

    Computed on ``window`` x ``window`` sliding windows.  Windows where the
    index is undefined (zero variance and zero mean energy in the
    denominator) contribute 1 when bit-identical, otherwise they are
    excluded from the mean.
    """
    a, b = _pair(a, b)
    if a.shape[1] < window or a.shape[2] < window:
        raise WindowError(f"image smaller than {window}x{window} window")
    box = np.ones((window, window), dtype=np.float64) / (window * window)
    vals = []
    for i in range(a.shape[0]):
        x, y = a[i], b[i]
        mu_x = convolve2d(x, box, mode="valid")
        mu_y = convolve2d(y, box, mode="valid")
        var_x = convolve2d(x * x, box, mode="valid") - mu_x**2
        var_y = convolve2d(y * y, box, mode="valid") - mu_y**2
        cov = convolve2d(x * y, box, mode="valid") - mu_x * mu_y
        sq_diff = convolve2d((x - y) ** 2, box, mode="valid")
        num = 4.0 * cov * mu_x * mu_y
        den = (var_x + var_y) * (mu_x**2 + mu_y**2)
        degenerate = np.abs(den) < 1e-12
        identical = sq_diff <= 0.0
        q = np.where(degenerate, np.where(identical, 1.0, np.nan), num / np.where(degenerate, 1.0, den))
        kept = q[~np.isnan(q)]
        if kept.size == 0:
            raise WindowError("no non-degenerate windows to average")
        vals.append(np.mean(kept))
    return float(np.mean(vals))


def vif(reference, distorted, scales: int = 4, noise_var: float = 2.0) -> float:
    """Pixel-domain visual information fidelity over dyadic scales.

    Ratio of the information the distorted image carries about the
    reference to the information the reference carries about itself,
    accumulated over ``scales`` resolutions with Gaussian windows.
    Identical inputs score 1 by construction.
    """
    ref_b, dist_b = _pair(reference, distorted)
    min_size = 2 ** (scales - 1) * 4
    if ref_b.shape[1] < min_size or ref_b.shape[2] < min_size:
        raise ScaleError(
            f"image {ref_b.shape[1]}x{ref_b.shape[2]} too small for {scales} dyadic scales"
        )
    eps = 1e-10
    vals = []
    for i in range(ref_b.shape[0]):
        ref, dist = ref_b[i], dist_b[i]
        num = den = 0.0
        for scale in range(1, scales + 1):
            sd = (2 ** (scales - scale + 1) + 1) / 5.0
            if scale > 1:
                ref = gaussian_filter(ref, sd)[::2, ::2]
                dist = gaussian_filter(dist, sd)[::2, ::2]
            mu1 = gaussian_filter(ref, sd)
            mu2 = gaussian_filter(dist, sd)
            sigma1_sq = gaussian_filter(ref * ref, sd) - mu1 * mu1
            sigma2_sq = gaussian_filter(dist * dist, sd) - mu2 * mu2
            sigma12 = gaussian_filter(ref * dist, sd) - mu1 * mu2
            sigma1_sq = np.maximum(sigma1_sq, 0.0)
            sigma2_sq = np.maximum(sigma2_sq, 0.0)

            g = sigma12 / (sigma1_sq + eps)
            sv_sq = sigma2_sq - g * sigma12
            g[sigma1_sq < eps] = 0.0
            sv_sq[sigma1_sq < eps] = sigma2_sq[sigma1_sq < eps]
            sigma1_sq[sigma1_sq < eps] = 0.0
            g[sigma2_sq < eps] = 0.0
            sv_sq[sigma2_sq < eps] = 0.0
            sv_sq[g < 0.0] = sigma2_sq[g < 0.0]
            g[g < 0.0] = 0.0
            sv_sq[sv_sq <= eps] = eps

            num += np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + noise_var)))
            den += np.sum(np.log10(1.0 + sigma1_sq / noise_var))
        vals.append(1.0 if den == 0.0 else num / den)
    return float(np.mean(vals))


def learned_perceptual_distance(a, b, extractor) -> float:
    """Perceptual distance through a frozen feature extractor.

    Feature maps of both inputs are unit-normalized across channels at each
    spatial position; the distance is the mean squared difference of the
    normalized maps, averaged over layers.  Inputs are canonical [-1, 1]
    image batches.
    """
    import torch

    if not getattr(extractor, "frozen", False):
        raise FrozenViolation("learned perceptual distance requires a frozen extractor")
    a_b, b_b = _pair(a, b)
    ta = torch.from_numpy(a_b[:, None, :, :].astype(np.float32))
    tb = torch.from_numpy(b_b[:, None, :, :].astype(np.float32))
    with torch.no_grad():
        fa = extractor(ta)
        fb = extractor(tb)
        total = 0.0
        for ma, mb in zip(fa, fb):
            na = ma / (ma.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
            nb = mb / (mb.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
            total += float((na - nb).pow(2).mean())
    return total / len(fa)


@dataclass
class MetricReport:
    """Per-model metric table plus provenance metadata."""

    rows: list[tuple[str, str, float]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    per_pair: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, model: str, metric: str, value: float):
        if any(m == model and k == metric for m, k, _ in self.rows):
            raise ShapeError(f"duplicate metric row ({model}, {metric})")
        self.rows.append((model, metric, float(value)))

    def value(self, model: str, metric: str) -> float:
        for m, k, v in self.rows:
            if m == model and k == metric:
                return v
        raise KeyError((model, metric))

    def models(self) -> list[str]:
        seen = []
        for m, _, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return seen

    def write_csv(self, path):
        """Table-style CSV, one row per model.

        lpd is a learned perceptual distance computed with this package's
        own feature extractor; values are not comparable to published
        LPIPS numbers.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", *METRIC_COLUMNS])
            for model in self.models():
                row = [model]
                for metric in METRIC_COLUMNS:
                    try:
                        row.append(f"{self.value(model, metric):.6f}")
                    except KeyError:
                        row.append("")
                w.writerow(row)


def evaluate_on_validation(generator, val, extractor, model_name: str = "model") -> MetricReport:
    """Translate every validation x and score it against its ground truth.

    Returns per-metric means over the validation set; ``per_pair`` keeps
    the individual scores.  ``extractor`` may be None, in which case the
    learned perceptual distance is omitted.
    """
    import torch

    if len(val) == 0:
        raise DatasetEmpty("validation set is empty")
    from .networks import generator_forward
    from .data import ImageTensor

    fake = generator_forward(generator, ImageTensor(val.xs))
    fake01 = to_unit_range(fake.data)
    true01 = to_unit_range(val.ys)

    names = ["ssim", "psnr_db", "mse", "uqi", "vif"]
    funcs = [ssim, psnr, mse, uqi, vif]
    per_pair = {n: np.empty(len(val)) for n in names}
    for i in range(len(val)):
        for n, f in zip(names, funcs):
            per_pair[n][i] = f(fake01[i], true01[i])
    if extractor is not None:
        per_pair["lpd"] = np.array(
            [
                learned_perceptual_distance(
                    fake.data[i : i + 1], val.ys[i : i + 1], extractor
                )
                for i in range(len(val))
            ]
        )

    report = MetricReport(
        metadata={
            "n_pairs": len(val),
            "model": model_name,
            "timestamp": _dt.datetime.now().isoformat(timespec="seconds"),
        },
        per_pair=per_pair,
    )
    for n, scores in per_pair.items():
        report.add(model_name, n, float(np.mean(scores)))
    return report
