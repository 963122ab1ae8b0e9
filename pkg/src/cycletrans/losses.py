"""Training objective: adversarial value, cycle-consistency, and the
feature-based cycle-perceptual and cycle-style (Gram) terms.

Every function is pure and framework-flexible: numpy inputs are promoted to
float64 torch tensors, torch inputs keep their dtype and stay attached to
the autograd graph.  Scalar results come back as 0-dim torch tensors
(``float()`` them for logging).

Probability scores are clamped to [eps, 1-eps] before any log so the
adversarial terms never produce NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import NumericalError, ShapeError

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective.

    ``perceptual_layer_weights`` / ``style_layer_weights`` weight the
    feature extractor's layers individually and must match its layer count.
    """

    cycle_weight: float = 10.0
    perceptual_weight: float = 1.0
    style_weight: float = 10.0
    perceptual_layer_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    style_layer_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        values = (
            self.cycle_weight,
            self.perceptual_weight,
            self.style_weight,
            *self.perceptual_layer_weights,
            *self.style_layer_weights,
        )
        if any(v < 0 for v in values):
            raise ShapeError("loss weights must be non-negative")


@dataclass(frozen=True)
class GramMatrix:
    """Channel-correlation matrix of one feature map layer."""

    values: np.ndarray  # (d, d), symmetric, positive semidefinite
    layer_index: int = 0

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"Gram matrix must be square, got {v.shape}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one optimization step, all finite floats."""

    adv_1: float
    adv_2: float
    cyc: float
    cPercep: float
    cStyle: float
    total: float

    FIELDS = ("adv_1", "adv_2", "cyc", "cPercep", "cStyle", "total")

    def as_row(self) -> list[float]:
        return [getattr(self, name) for name in self.FIELDS]


def _to_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    a = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return torch.from_numpy(a)


def _clamped_log(scores: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(scores, SCORE_EPS, 1.0 - SCORE_EPS))


def adversarial_value(d_real_scores, d_fake_scores) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))] over batch and patch grid.

    This is the quantity the discriminator ascends and (in saturating mode)
    the generator descends.
    """
    real = _to_tensor(d_real_scores)
    fake = _to_tensor(d_fake_scores)
    return _clamped_log(real).mean() + _clamped_log(1.0 - fake).mean()


def generator_adversarial_loss(d_fake_scores, mode: str = "non_saturating") -> torch.Tensor:
    """Generator-side adversarial term (lower is better for the generator).

    ``saturating`` is the literal E[log(1 - D(fake))] of the min-max value;
    ``non_saturating`` is the -E[log D(fake)] variant that keeps gradients
    alive early in training and is the default.
    """
    fake = _to_tensor(d_fake_scores)
    if mode == "saturating":
        return _clamped_log(1.0 - fake).mean()
    if mode == "non_saturating":
        return -_clamped_log(fake).mean()
    raise ShapeError(f"unknown adversarial mode {mode!r}")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def cycle_consistency_loss(x, x_rec, y, y_rec) -> torch.Tensor:
    """Mean absolute deviation of both cycle reconstructions.

    ``x_rec`` is x mapped through both generators and back; likewise for
    ``y_rec``.  Each branch is reduced by the mean over all elements, then
    the two branch means are summed.
    """
    x, x_rec, y, y_rec = map(_to_tensor, (x, x_rec, y, y_rec))
    _check_same_shape(x, x_rec, "cycle x-branch")
    _check_same_shape(y, y_rec, "cycle y-branch")
    return (x - x_rec).abs().mean() + (y - y_rec).abs().mean()


def gram_matrix(feature_map, layer_index: int = 0) -> GramMatrix:
    """Channel-by-channel correlation of one (h, w, d) feature map.

    Entry (m, n) is the mean over positions of channel m times channel n,
    additionally divided by the depth d.  The result is exactly symmetric
    and positive semidefinite up to rounding.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeError(f"expected (h, w, d) feature map, got shape {fm.shape}")
    if not np.isfinite(fm).all():
        raise NumericalError("feature map contains non-finite values")
    h, w, d = fm.shape
    flat = fm.reshape(h * w, d)
    g = flat.T @ flat / float(h * w * d)
    g = (g + g.T) / 2.0  # exact symmetry despite BLAS summation order
    return GramMatrix(values=g, layer_index=layer_index)


def batched_gram(feature_map: torch.Tensor) -> torch.Tensor:
    """(b, d, h, w) torch feature maps -> (b, d, d) Gram matrices."""
    b, d, h, w = feature_map.shape
    flat = feature_map.reshape(b, d, h * w)
    return flat @ flat.transpose(1, 2) / float(h * w * d)


def _canon_stack(stack) -> list[torch.Tensor]:
    """Feature stack -> list of torch (b, d, h, w) tensors."""
    out = []
    for m in stack:
        if isinstance(m, torch.Tensor):
            out.append(m)
        else:
            a = np.asarray(m, dtype=np.float64)
            if a.ndim == 3:
                a = a[None]
            out.append(torch.from_numpy(a.transpose(0, 3, 1, 2)))
    return out


def _check_stacks(fa, fb, weights, what: str):
    if len(fa) != len(fb):
        raise ShapeError(f"{what}: stack lengths {len(fa)} vs {len(fb)}")
    if len(weights) != len(fa):
        raise ShapeError(
            f"{what}: {len(weights)} layer weights for {len(fa)} layers"
        )
    for i, (ma, mb) in enumerate(zip(fa, fb)):
        _check_same_shape(ma, mb, f"{what} layer {i}")


def cycle_perceptual_loss(fx, fx_rec, fy, fy_rec, w: LossWeights) -> torch.Tensor:
    """Weighted per-layer mean absolute error between the feature stacks of
    inputs and their cycle reconstructions, summed over both branches."""
    fx, fx_rec, fy, fy_rec = map(_canon_stack, (fx, fx_rec, fy, fy_rec))
    lw = w.perceptual_layer_weights
    _check_stacks(fx, fx_rec, lw, "perceptual x-branch")
    _check_stacks(fy, fy_rec, lw, "perceptual y-branch")
    total = None
    for lam, ax, bx, ay, by in zip(lw, fx, fx_rec, fy, fy_rec):
        term = lam * ((ax - bx).abs().mean() + (ay - by).abs().mean())
        total = term if total is None else total + term
    return total


def cycle_style_loss(fx, fx_rec, fy, fy_rec, w: LossWeights) -> torch.Tensor:
    """Weighted squared Frobenius distance between Gram matrices of inputs
    and their cycle reconstructions, scaled by 1/(4 d^2) per layer and
    averaged over the batch."""
    fx, fx_rec, fy, fy_rec = map(_canon_stack, (fx, fx_rec, fy, fy_rec))
    lw = w.style_layer_weights
    _check_stacks(fx, fx_rec, lw, "style x-branch")
    _check_stacks(fy, fy_rec, lw, "style y-branch")
    total = None
    for lam, ax, bx, ay, by in zip(lw, fx, fx_rec, fy, fy_rec):
        d = ax.shape[1]
        fro_x = (batched_gram(ax) - batched_gram(bx)).pow(2).sum(dim=(1, 2)).mean()
        fro_y = (batched_gram(ay) - batched_gram(by)).pow(2).sum(dim=(1, 2)).mean()
        term = lam / (4.0 * d * d) * (fro_x + fro_y)
        total = term if total is None else total + term
    return total


def combine_total(adv_1, adv_2, cyc, cPercep, cStyle, w: LossWeights):
    """Composite objective; works on floats or live torch scalars."""
    return (
        adv_1
        + adv_2
        + w.perceptual_weight * cPercep
        + w.cycle_weight * cyc
        + w.style_weight * cStyle
    )


def total_objective(adv_1, adv_2, cyc, cPercep, cStyle, w: LossWeights) -> LossBreakdown:
    """Assemble the finite per-term breakdown of one step.

    Generators minimize ``total`` (with generator-form adversarial terms);
    discriminators maximize their adversarial values only.
    """
    parts = {
        "adv_1": float(adv_1),
        "adv_2": float(adv_2),
        "cyc": float(cyc),
        "cPercep": float(cPercep),
        "cStyle": float(cStyle),
    }
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericalError(f"loss term {name} is not finite: {value}")
    total = float(combine_total(w=w, **parts))
    if not np.isfinite(total):
        raise NumericalError(f"total objective is not finite: {total}")
    return LossBreakdown(total=total, **parts)
