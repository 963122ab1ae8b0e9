"""Finite-difference verification of the composite objective's gradients.

Builds a tiny double-precision bundle (8x8 inputs, a few hundred generator
parameters), computes the analytic gradient of the full generator objective
for every generator parameter, and compares it against central finite
differences.  Used by the test suite and the ``check-grads`` CLI command.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from .losses import (
    LossWeights,
    combine_total,
    cycle_consistency_loss,
    cycle_perceptual_loss,
    cycle_style_loss,
    generator_adversarial_loss,
)
from .networks import FeatureEncoder, NetworkBundle, build_networks, init_weights

TOY_RESOLUTION = 8
FD_STEP = 1e-5
REL_TOLERANCE = 1e-4

# weights chosen so every term contributes measurably to the toy gradient
TOY_WEIGHTS = LossWeights(
    cycle_weight=10.0,
    perceptual_weight=2.0,
    style_weight=50.0,
)


def _build_candidate(seed: int):
    extractor = FeatureEncoder(base_filters=2)
    gen = torch.Generator().manual_seed(seed + 1)
    init_weights(extractor, gen, std=0.3)
    extractor.double().freeze()
    bundle = build_networks(
        resolution=TOY_RESOLUTION,
        base_filters=1,
        residual_blocks=1,
        disc_base_filters=2,
        disc_strided_layers=1,
        downsample_stages=1,
        first_kernel=3,
        seed=seed,
        extractor=extractor,
        dtype=torch.float64,
    )
    regen = torch.Generator().manual_seed(seed + 10)
    for net, std in (
        (bundle.g1, 0.4),
        (bundle.g2, 0.4),
        (bundle.d1, 0.1),
        (bundle.d2, 0.1),
    ):
        init_weights(net, regen, std=std)
        net.to(torch.float64)
    # nonzero biases keep activations off the exact relu/L1 kink set, where
    # two-sided differences and subgradients legitimately disagree
    bias_gen = torch.Generator().manual_seed(seed + 20)
    for net in (bundle.g1, bundle.g2, bundle.d1, bundle.d2, extractor):
        with torch.no_grad():
            for name, p in net.named_parameters():
                if name.endswith("bias"):
                    p.copy_(
                        torch.randn(p.shape, generator=bias_gen, dtype=torch.float32)
                        .to(p.dtype)
                        * 0.1
                    )
    data_gen = torch.Generator().manual_seed(seed + 2)
    x = torch.rand((2, 1, TOY_RESOLUTION, TOY_RESOLUTION), generator=data_gen, dtype=torch.float64) * 2 - 1
    y = torch.rand((2, 1, TOY_RESOLUTION, TOY_RESOLUTION), generator=data_gen, dtype=torch.float64) * 2 - 1
    return bundle, x, y


def _equalize_conv_variances(net, probe: torch.Tensor, floor: float = 0.05):
    """Rescale each conv so its response to ``probe`` has unit spread.

    Finite differences are only trustworthy away from the objective's
    ill-conditioned regions, and the dominant hazard here is a nearly
    constant channel driving an instance norm (its normalization then has
    curvature ~ 1/var^{3/2}).  A data-dependent rescaling pins every conv
    output at a healthy scale, layer by layer.
    """
    import torch.nn as nn

    convs = [m for m in net.modules() if isinstance(m, nn.Conv2d)]
    for conv in convs:
        captured: list[torch.Tensor] = []
        handle = conv.register_forward_hook(lambda _m, _i, out: captured.append(out))
        with torch.no_grad():
            net(probe)
            per_channel = captured[0].to(torch.float64).std(dim=(0, 2, 3))
            worst = float(per_channel.min())
            overall = float(captured[0].std())
            scale = 1.0 / max(min(worst, overall), floor)
            conv.weight.mul_(min(scale, 20.0))
        handle.remove()


def build_toy_setup(seed: int = 0):
    """Tiny float64 bundle plus a fixed random (x, y) batch.

    Weights start at a larger scale than the training init and are then
    variance-equalized against the probe batch, keeping instance-norm
    statistics away from degenerate regimes where finite differences stop
    being meaningful.
    """
    bundle, x, y = _build_candidate(seed)
    _equalize_conv_variances(bundle.g1, x)
    _equalize_conv_variances(bundle.g2, y)
    return bundle, TOY_WEIGHTS, x, y


def _named_generator_params(bundle):
    named = [(f"g1.{n}", p) for n, p in bundle.g1.named_parameters()]
    named += [(f"g2.{n}", p) for n, p in bundle.g2.named_parameters()]
    return named


def _fd_scan(bundle, w, x, y, named, step: float):
    """Central finite differences of the objective for every parameter."""
    grads = []
    with torch.no_grad():
        for _name, p in named:
            flat = p.view(-1)
            g = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                f_plus = generator_objective(bundle, w, x, y).item()
                flat[i] = orig - step
                f_minus = generator_objective(bundle, w, x, y).item()
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * step)
            grads.append(g.view_as(p))
    return grads


def generator_objective(
    bundle: NetworkBundle, w: LossWeights, x: torch.Tensor, y: torch.Tensor,
    adv_mode: str = "non_saturating",
) -> torch.Tensor:
    """The full generator-side objective on one batch (discriminators fixed)."""
    fake_y = bundle.g1(x)
    fake_x = bundle.g2(y)
    rec_x = bundle.g2(fake_y)
    rec_y = bundle.g1(fake_x)
    adv_1 = generator_adversarial_loss(bundle.d1(fake_y), adv_mode)
    adv_2 = generator_adversarial_loss(bundle.d2(fake_x), adv_mode)
    cyc = cycle_consistency_loss(x, rec_x, y, rec_y)
    fx, fx_rec = bundle.extractor(x), bundle.extractor(rec_x)
    fy, fy_rec = bundle.extractor(y), bundle.extractor(rec_y)
    c_percep = cycle_perceptual_loss(fx, fx_rec, fy, fy_rec, w)
    c_style = cycle_style_loss(fx, fx_rec, fy, fy_rec, w)
    return combine_total(adv_1, adv_2, cyc, c_percep, c_style, w)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_parameters: int
    elapsed_seconds: float
    candidates_skipped: int = 0
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOLERANCE


def _rel(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference_check(
    seed: int = 0, step: float = FD_STEP, rel_floor: float = 1e-6
) -> GradCheckReport:
    """Compare analytic and central finite-difference gradients.

    Central differences only estimate a derivative where the objective is
    locally smooth; the L1 terms have kinks, so a random instantiation can
    place some coordinate right on one.  Candidate setups (derived
    deterministically from ``seed``) are therefore screened by an FD
    self-stability test -- differences at step h must agree with step h/4
    -- and the first stable candidate is compared against autograd over
    every generator parameter.  A genuinely wrong analytic gradient is
    h-stable and can never be screened away.

    Relative error per element is |analytic - fd| / max(|analytic|, |fd|,
    rel_floor); the floor keeps rounding noise on near-zero gradients from
    registering as a large relative error.
    """
    t0 = time.time()
    candidate_seed = seed
    skipped = 0
    for attempt in range(8):
        bundle, w, x, y = build_toy_setup(candidate_seed)
        named = _named_generator_params(bundle)
        fd_h = _fd_scan(bundle, w, x, y, named, step)
        fd_quarter = _fd_scan(bundle, w, x, y, named, step / 4.0)
        stable = all(
            _rel(float(a), float(b), rel_floor) < 1e-5
            for ga, gb in zip(fd_h, fd_quarter)
            for a, b in zip(ga.view(-1), gb.view(-1))
        )
        if stable or attempt == 7:
            break
        skipped += 1
        candidate_seed = candidate_seed + 9973

    n_parameters = sum(p.numel() for _, p in named)
    total = generator_objective(bundle, w, x, y)
    analytic = torch.autograd.grad(total, [p for _, p in named])

    worst = ("", 0.0)
    per_param: dict[str, float] = {}
    for (name, p), a, fd in zip(named, analytic, fd_h):
        a_flat, fd_flat = a.view(-1), fd.view(-1)
        err_max = 0.0
        for i in range(a_flat.numel()):
            rel = _rel(a_flat[i].item(), fd_flat[i].item(), rel_floor)
            err_max = max(err_max, rel)
        per_param[name] = err_max
        if err_max > worst[1]:
            worst = (name, err_max)
    return GradCheckReport(
        max_rel_error=worst[1],
        worst_param=worst[0],
        n_parameters=n_parameters,
        elapsed_seconds=time.time() - t0,
        candidates_skipped=skipped,
        per_param=per_param,
    )
