"""Generators, patch discriminators, and the pretrained feature extractor.

All networks operate on single-channel images in [-1, 1], NCHW layout on
the torch side.  Generators are residual translation networks with a
bounded (tanh) output; discriminators emit a spatial grid of per-patch
real/fake probabilities; the feature extractor is the encoder half of a
reconstruction autoencoder, trained once and then frozen.

Parameter initialization is driven by an explicit ``torch.Generator`` so a
seed fully determines every weight, independent of global RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import DomainDataset, ImageTensor
from .exceptions import FrozenViolation, ShapeError, TrainingDiverged

torch.set_num_threads(1)  # keep runs reproducible on any host


def to_torch(img: ImageTensor | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(b, h, w, 1) numpy image batch -> (b, 1, h, w) torch tensor."""
    a = np.asarray(getattr(img, "data", img), dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))).to(dtype)


def from_torch(t: torch.Tensor) -> ImageTensor:
    """(b, 1, h, w) torch tensor -> validated ImageTensor."""
    a = t.detach().cpu().to(torch.float32).numpy().transpose(0, 2, 3, 1)
    return ImageTensor(np.clip(a, -1.0, 1.0))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        # bias-free convs: instance norm cancels any bias anyway
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3, bias=False),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3, bias=False),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


POSITIONAL_PERIODS = (4, 8, 16, 32)  # pixels per cycle, dyadic octaves


def _periods_for(resolution: int) -> tuple[int, ...]:
    # octaves longer than the image carry no full cycle; drop them
    return tuple(p for p in POSITIONAL_PERIODS if p <= resolution)


def n_positional(resolution: int) -> int:
    return 2 + 4 * len(_periods_for(resolution))


def positional_features(resolution: int) -> torch.Tensor:
    """(1, n_positional(r), r, r) fixed positional input channels.

    Linear x/y ramps plus sin/cos octaves of the pixel coordinates.  A
    purely translation-equivariant stack cannot place structure at an
    absolute position (the target domain's fixed texture, for example);
    these channels make spatially anchored patterns expressible while the
    networks stay convolutional.
    """
    axis = torch.arange(resolution, dtype=torch.float32)
    vv, uu = torch.meshgrid(axis, axis, indexing="ij")
    half = (resolution - 1) / 2.0
    chans = [uu / half - 1.0, vv / half - 1.0]
    for period in _periods_for(resolution):
        w = 2.0 * np.pi / period
        chans += [torch.sin(w * uu), torch.cos(w * uu), torch.sin(w * vv), torch.cos(w * vv)]
    return torch.stack(chans)[None]


class ResidualGenerator(nn.Module):
    """Image-to-image residual generator with a tanh-bounded output.

    Encoder (strided convs) -> residual blocks -> decoder (nearest-neighbor
    upsampling + convs).  Instance normalization throughout; coordinate
    channels are appended to the input; output has the input's shape and
    lies in [-1, 1].
    """

    def __init__(
        self,
        input_resolution: int = 64,
        base_filters: int = 32,
        residual_blocks: int = 4,
        downsample_stages: int = 2,
        first_kernel: int = 7,
    ):
        super().__init__()
        self.input_resolution = input_resolution
        self.base_filters = base_filters
        self.residual_blocks = residual_blocks
        self.downsample_stages = downsample_stages
        self.first_kernel = first_kernel
        self.register_buffer("coords", positional_features(input_resolution))

        pad = first_kernel // 2
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(pad),
            nn.Conv2d(
                1 + n_positional(input_resolution), base_filters, first_kernel, bias=False
            ),
            nn.InstanceNorm2d(base_filters),
            nn.ReLU(inplace=True),
        ]
        ch = base_filters
        for _ in range(downsample_stages):
            layers += [
                nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(ch * 2),
                nn.ReLU(inplace=True),
            ]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(residual_blocks)]
        for _ in range(downsample_stages):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, padding=1, bias=False),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [
            nn.ReflectionPad2d(pad),
            nn.Conv2d(base_filters, 1, first_kernel),
            nn.Tanh(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        coords = self.coords.expand(x.shape[0], -1, -1, -1).to(x.dtype)
        return self.net(torch.cat([x, coords], dim=1))


class PatchDiscriminator(nn.Module):
    """Convolutional patch classifier emitting per-patch probabilities.

    ``strided_layers`` controls depth (and thereby patch size).  No
    normalization in the first stage; coordinate channels make each patch
    score position-aware; sigmoid output so adversarial values can be
    computed directly in probability space.
    """

    def __init__(
        self, base_filters: int = 32, strided_layers: int = 2, input_resolution: int = 64
    ):
        super().__init__()
        self.base_filters = base_filters
        self.strided_layers = strided_layers
        self.input_resolution = input_resolution
        self.register_buffer("coords", positional_features(input_resolution))
        ch = base_filters
        layers: list[nn.Module] = [
            nn.Conv2d(1 + n_positional(input_resolution), ch, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        ladder = [(4, 2)]
        for _ in range(strided_layers - 1):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch *= 2
            ladder.append((4, 2))
        layers += [
            nn.Conv2d(ch, ch * 2, 4, stride=1, padding=1, bias=False),
            nn.InstanceNorm2d(ch * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ch * 2, 1, 4, stride=1, padding=1),
            nn.Sigmoid(),
        ]
        ladder += [(4, 1), (4, 1)]
        self.net = nn.Sequential(*layers)
        rf, jump = 1, 1
        for k, s in ladder:
            rf += (k - 1) * jump
            jump *= s
        self.receptive_field = rf

    def forward(self, x):
        if x.shape[-1] != self.input_resolution:
            raise ShapeError(
                f"discriminator built for {self.input_resolution}, got {x.shape[-1]}"
            )
        coords = self.coords.expand(x.shape[0], -1, -1, -1).to(x.dtype)
        return self.net(torch.cat([x, coords], dim=1))


class FeatureEncoder(nn.Module):
    """Four-stage convolutional encoder whose post-activation maps define
    the perceptual feature space.

    ``forward`` returns all stage outputs (a feature stack).  Once frozen,
    parameters never change and repeated passes are bitwise identical.
    """

    STAGES = 4

    def __init__(self, base_filters: int = 16):
        super().__init__()
        self.base_filters = base_filters
        self.frozen = False
        stages = []
        ch = 1
        out = base_filters
        for _ in range(self.STAGES):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(ch, out, 3, stride=2, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
            ch, out = out, out * 2
        self.stages = nn.ModuleList(stages)

    @property
    def layer_count(self) -> int:
        return self.STAGES

    def layer_shapes(self, resolution: int) -> list[tuple[int, int, int]]:
        """(h_i, w_i, d_i) of each feature map for a given input size."""
        shapes = []
        h, d = resolution, self.base_filters
        for _ in range(self.STAGES):
            h = (h + 1) // 2
            shapes.append((h, h, d))
            d *= 2
        return shapes

    def forward(self, x) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def freeze(self) -> "FeatureEncoder":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self


class ReconstructionAutoencoder(nn.Module):
    """Encoder + mirror decoder used only to pretrain the feature extractor."""

    def __init__(self, encoder: FeatureEncoder):
        super().__init__()
        self.encoder = encoder
        ch = encoder.base_filters * 2 ** (encoder.STAGES - 1)
        layers: list[nn.Module] = []
        for _ in range(encoder.STAGES - 1):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, padding=1),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(ch, 1, 3, padding=1),
            nn.Tanh(),
        ]
        self.decoder = nn.Sequential(*layers)

    def forward(self, x):
        return self.decoder(self.encoder(x)[-1])


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02):
    """Gaussian(0, std) conv weights, zero biases, drawn from ``generator``."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=generator, dtype=torch.float32)
                    * std
                )
                if m.bias is not None:
                    m.bias.zero_()


@dataclass
class NetworkBundle:
    """The five networks of one translation run plus their descriptor."""

    g1: ResidualGenerator
    g2: ResidualGenerator
    d1: PatchDiscriminator
    d2: PatchDiscriminator
    extractor: FeatureEncoder | None
    descriptor: dict = field(default_factory=dict)

    def generator_parameters(self):
        yield from self.g1.parameters()
        yield from self.g2.parameters()

    def discriminator_parameters(self):
        yield from self.d1.parameters()
        yield from self.d2.parameters()


def build_networks(
    resolution: int = 64,
    base_filters: int = 32,
    residual_blocks: int = 4,
    disc_base_filters: int = 32,
    disc_strided_layers: int = 2,
    downsample_stages: int = 2,
    first_kernel: int = 7,
    seed: int = 0,
    extractor: FeatureEncoder | None = None,
    dtype: torch.dtype = torch.float32,
) -> NetworkBundle:
    """Construct and deterministically initialize G1, G2, D1, D2."""
    gen = torch.Generator().manual_seed(seed)

    def make_g():
        return ResidualGenerator(
            resolution, base_filters, residual_blocks, downsample_stages, first_kernel
        )

    def make_d():
        return PatchDiscriminator(disc_base_filters, disc_strided_layers, resolution)

    g1, g2 = make_g(), make_g()
    d1, d2 = make_d(), make_d()
    for net in (g1, g2, d1, d2):
        init_weights(net, gen)
        net.to(dtype)
    descriptor = {
        "resolution": resolution,
        "base_filters": base_filters,
        "residual_blocks": residual_blocks,
        "disc_base_filters": disc_base_filters,
        "disc_strided_layers": disc_strided_layers,
        "downsample_stages": downsample_stages,
        "first_kernel": first_kernel,
        "extractor_base_filters": extractor.base_filters if extractor else None,
    }
    return NetworkBundle(g1, g2, d1, d2, extractor, descriptor)


def generator_forward(g: ResidualGenerator, x: ImageTensor) -> ImageTensor:
    """Run a generator on an image batch; output keeps shape and range."""
    if x.resolution != g.input_resolution:
        raise ShapeError(
            f"input resolution {x.resolution} != generator's {g.input_resolution}"
        )
    with torch.no_grad():
        out = g(to_torch(x, dtype=next(g.parameters()).dtype))
    return from_torch(out)


SCORE_EPS = 1e-7


def discriminator_forward(d: PatchDiscriminator, img: ImageTensor) -> np.ndarray:
    """Per-patch real/fake probabilities, strictly inside (0, 1)."""
    with torch.no_grad():
        scores = d(to_torch(img, dtype=next(d.parameters()).dtype))
    a = scores.cpu().to(torch.float64).numpy()[:, 0]
    return np.clip(a, SCORE_EPS, 1.0 - SCORE_EPS)


def extract_features(f: FeatureEncoder, img, require_frozen: bool = True):
    """Feature stack for an image batch.

    Accepts an :class:`ImageTensor` (returns numpy maps, shape
    ``(b, h_i, w_i, d_i)``) or a torch NCHW tensor (returns torch maps so
    gradients can flow through the *input*; the extractor's own parameters
    never receive gradients once frozen).
    """
    if require_frozen and not f.frozen:
        raise FrozenViolation("feature extractor must be frozen")
    if isinstance(img, torch.Tensor):
        return f(img)
    with torch.no_grad():
        maps = f(to_torch(img, dtype=next(f.parameters()).dtype))
    return [m.cpu().numpy().transpose(0, 2, 3, 1) for m in maps]


def save_extractor(f: FeatureEncoder, path) -> None:
    """Persist a frozen extractor (tensors + manifest) under ``path``."""
    import json
    from pathlib import Path

    from .exceptions import CheckpointError

    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        tensors = {k: v.detach().cpu().numpy() for k, v in f.state_dict().items()}
        with open(out / "tensors.npz", "wb") as fh:
            np.savez(fh, **tensors)
        manifest = {
            "kind": "feature_extractor",
            "base_filters": f.base_filters,
            "layer_count": f.layer_count,
            "pretrain_stats": getattr(f, "pretrain_stats", None),
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise CheckpointError(f"cannot write extractor at {out}: {exc}") from exc


def load_extractor(path) -> FeatureEncoder:
    """Load a frozen extractor saved by :func:`save_extractor`."""
    import json
    from pathlib import Path

    from .exceptions import IncompatibleCheckpoint

    src = Path(path)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise IncompatibleCheckpoint(f"{src} is not an extractor directory")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "feature_extractor":
        raise IncompatibleCheckpoint(f"{src} does not hold a feature extractor")
    f = FeatureEncoder(manifest["base_filters"])
    with np.load(src / "tensors.npz") as archive:
        sd = f.state_dict()
        for name in sd:
            if name not in archive.files:
                raise IncompatibleCheckpoint(f"extractor tensor {name} missing")
            stored = archive[name]
            if tuple(stored.shape) != tuple(sd[name].shape):
                raise IncompatibleCheckpoint(
                    f"extractor tensor {name}: shape {stored.shape} != {tuple(sd[name].shape)}"
                )
            sd[name] = torch.from_numpy(stored.copy())
    f.load_state_dict(sd)
    if manifest.get("pretrain_stats"):
        f.pretrain_stats = manifest["pretrain_stats"]
    return f.freeze()


def pretrain_feature_extractor(
    corpus: DomainDataset,
    epochs: int,
    seed: int,
    base_filters: int = 16,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    holdout_fraction: float = 0.1,
) -> FeatureEncoder:
    """Train the encoder as half of a reconstruction autoencoder, freeze it.

    A held-out slice of the corpus measures reconstruction error before and
    after training; with ``epochs > 0`` the trained error must come out
    below the untrained one.  ``epochs == 0`` returns the initialized,
    frozen encoder unchanged.  Statistics end up in ``.pretrain_stats``.
    """
    if len(corpus) == 0:
        raise TrainingDiverged("pretraining corpus is empty")
    gen = torch.Generator().manual_seed(seed)
    encoder = FeatureEncoder(base_filters)
    ae = ReconstructionAutoencoder(encoder)
    init_weights(ae, gen)

    perm = np.random.default_rng(np.random.SeedSequence((seed, 3))).permutation(len(corpus))
    n_hold = max(1, int(round(holdout_fraction * len(corpus))))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        train_idx = hold_idx
    hold = to_torch(corpus.images[hold_idx])

    def holdout_loss() -> float:
        ae.eval()
        with torch.no_grad():
            loss = nn.functional.mse_loss(ae(hold), hold).item()
        ae.train()
        return loss

    initial = holdout_loss()
    if epochs > 0:
        opt = torch.optim.Adam(ae.parameters(), lr=learning_rate)
        batch_size = min(batch_size, len(train_idx))
        n_batches = max(1, len(train_idx) // batch_size)
        for epoch in range(epochs):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 4, epoch)))
            order = train_idx[rng.permutation(len(train_idx))]
            for b in range(n_batches):
                batch = to_torch(corpus.images[order[b * batch_size : (b + 1) * batch_size]])
                opt.zero_grad()
                loss = nn.functional.mse_loss(ae(batch), batch)
                if not torch.isfinite(loss):
                    raise TrainingDiverged("autoencoder reconstruction loss is not finite")
                loss.backward()
                opt.step()
    final = holdout_loss()
    if epochs > 0 and final >= initial:
        raise TrainingDiverged(
            f"pretraining failed to improve held-out reconstruction "
            f"({initial:.6f} -> {final:.6f})"
        )
    encoder.pretrain_stats = {
        "holdout_initial": initial,
        "holdout_final": final,
        "epochs": epochs,
    }
    return encoder.freeze()
