"""Alternating generator/discriminator optimization with checkpointing.

One training step = one discriminator ascent step on the adversarial values
(D1 and D2 together), then one generator descent step on the full composite
objective (G1 and G2 together).  Runs are deterministic: a seed fixes the
network initialization and the batch stream, and checkpoints restore every
parameter, optimizer moment, and stream position losslessly.

Per-step loss breakdowns go to ``losses.csv`` and per-epoch validation
metrics to ``val_metrics.csv`` inside the run directory; checkpoints land
in ``<run_dir>/ckpt_<step>``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__ as _code_version
from .data import DomainDataset, ImageTensor, PairedValidationSet, steps_per_epoch, unpaired_batch_iterator
from .exceptions import (
    CheckpointError,
    ConfigError,
    FrozenViolation,
    IncompatibleCheckpoint,
    TrainingDiverged,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_value,
    combine_total,
    cycle_consistency_loss,
    cycle_perceptual_loss,
    cycle_style_loss,
    generator_adversarial_loss,
)
from .networks import FeatureEncoder, NetworkBundle, build_networks, to_torch

LOSS_CSV_HEADER = "step,adv_1,adv_2,cyc,cPercep,cStyle,total"
VAL_CSV_HEADER = "epoch,step,ssim,psnr_db,mse,uqi,vif,lpd"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one translation training run."""

    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    adv_mode: str = "non_saturating"
    checkpoint_every: int = 200
    resolution: int = 64
    base_filters: int = 32
    residual_blocks: int = 4
    disc_base_filters: int = 32
    validate_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adv_mode not in ("saturating", "non_saturating"):
            raise ConfigError(f"unknown adv_mode {self.adv_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        w = d.pop("weights")
        w["perceptual_layer_weights"] = list(w["perceptual_layer_weights"])
        w["style_layer_weights"] = list(w["style_layer_weights"])
        d["weights"] = w
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        w = d.pop("weights")
        weights = LossWeights(
            cycle_weight=w["cycle_weight"],
            perceptual_weight=w["perceptual_weight"],
            style_weight=w["style_weight"],
            perceptual_layer_weights=tuple(w["perceptual_layer_weights"]),
            style_layer_weights=tuple(w["style_layer_weights"]),
        )
        return TrainConfig(weights=weights, **d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainState:
    """Everything needed to continue a run from exactly where it stands."""

    step: int
    epoch: int
    batch_in_epoch: int
    bundle: NetworkBundle
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig


def _make_optimizers(bundle: NetworkBundle, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(
        itertools.chain(bundle.g1.parameters(), bundle.g2.parameters()),
        lr=cfg.learning_rate,
        betas=betas,
    )
    opt_d = torch.optim.Adam(
        itertools.chain(bundle.d1.parameters(), bundle.d2.parameters()),
        lr=cfg.learning_rate,
        betas=betas,
    )
    return opt_g, opt_d


def init_train_state(cfg: TrainConfig, extractor: FeatureEncoder | None) -> TrainState:
    bundle = build_networks(
        resolution=cfg.resolution,
        base_filters=cfg.base_filters,
        residual_blocks=cfg.residual_blocks,
        disc_base_filters=cfg.disc_base_filters,
        seed=cfg.seed,
        extractor=extractor,
    )
    opt_g, opt_d = _make_optimizers(bundle, cfg)
    return TrainState(0, 0, 0, bundle, opt_g, opt_d, cfg)


def _set_requires_grad(nets, flag: bool):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def train_step(
    state: TrainState, batch: tuple[ImageTensor, ImageTensor], cfg: TrainConfig
) -> tuple[TrainState, LossBreakdown]:
    """One discriminator ascent step, then one generator descent step.

    With both feature-loss weights at zero the extractor is never invoked
    and the perceptual/style terms are skipped entirely, reproducing the
    plain cycle-consistent baseline exactly.
    """
    w = cfg.weights
    b = state.bundle
    use_features = w.perceptual_weight > 0 or w.style_weight > 0
    if use_features:
        if b.extractor is None or not b.extractor.frozen:
            raise FrozenViolation(
                "feature-based cycle losses require a frozen feature extractor"
            )
    x = to_torch(batch[0])
    y = to_torch(batch[1])

    # translations (graph kept alive for the generator step below)
    fake_y = b.g1(x)
    fake_x = b.g2(y)

    # discriminator ascent on the adversarial values
    state.opt_d.zero_grad()
    d_value = adversarial_value(b.d1(y), b.d1(fake_y.detach())) + adversarial_value(
        b.d2(x), b.d2(fake_x.detach())
    )
    (-d_value).backward()
    state.opt_d.step()

    # generator descent against the updated discriminators
    _set_requires_grad((b.d1, b.d2), False)
    state.opt_g.zero_grad()
    rec_x = b.g2(fake_y)
    rec_y = b.g1(fake_x)
    adv_1 = generator_adversarial_loss(b.d1(fake_y), cfg.adv_mode)
    adv_2 = generator_adversarial_loss(b.d2(fake_x), cfg.adv_mode)
    cyc = cycle_consistency_loss(x, rec_x, y, rec_y)
    g_total = adv_1 + adv_2 + w.cycle_weight * cyc
    c_percep_val = 0.0
    c_style_val = 0.0
    if use_features:
        fx, fx_rec = b.extractor(x), b.extractor(rec_x)
        fy, fy_rec = b.extractor(y), b.extractor(rec_y)
        if w.perceptual_weight > 0:
            c_percep = cycle_perceptual_loss(fx, fx_rec, fy, fy_rec, w)
            g_total = g_total + w.perceptual_weight * c_percep
            c_percep_val = c_percep.item()
        if w.style_weight > 0:
            c_style = cycle_style_loss(fx, fx_rec, fy, fy_rec, w)
            g_total = g_total + w.style_weight * c_style
            c_style_val = c_style.item()
    g_total.backward()
    state.opt_g.step()
    _set_requires_grad((b.d1, b.d2), True)

    adv_1_val, adv_2_val, cyc_val = adv_1.item(), adv_2.item(), cyc.item()
    breakdown = LossBreakdown(
        adv_1=adv_1_val,
        adv_2=adv_2_val,
        cyc=cyc_val,
        cPercep=c_percep_val,
        cStyle=c_style_val,
        total=float(
            combine_total(adv_1_val, adv_2_val, cyc_val, c_percep_val, c_style_val, w)
        ),
    )
    if not all(np.isfinite(v) for v in breakdown.as_row()):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}", breakdown=breakdown
        )
    state.step += 1
    return state, breakdown


# --- checkpointing ----------------------------------------------------------

def _named_tensors(state: TrainState) -> dict[str, np.ndarray]:
    b = state.bundle
    out: dict[str, np.ndarray] = {}
    nets = {"g1": b.g1, "g2": b.g2, "d1": b.d1, "d2": b.d2}
    if b.extractor is not None:
        nets["extractor"] = b.extractor
    for prefix, net in nets.items():
        for name, p in net.state_dict().items():
            out[f"{prefix}.{name}"] = p.detach().cpu().numpy()
    for opt_name, opt, nets_pair in (
        ("opt_g", state.opt_g, (b.g1, b.g2)),
        ("opt_d", state.opt_d, (b.d1, b.d2)),
    ):
        named = _optimizer_param_names(nets_pair)
        for p, pname in named.items():
            if p in opt.state:
                s = opt.state[p]
                out[f"{opt_name}.{pname}.exp_avg"] = s["exp_avg"].cpu().numpy()
                out[f"{opt_name}.{pname}.exp_avg_sq"] = s["exp_avg_sq"].cpu().numpy()
                out[f"{opt_name}.{pname}.step"] = np.asarray(float(s["step"]))
    return out


def _optimizer_param_names(nets_pair) -> dict:
    """Stable parameter -> name map over a (first, second) network pair."""
    named = {}
    for idx, net in enumerate(nets_pair):
        for name, p in net.named_parameters():
            named[p] = f"{idx}.{name}"
    return named


def save_checkpoint(state: TrainState, path) -> Path:
    """Write a named-tensor archive plus manifest under ``path``."""
    ckpt = Path(path)
    try:
        ckpt.mkdir(parents=True, exist_ok=True)
        tensors = _named_tensors(state)
        with open(ckpt / "tensors.npz", "wb") as fh:
            np.savez(fh, **tensors)
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "architecture": state.bundle.descriptor,
            "shapes": {k: list(v.shape) for k, v in tensors.items()},
            "step": state.step,
            "epoch": state.epoch,
            "batch_in_epoch": state.batch_in_epoch,
            "seed": state.config.seed,
            "config": state.config.to_dict(),
            "config_hash": state.config.hash(),
            "code_version": _code_version,
            "has_extractor": state.bundle.extractor is not None,
        }
        with open(ckpt / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint at {ckpt}: {exc}") from exc
    return ckpt


def load_checkpoint(path, cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState from disk, verifying shape compatibility.

    When ``cfg`` is given, its architecture-determining fields must match
    the stored manifest; otherwise the stored config is used as-is.
    """
    ckpt = Path(path)
    manifest_path = ckpt / "manifest.json"
    tensors_path = ckpt / "tensors.npz"
    if not manifest_path.exists() or not tensors_path.exists():
        raise IncompatibleCheckpoint(f"{ckpt} is not a checkpoint directory")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise IncompatibleCheckpoint(f"unsupported checkpoint format {manifest.get('format')}")
    stored_cfg = TrainConfig.from_dict(manifest["config"])
    if cfg is not None:
        for key in ("resolution", "base_filters", "residual_blocks", "disc_base_filters"):
            if getattr(cfg, key) != getattr(stored_cfg, key):
                raise IncompatibleCheckpoint(
                    f"config {key}={getattr(cfg, key)} does not match "
                    f"checkpoint {key}={getattr(stored_cfg, key)}"
                )
        effective = cfg
    else:
        effective = stored_cfg

    arch = manifest["architecture"]
    extractor = None
    if manifest.get("has_extractor"):
        extractor = FeatureEncoder(arch["extractor_base_filters"]).freeze()
    bundle = build_networks(
        resolution=arch["resolution"],
        base_filters=arch["base_filters"],
        residual_blocks=arch["residual_blocks"],
        disc_base_filters=arch["disc_base_filters"],
        disc_strided_layers=arch.get("disc_strided_layers", 2),
        downsample_stages=arch["downsample_stages"],
        first_kernel=arch["first_kernel"],
        seed=manifest["seed"],
        extractor=extractor,
    )
    state = TrainState(
        step=manifest["step"],
        epoch=manifest["epoch"],
        batch_in_epoch=manifest["batch_in_epoch"],
        bundle=bundle,
        opt_g=None,
        opt_d=None,
        config=effective,
    )
    state.opt_g, state.opt_d = _make_optimizers(bundle, effective)

    with np.load(tensors_path) as archive:
        tensors = {k: archive[k] for k in archive.files}
    nets = {"g1": bundle.g1, "g2": bundle.g2, "d1": bundle.d1, "d2": bundle.d2}
    if extractor is not None:
        nets["extractor"] = extractor
    for prefix, net in nets.items():
        sd = net.state_dict()
        for name, current in sd.items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise IncompatibleCheckpoint(f"checkpoint missing tensor {key}")
            stored = tensors[key]
            if tuple(stored.shape) != tuple(current.shape):
                raise IncompatibleCheckpoint(
                    f"{key}: shape {stored.shape} != expected {tuple(current.shape)}"
                )
            sd[name] = torch.from_numpy(stored.copy())
        net.load_state_dict(sd)
    if extractor is not None:
        extractor.freeze()

    for opt_name, opt, nets_pair in (
        ("opt_g", state.opt_g, (bundle.g1, bundle.g2)),
        ("opt_d", state.opt_d, (bundle.d1, bundle.d2)),
    ):
        named = _optimizer_param_names(nets_pair)
        for p, pname in named.items():
            key = f"{opt_name}.{pname}"
            if f"{key}.exp_avg" in tensors:
                opt.state[p] = {
                    "step": torch.tensor(float(tensors[f"{key}.step"])),
                    "exp_avg": torch.from_numpy(tensors[f"{key}.exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(tensors[f"{key}.exp_avg_sq"].copy()),
                }
    return state


# --- full runs ---------------------------------------------------------------

def _append_csv(path: Path, header: str, row: str):
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(header + "\n")
        fh.write(row + "\n")


def train(
    cfg: TrainConfig,
    dx: DomainDataset,
    dy: DomainDataset,
    f: FeatureEncoder | None,
    val: PairedValidationSet,
    run_dir,
    model_name: str = "model",
    resume_state: TrainState | None = None,
    manifest_extra: dict | None = None,
) -> TrainState:
    """Run ``cfg.epochs`` over the unpaired domains, logging and checkpointing.

    ``resume_state`` (from :func:`load_checkpoint`) continues an interrupted
    run mid-stream.  Returns the final state after writing a last checkpoint.
    """
    from .metrics import evaluate_on_validation

    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    losses_csv = run / "losses.csv"
    val_csv = run / "val_metrics.csv"

    state = resume_state if resume_state is not None else init_train_state(cfg, f)
    if state.bundle.extractor is None and f is not None:
        state.bundle.extractor = f
    spe = steps_per_epoch(dx, dy, cfg.batch_size)
    if spe < 1:
        raise ConfigError("batch_size larger than one epoch's worth of data")
    _write_run_manifest(run, cfg, manifest_extra)

    batches = unpaired_batch_iterator(
        dx, dy, cfg.batch_size, cfg.seed, start_epoch=state.epoch, start_batch=state.batch_in_epoch
    )
    last_breakdown = None
    while state.epoch < cfg.epochs:
        batch = next(batches)
        try:
            state, breakdown = train_step(state, batch, cfg)
        except TrainingDiverged:
            if last_breakdown is not None:
                _append_csv(
                    losses_csv,
                    LOSS_CSV_HEADER,
                    f"{state.step}," + ",".join(f"{v:.8f}" for v in last_breakdown.as_row()),
                )
            raise
        last_breakdown = breakdown
        _append_csv(
            losses_csv,
            LOSS_CSV_HEADER,
            f"{state.step}," + ",".join(f"{v:.8f}" for v in breakdown.as_row()),
        )
        state.batch_in_epoch += 1
        if state.batch_in_epoch >= spe:
            state.batch_in_epoch = 0
            state.epoch += 1
            if val is not None and (
                state.epoch % cfg.validate_every == 0 or state.epoch == cfg.epochs
            ):
                report = evaluate_on_validation(
                    state.bundle.g1, val, state.bundle.extractor, model_name
                )
                row = [str(state.epoch), str(state.step)]
                for col in ("ssim", "psnr_db", "mse", "uqi", "vif", "lpd"):
                    try:
                        row.append(f"{report.value(model_name, col):.6f}")
                    except KeyError:
                        row.append("")
                _append_csv(val_csv, VAL_CSV_HEADER, ",".join(row))
        if cfg.checkpoint_every > 0 and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(state, run / f"ckpt_{state.step}")
    save_checkpoint(state, run / f"ckpt_{state.step}")
    return state


def _write_run_manifest(run: Path, cfg: TrainConfig, extra: dict | None):
    from .config import serialize_manifest

    (run / "run_manifest").write_text(serialize_manifest(cfg, extra or {}))
