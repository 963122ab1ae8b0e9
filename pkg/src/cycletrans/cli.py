"""Command-line entry point.

Commands
--------
synth               generate a synthetic two-domain corpus
pretrain-extractor  train + freeze the feature extractor on domain Y
train               run unpaired translation training
translate           apply a trained generator to a folder of images
evaluate            score a checkpoint against withheld ground-truth pairs
report              merge several runs' metric CSVs into one table
check-grads         finite-difference verification of the objective's gradients

Configuration precedence: built-in defaults, then ``--config FILE``
(flat ``key = value`` lines, ``#`` comments), then explicit flags.  The
effective configuration of a training run is written to
``<run_dir>/run_manifest`` and can be fed back via ``--config``.

Group key for train/validation splitting is the filename prefix before the
first underscore (a stand-in for subject-level splits).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config, serialize_run_config
from .exceptions import ConfigError, CycleTransError
from .gradcheck import REL_TOLERANCE, finite_difference_check


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="key=value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument(
        "--variant",
        choices=("cycle_gan", "cycle_medgan"),
        help="cycle_gan disables the perceptual/style terms",
    )
    p.add_argument("--resolution", type=int, help="working image resolution")
    p.add_argument("--run-dir", dest="run_dir", help="output directory of the run")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cycletrans",
        description="Unpaired image translation with cycle-consistent "
        "adversarial training and feature-based cycle losses.",
        epilog="Flags override --config values, which override defaults.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired corpus")
    _add_common(p)
    p.add_argument("--data-root", dest="data_root", help="corpus output directory")
    p.add_argument("--n-images", dest="n_images", type=int)
    p.add_argument("--transform", choices=("invert_blur", "invert_blur_texture"))

    p = sub.add_parser("pretrain-extractor", help="pretrain + freeze the feature extractor")
    _add_common(p)
    p.add_argument("--data-root", dest="data_root", help="paired corpus root")
    p.add_argument("--extractor", help="output directory for the frozen extractor")
    p.add_argument("--extractor-epochs", dest="extractor_epochs", type=int)

    p = sub.add_parser("train", help="train the translation networks")
    _add_common(p)
    p.add_argument("--data-root", dest="data_root", help="paired corpus root")
    p.add_argument("--extractor", help="pretrained extractor directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = sub.add_parser("translate", help="translate a folder of PNGs with G1")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    p.add_argument(
        "--grid",
        action="store_true",
        help="also write side-by-side input|output panels",
    )

    p = sub.add_parser("evaluate", help="score a checkpoint on withheld pairs")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("paired_root", help="directory with X/ and Y/ subfolders")
    p.add_argument("--out", help="metrics CSV path (default: <ckpt>/../eval_metrics.csv)")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.2)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--model-name", dest="model_name", help="row label in the CSV")

    p = sub.add_parser("report", help="merge runs' metric CSVs into one table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report.csv")

    p = sub.add_parser("check-grads", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    return ap


def _overrides(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _config_from_args(args, extra_keys=()) -> RunConfig:
    keys = ("seed", "variant", "resolution", "run_dir", "data_root") + tuple(extra_keys)
    return load_run_config(args.config, _overrides(args, keys))


def cmd_synth(args) -> int:
    from .synthbench import generate_corpus

    cfg = _config_from_args(args, ("n_images", "transform"))
    if not cfg.data_root:
        raise ConfigError("synth needs --data-root (corpus output directory)")
    root = generate_corpus(cfg.synth_spec(), cfg.data_root)
    print(f"corpus written to {root}")
    return 0


def cmd_pretrain_extractor(args) -> int:
    from .data import split_paired
    from .networks import pretrain_feature_extractor, save_extractor

    cfg = _config_from_args(args, ("extractor", "extractor_epochs"))
    if not cfg.data_root:
        raise ConfigError("pretrain-extractor needs --data-root")
    if not cfg.extractor:
        raise ConfigError("pretrain-extractor needs --extractor (output directory)")
    _, dy, _ = split_paired(
        cfg.data_root, cfg.val_fraction, cfg.split_seed, resolution=cfg.resolution
    )
    enc = pretrain_feature_extractor(
        dy, epochs=cfg.extractor_epochs, seed=cfg.seed,
        base_filters=cfg.extractor_base_filters,
    )
    save_extractor(enc, cfg.extractor)
    stats = enc.pretrain_stats
    print(
        f"extractor written to {cfg.extractor} "
        f"(held-out reconstruction {stats['holdout_initial']:.4f} -> "
        f"{stats['holdout_final']:.4f})"
    )
    return 0


def cmd_train(args) -> int:
    from .data import split_paired
    from .networks import load_extractor
    from .training import train

    cfg = _config_from_args(args, ("extractor", "epochs", "batch_size"))
    if not cfg.data_root:
        raise ConfigError("train needs --data-root")
    if not cfg.run_dir:
        raise ConfigError("train needs --run-dir")
    extractor = None
    if cfg.extractor:
        extractor = load_extractor(cfg.extractor)
    elif cfg.variant == "cycle_medgan":
        raise ConfigError("variant cycle_medgan requires a pretrained --extractor")
    dx, dy, val = split_paired(
        cfg.data_root, cfg.val_fraction, cfg.split_seed, resolution=cfg.resolution
    )
    state = train(
        cfg.train_config(),
        dx,
        dy,
        extractor,
        val,
        cfg.run_dir,
        model_name=cfg.variant,
        manifest_extra=_manifest_extra(cfg),
    )
    print(f"finished at step {state.step}; outputs under {cfg.run_dir}")
    return 0


def _manifest_extra(cfg: RunConfig) -> dict:
    return {
        "variant": cfg.variant,
        "data_root": cfg.data_root,
        "run_dir": cfg.run_dir,
        "extractor": cfg.extractor,
        "val_fraction": cfg.val_fraction,
        "split_seed": cfg.split_seed,
        "extractor_epochs": cfg.extractor_epochs,
        "extractor_base_filters": cfg.extractor_base_filters,
        "n_images": cfg.n_images,
        "transform": cfg.transform,
        "blur_sigma": cfg.blur_sigma,
        "texture_amplitude": cfg.texture_amplitude,
    }


def cmd_translate(args) -> int:
    from PIL import Image

    from .data import denormalize_u8, load_dataset
    from .networks import generator_forward
    from .training import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    resolution = state.bundle.g1.input_resolution
    ds = load_dataset(args.input_dir, resolution)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    translated = generator_forward(state.bundle.g1, ds.batch(range(len(ds))))
    for i, sample_id in enumerate(ds.sample_ids):
        out8 = denormalize_u8(translated.data[i, :, :, 0])
        Image.fromarray(out8).save(out_dir / f"{sample_id}.png")
        if args.grid:
            in8 = denormalize_u8(ds.images[i, :, :, 0])
            panel = np.concatenate([in8, np.full((resolution, 2), 255, np.uint8), out8], axis=1)
            Image.fromarray(panel).save(out_dir / f"{sample_id}_panel.png")
    print(f"translated {len(ds)} images into {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    from .data import split_paired
    from .metrics import evaluate_on_validation
    from .training import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    resolution = state.bundle.g1.input_resolution
    _, _, val = split_paired(
        args.paired_root, args.val_fraction, args.split_seed, resolution=resolution
    )
    model_name = args.model_name or _model_name_for(Path(args.checkpoint))
    report = evaluate_on_validation(state.bundle.g1, val, state.bundle.extractor, model_name)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_metrics.csv"
    report.write_csv(out)
    values = "  ".join(f"{k}={v:.4f}" for _, k, v in report.rows)
    print(f"{model_name}: {values}")
    print(f"metrics written to {out}")
    return 0


def _model_name_for(checkpoint: Path) -> str:
    manifest = checkpoint.parent / "run_manifest"
    if manifest.exists():
        for line in manifest.read_text().splitlines():
            if line.strip().startswith("variant"):
                return line.split("=", 1)[1].strip()
    return checkpoint.parent.name or "model"


def cmd_report(args) -> int:
    from .metrics import METRIC_COLUMNS

    rows = []
    for run_dir in args.run_dirs:
        csv_path = Path(run_dir) / "eval_metrics.csv"
        if not csv_path.exists():
            raise ConfigError(f"{run_dir} has no eval_metrics.csv (run `evaluate` first)")
        with open(csv_path, newline="") as fh:
            for record in csv.DictReader(fh):
                rows.append(record)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["model", *METRIC_COLUMNS])
        writer.writeheader()
        for record in rows:
            writer.writerow(record)
    width = max(len(r["model"]) for r in rows) + 2
    print("model".ljust(width) + "  ".join(c.rjust(9) for c in METRIC_COLUMNS))
    for r in rows:
        print(
            r["model"].ljust(width)
            + "  ".join((r.get(c) or "").rjust(9) for c in METRIC_COLUMNS)
        )
    print(f"report written to {out}")
    return 0


def cmd_check_grads(args) -> int:
    report = finite_difference_check(seed=args.seed)
    status = "PASS" if report.passed else "FAIL"
    print(
        f"{status}: max relative gradient error {report.max_rel_error:.3e} "
        f"(tolerance {REL_TOLERANCE:.0e}) over {report.n_parameters} generator "
        f"parameters in {report.elapsed_seconds:.1f}s"
    )
    if not report.passed:
        print(f"worst parameter: {report.worst_param}")
        return 1
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain-extractor": cmd_pretrain_extractor,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "check-grads": cmd_check_grads,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CycleTransError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
