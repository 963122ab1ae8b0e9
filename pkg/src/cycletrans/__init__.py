"""cycletrans: unpaired image-to-image translation with cycle-consistent
adversarial training, feature-based cycle losses, and a full-reference
image quality metric suite."""

__version__ = "0.1.0"

from .data import (
    DomainDataset,
    ImageTensor,
    PairedValidationSet,
    load_dataset,
    split_paired,
    unpaired_batch_iterator,
)
from .losses import (
    GramMatrix,
    LossBreakdown,
    LossWeights,
    adversarial_value,
    cycle_consistency_loss,
    cycle_perceptual_loss,
    cycle_style_loss,
    generator_adversarial_loss,
    gram_matrix,
    total_objective,
)
from .metrics import (
    MetricReport,
    evaluate_on_validation,
    learned_perceptual_distance,
    mse,
    psnr,
    ssim,
    uqi,
    vif,
)
from .networks import (
    FeatureEncoder,
    NetworkBundle,
    PatchDiscriminator,
    ResidualGenerator,
    build_networks,
    discriminator_forward,
    extract_features,
    generator_forward,
    pretrain_feature_extractor,
)
from .synthbench import SynthSpec, apply_transform, generate_corpus, oracle_pairs
from .training import (
    TrainConfig,
    TrainState,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)

__all__ = [
    "DomainDataset",
    "FeatureEncoder",
    "GramMatrix",
    "ImageTensor",
    "LossBreakdown",
    "LossWeights",
    "MetricReport",
    "NetworkBundle",
    "PairedValidationSet",
    "PatchDiscriminator",
    "ResidualGenerator",
    "SynthSpec",
    "TrainConfig",
    "TrainState",
    "adversarial_value",
    "apply_transform",
    "build_networks",
    "cycle_consistency_loss",
    "cycle_perceptual_loss",
    "cycle_style_loss",
    "discriminator_forward",
    "evaluate_on_validation",
    "extract_features",
    "generate_corpus",
    "generator_adversarial_loss",
    "generator_forward",
    "gram_matrix",
    "learned_perceptual_distance",
    "load_checkpoint",
    "load_dataset",
    "mse",
    "oracle_pairs",
    "pretrain_feature_extractor",
    "psnr",
    "save_checkpoint",
    "split_paired",
    "ssim",
    "total_objective",
    "train",
    "train_step",
    "unpaired_batch_iterator",
    "uqi",
    "vif",
]
