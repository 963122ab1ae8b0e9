import numpy as np
import pytest

from cycletrans.data import split_paired
from cycletrans.networks import pretrain_feature_extractor
from cycletrans.synthbench import SynthSpec, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """20-image paired corpus at the minimum resolution, default transform."""
    root = tmp_path_factory.mktemp("corpus_small")
    spec = SynthSpec(n_images=20, resolution=32, seed=3)
    generate_corpus(spec, root)
    return root, spec


@pytest.fixture(scope="session")
def small_split(small_corpus):
    root, spec = small_corpus
    return split_paired(root, 0.2, 0, resolution=spec.resolution)


@pytest.fixture(scope="session")
def tiny_extractor(small_split):
    """Frozen extractor pretrained briefly on the small corpus' Y domain."""
    _, dy, _ = small_split
    return pretrain_feature_extractor(dy, epochs=2, seed=0, base_filters=4)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
