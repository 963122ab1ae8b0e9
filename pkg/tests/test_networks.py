import numpy as np
import pytest
import torch

from cycletrans.data import DomainDataset, ImageTensor
from cycletrans.exceptions import FrozenViolation, ShapeError, TrainingDiverged
from cycletrans.networks import (
    FeatureEncoder,
    PatchDiscriminator,
    build_networks,
    discriminator_forward,
    extract_features,
    generator_forward,
    init_weights,
    load_extractor,
    pretrain_feature_extractor,
    save_extractor,
    to_torch,
)

RES = 32


@pytest.fixture(scope="module")
def bundle():
    return build_networks(
        resolution=RES, base_filters=8, residual_blocks=2, disc_base_filters=8, seed=0
    )


def _images(rng, n=2, res=RES):
    return ImageTensor(rng.uniform(-1, 1, (n, res, res, 1)).astype(np.float32))


class TestGeneratorForward:
    def test_shape_preserved(self, bundle, rng):
        out = generator_forward(bundle.g1, _images(rng))
        assert out.data.shape == (2, RES, RES, 1)

    def test_output_bounded(self, bundle, rng):
        out = generator_forward(bundle.g1, _images(rng))
        assert np.abs(out.data).max() <= 1.0

    def test_batch_equals_concat_of_singles(self, bundle, rng):
        imgs = _images(rng, n=2)
        both = generator_forward(bundle.g1, imgs).data
        one = generator_forward(bundle.g1, ImageTensor(imgs.data[:1])).data
        two = generator_forward(bundle.g1, ImageTensor(imgs.data[1:])).data
        assert np.abs(both - np.concatenate([one, two])).max() < 1e-5

    def test_resolution_mismatch(self, bundle, rng):
        with pytest.raises(ShapeError):
            generator_forward(bundle.g1, _images(rng, res=16))

    def test_deterministic(self, bundle, rng):
        imgs = _images(rng)
        a = generator_forward(bundle.g1, imgs).data
        b = generator_forward(bundle.g1, imgs).data
        assert np.array_equal(a, b)

    def test_cycle_composition_shape(self, bundle, rng):
        imgs = _images(rng)
        rec = generator_forward(bundle.g2, generator_forward(bundle.g1, imgs))
        assert rec.data.shape == imgs.data.shape


class TestDiscriminator:
    def test_scores_strictly_inside_unit_interval(self, bundle, rng):
        scores = discriminator_forward(bundle.d1, _images(rng))
        assert scores.min() > 0.0 and scores.max() < 1.0

    def test_zero_final_layer_gives_half(self, rng):
        d = PatchDiscriminator(base_filters=4, input_resolution=RES)
        with torch.no_grad():
            final = d.net[-2]
            final.weight.zero_()
            final.bias.zero_()
        scores = discriminator_forward(d, _images(rng))
        assert np.allclose(scores, 0.5)

    def test_repeat_call_equality(self, bundle, rng):
        imgs = _images(rng)
        assert np.array_equal(
            discriminator_forward(bundle.d1, imgs), discriminator_forward(bundle.d1, imgs)
        )

    def test_receptive_field_reported(self, bundle):
        assert bundle.d1.receptive_field == 34

    def test_wrong_resolution_rejected(self, bundle, rng):
        with pytest.raises(ShapeError):
            discriminator_forward(bundle.d1, _images(rng, res=16))


class TestFeatureExtractor:
    def test_zero_image_finite(self, tiny_extractor):
        imgs = ImageTensor(np.zeros((1, 32, 32, 1), np.float32))
        maps = extract_features(tiny_extractor, imgs)
        assert all(np.isfinite(m).all() for m in maps)

    def test_layer_count(self, tiny_extractor, rng):
        maps = extract_features(tiny_extractor, _images(rng))
        assert len(maps) == tiny_extractor.layer_count == 4

    def test_declared_shapes(self, tiny_extractor, rng):
        maps = extract_features(tiny_extractor, _images(rng))
        declared = tiny_extractor.layer_shapes(RES)
        for m, (h, w, d) in zip(maps, declared):
            assert m.shape[1:] == (h, w, d)

    def test_spatial_dims_non_increasing(self, tiny_extractor):
        shapes = tiny_extractor.layer_shapes(RES)
        hs = [h for h, _, _ in shapes]
        assert all(a >= b for a, b in zip(hs, hs[1:]))

    def test_unfrozen_rejected(self, rng):
        with pytest.raises(FrozenViolation):
            extract_features(FeatureEncoder(4), _images(rng))

    def test_frozen_repeat_bitwise(self, tiny_extractor, rng):
        imgs = _images(rng)
        a = extract_features(tiny_extractor, imgs)
        b = extract_features(tiny_extractor, imgs)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_gradients_flow_to_input_not_params(self, tiny_extractor, rng):
        t = to_torch(_images(rng)).requires_grad_(True)
        maps = extract_features(tiny_extractor, t)
        sum(m.sum() for m in maps).backward()
        assert t.grad is not None and torch.isfinite(t.grad).all()
        assert all(not p.requires_grad for p in tiny_extractor.parameters())


class TestPretraining:
    def test_zero_epochs_returns_frozen_init(self, small_split):
        _, dy, _ = small_split
        f = pretrain_feature_extractor(dy, epochs=0, seed=0, base_filters=4)
        assert f.frozen
        assert f.pretrain_stats["holdout_final"] == f.pretrain_stats["holdout_initial"]

    def test_heldout_error_improves(self, tiny_extractor):
        stats = tiny_extractor.pretrain_stats
        assert stats["holdout_final"] < stats["holdout_initial"]

    def test_same_seed_identical_parameters(self, small_split):
        _, dy, _ = small_split
        a = pretrain_feature_extractor(dy, epochs=1, seed=9, base_filters=4)
        b = pretrain_feature_extractor(dy, epochs=1, seed=9, base_filters=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_empty_corpus_rejected(self):
        empty = DomainDataset("Y", np.zeros((0, 8, 8, 1), np.float32), ())
        with pytest.raises(TrainingDiverged):
            pretrain_feature_extractor(empty, epochs=1, seed=0)


class TestExtractorArchive:
    def test_round_trip(self, tiny_extractor, tmp_path, rng):
        save_extractor(tiny_extractor, tmp_path / "ext")
        loaded = load_extractor(tmp_path / "ext")
        assert loaded.frozen
        imgs = _images(rng)
        a = extract_features(tiny_extractor, imgs)
        b = extract_features(loaded, imgs)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_rejects_non_extractor_dir(self, tmp_path):
        from cycletrans.exceptions import IncompatibleCheckpoint

        with pytest.raises(IncompatibleCheckpoint):
            load_extractor(tmp_path)


class TestInit:
    def test_same_seed_same_bundle(self):
        a = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=3)
        b = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=3)
        for pa, pb in zip(a.g1.parameters(), b.g1.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=3)
        b = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=4)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.g1.parameters(), b.g1.parameters())
        )

    def test_init_ignores_global_rng(self):
        torch.manual_seed(111)
        a = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=3)
        torch.manual_seed(222)
        b = build_networks(resolution=RES, base_filters=4, residual_blocks=1, seed=3)
        for pa, pb in zip(a.g1.parameters(), b.g1.parameters()):
            assert torch.equal(pa, pb)
