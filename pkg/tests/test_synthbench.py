import json

import numpy as np
import pytest
from PIL import Image

from cycletrans.data import group_key, load_dataset, split_paired
from cycletrans.exceptions import ConfigError, PairingMismatch
from cycletrans.synthbench import (
    SynthSpec,
    apply_transform,
    generate_corpus,
    oracle_pairs,
    render_shape_image,
    sample_name,
)


class TestApplyTransform:
    def test_constant_zero_inverts_to_one(self):
        spec = SynthSpec(transform="invert_blur")
        y = apply_transform(np.zeros((32, 32)), spec)
        assert np.allclose(y, 1.0)

    def test_constant_commutes_with_blur(self):
        for c in (0.2, 0.5, 0.9):
            for sigma in (0.5, 2.0, 4.0):
                spec = SynthSpec(transform="invert_blur", blur_sigma=sigma)
                y = apply_transform(np.full((32, 32), c), spec)
                assert np.allclose(y, 1.0 - c, atol=1e-12)

    def test_texture_adds_fixed_grid(self):
        base = SynthSpec(transform="invert_blur", texture_amplitude=0.15)
        with_tex = SynthSpec(transform="invert_blur_texture", texture_amplitude=0.15)
        x = np.full((64, 64), 0.5)
        delta = apply_transform(x, with_tex) - apply_transform(x, base)
        assert delta.max() == pytest.approx(0.15, abs=1e-6)
        assert delta.min() == pytest.approx(-0.15, abs=1e-6)

    def test_deterministic(self):
        spec = SynthSpec()
        x = render_shape_image(np.random.default_rng(5), 64)
        assert np.array_equal(apply_transform(x, spec), apply_transform(x, spec))


class TestSynthSpecValidation:
    def test_unknown_transform(self):
        with pytest.raises(ConfigError):
            SynthSpec(transform="sharpen")

    def test_too_small_resolution(self):
        with pytest.raises(ConfigError):
            SynthSpec(resolution=16)

    def test_too_few_images(self):
        with pytest.raises(ConfigError):
            SynthSpec(n_images=5)


class TestGenerateCorpus:
    def test_layout_and_counts(self, small_corpus):
        root, spec = small_corpus
        xs = sorted(p.name for p in (root / "X").glob("*.png"))
        ys = sorted(p.name for p in (root / "Y").glob("*.png"))
        assert len(xs) == spec.n_images
        assert xs == ys

    def test_round_robin_groups(self, small_corpus):
        root, spec = small_corpus
        names = sorted(p.stem for p in (root / "X").glob("*.png"))
        groups = {group_key(n) for n in names}
        assert len(groups) == 10
        assert sample_name(13).startswith("p03_")

    def test_double_generation_byte_identical(self, tmp_path):
        spec = SynthSpec(n_images=10, resolution=32, seed=11)
        a = generate_corpus(spec, tmp_path / "a")
        b = generate_corpus(spec, tmp_path / "b")
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_difficulty_stat_recorded_and_nontrivial(self, small_corpus):
        root, _ = small_corpus
        manifest = json.loads((root / "synth_manifest.json").read_text())
        assert manifest["mean_ssim_x_y"] < 0.5

    def test_quantization_bound(self):
        x = render_shape_image(np.random.default_rng(3), 32)
        u8 = np.clip(np.rint(x * 255), 0, 255) / 255.0
        assert np.abs(u8 - x).max() <= 1 / 255 / 2 + 1e-12

    def test_images_in_unit_range(self, small_corpus):
        root, spec = small_corpus
        ds = load_dataset(root / "Y", spec.resolution)
        assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0


class TestOraclePairs:
    def test_pairs_verified_bitwise(self, small_corpus):
        root, spec = small_corpus
        val = oracle_pairs(root, 0.2, seed=0)
        assert len(val) == spec.n_images * 0.2

    def test_disjoint_from_training(self, small_corpus):
        root, spec = small_corpus
        val = oracle_pairs(root, 0.2, seed=0)
        dx, dy, _ = split_paired(root, 0.2, 0, resolution=spec.resolution)
        assert not set(val.pair_ids) & set(dx.sample_ids)

    def test_detects_tampering(self, tmp_path):
        spec = SynthSpec(n_images=10, resolution=32, seed=2)
        root = generate_corpus(spec, tmp_path)
        val = oracle_pairs(root, 0.2, seed=0)
        victim = tmp_path / "Y" / f"{val.pair_ids[0]}.png"
        arr = np.asarray(Image.open(victim)).copy()
        arr[0, 0] = 255 - arr[0, 0]
        Image.fromarray(arr).save(victim)
        with pytest.raises(PairingMismatch):
            oracle_pairs(root, 0.2, seed=0)

    def test_requires_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            oracle_pairs(tmp_path)
