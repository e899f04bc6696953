"""Synthetic defocus pairs and texture generation."""

import numpy as np
import pytest

from focusfuse.errors import DataError
from focusfuse.synth import (GEOMETRIES, SynthSpec, gaussian_blur, gaussian_taps,
                             make_texture, make_training_corpus, synth_pair,
                             synth_stack)

from reference import gaussian_blur_naive


class TestGaussianKernel:
    def test_taps_sum_to_one(self):
        for sigma in (0.5, 1.0, 2.0, 3.5):
            assert gaussian_taps(sigma).sum() == pytest.approx(1.0, abs=1e-6)

    def test_truncated_at_three_sigma(self):
        assert len(gaussian_taps(2.0)) == 2 * 6 + 1

    def test_blur_matches_dense_reference(self, rng):
        img = rng.random((10, 12))
        for sigma in (0.8, 1.5):
            fast = gaussian_blur(img, sigma)
            ref = gaussian_blur_naive(img, sigma)
            assert np.abs(fast - ref).max() < 1e-6

    def test_blur_preserves_constants(self):
        img = np.full((9, 9), 0.37)
        assert np.allclose(gaussian_blur(img, 2.0), 0.37, atol=1e-6)


class TestSynthPair:
    def test_near_delta_blur_changes_nothing(self, rng):
        source = make_texture(32, rng)
        img_a, img_b, truth, _ = synth_pair(SynthSpec(source, 0.1, "vertical-half"))
        assert np.abs(img_a - source).max() <= 1.0 / 255.0
        assert np.abs(img_b - source).max() <= 1.0 / 255.0

    def test_vertical_half_keeps_right_half_sharp(self, rng):
        source = make_texture(32, rng)
        img_a, img_b, truth, mask = synth_pair(SynthSpec(source, 3.0, "vertical-half"))
        w = source.shape[1]
        assert np.array_equal(img_a[:, w // 2:], source[:, w // 2:])
        assert np.array_equal(img_b[:, :w // 2], source[:, :w // 2])
        assert np.array_equal(truth, source)
        assert (mask[:, w // 2:] == 1.0).all() and (mask[:, :w // 2] == 0.0).all()

    def test_masks_complementary(self, rng):
        source = make_texture(40, rng)
        for geometry in GEOMETRIES:
            img_a, img_b, _, mask = synth_pair(SynthSpec(source, 2.0, geometry))
            sharp_a = mask > 0.5
            assert np.array_equal(img_a[sharp_a], source[sharp_a])
            assert np.array_equal(img_b[~sharp_a], source[~sharp_a])
            assert sharp_a.any() and (~sharp_a).any()

    def test_source_too_small_rejected(self, rng):
        with pytest.raises(DataError):
            synth_pair(SynthSpec(make_texture(16, rng), 5.0, "circle"))

    def test_bad_parameters_rejected(self, rng):
        source = make_texture(32, rng)
        with pytest.raises(ValueError):
            SynthSpec(source, -1.0, "circle")
        with pytest.raises(ValueError):
            SynthSpec(source, 2.0, "diagonal")

    def test_circle_seed_moves_center(self, rng):
        source = make_texture(64, rng)
        _, _, _, mask_a = synth_pair(SynthSpec(source, 2.0, "circle", seed=1))
        _, _, _, mask_b = synth_pair(SynthSpec(source, 2.0, "circle", seed=2))
        assert not np.array_equal(mask_a, mask_b)


class TestSynthStack:
    def test_each_band_sharp_in_one_image(self, rng):
        source = make_texture(48, rng)
        images = synth_stack(source, 2.0, parts=3)
        assert len(images) == 3
        w = source.shape[1]
        assert np.array_equal(images[0][:, :w // 3], source[:, :w // 3])
        assert np.array_equal(images[2][:, 2 * w // 3:], source[:, 2 * w // 3:])

    def test_needs_two_bands(self, rng):
        with pytest.raises(ValueError):
            synth_stack(make_texture(32, rng), 2.0, parts=1)


class TestTextureCorpus:
    def test_range_and_determinism(self):
        a = make_training_corpus(5, 32, seed=7)
        b = make_training_corpus(5, 32, seed=7)
        assert len(a) == 5
        for img_a, img_b in zip(a, b):
            assert np.array_equal(img_a, img_b)
            assert img_a.min() >= 0.0 and img_a.max() <= 1.0
            assert img_a.shape == (32, 32)

    def test_textures_are_not_flat_anywhere(self):
        # local sharpness must be measurable everywhere: every 8x8 block
        # carries some variation
        for img in make_training_corpus(3, 64, seed=1):
            blocks = img.reshape(8, 8, 8, 8).std(axis=(1, 3))
            assert blocks.min() > 1e-3
