"""Encoder/decoder architecture contracts."""

import numpy as np
import pytest

from focusfuse.autodiff import Tensor
from focusfuse.errors import ShapeError
from focusfuse.network import (CANONICAL_ENTRIES, NetworkParams, decoder_forward,
                               encoder_forward, init_params, validate_shape_chain)


def zero_bias_params(seed=0):
    """Random kernels, zero biases (init_params already zeroes biases)."""
    return init_params(seed)


class TestParams:
    def test_canonical_entry_count(self):
        assert len(CANONICAL_ENTRIES) == 20
        assert CANONICAL_ENTRIES[0] == "c1.w"
        assert CANONICAL_ENTRIES[-1] == "c5.b"

    def test_named_round_trip(self):
        params = init_params(3)
        rebuilt = NetworkParams.from_named(params.named(), params.metadata)
        for name, tensor in params.named().items():
            assert np.array_equal(tensor.data, rebuilt.named()[name].data)

    def test_shape_chain_accepts_default_plan(self):
        plan = validate_shape_chain(init_params(0).named())
        assert plan["dense_widths"] == [16, 16, 16, 16]
        assert plan["squeeze"] == 4

    def test_shape_chain_rejects_broken_plan(self):
        named = dict(init_params(0).named())
        named["dc2.w"] = Tensor(np.zeros((16, 24, 3, 3)), name="dc2.w")
        with pytest.raises(ShapeError):
            validate_shape_chain(named)

    def test_init_deterministic(self):
        a = init_params(5).named()
        b = init_params(5).named()
        for name in a:
            assert np.array_equal(a[name].data, b[name].data)


class TestEncoder:
    @pytest.mark.parametrize("h,w", [(16, 16), (15, 17), (12, 20)])
    def test_output_shape(self, small_params, h, w, rng):
        img = Tensor(rng.random((1, 1, h, w)).astype(np.float32))
        feats = encoder_forward(small_params.encoder, img)
        assert feats.shape == (1, 64, h, w)

    def test_zero_image_zero_biases_gives_zero_features(self, small_params):
        img = Tensor(np.zeros((1, 1, 12, 12)))
        feats = encoder_forward(small_params.encoder, img)
        assert np.array_equal(feats.data, np.zeros_like(feats.data))

    def test_rejects_multichannel(self, small_params):
        with pytest.raises(ShapeError):
            encoder_forward(small_params.encoder, Tensor(np.zeros((1, 3, 8, 8))))

    def test_gate_strictly_inside_unit_interval(self, small_params, rng):
        # the gate rescales channels; if any channel of a positive input can
        # reach 0 or 1 exactly the sigmoid saturated, which must not happen
        img = Tensor(rng.random((1, 1, 16, 16)).astype(np.float32))
        feats = encoder_forward(small_params.encoder, img)
        from focusfuse import autodiff as ad
        from focusfuse.network import encode
        # recompute the pre-gate dense stack to recover the applied gate
        p = small_params.encoder
        x1 = ad.relu(ad.conv2d(img, p.c1_w, p.c1_b))
        x2 = ad.relu(ad.conv2d(x1, p.dc1_w, p.dc1_b))
        cat12 = ad.channel_concat(x1, x2)
        x3 = ad.relu(ad.conv2d(cat12, p.dc2_w, p.dc2_b))
        cat123 = ad.channel_concat(cat12, x3)
        x4 = ad.relu(ad.conv2d(cat123, p.dc3_w, p.dc3_b))
        dense = ad.channel_concat(cat123, x4)
        pooled = ad.global_avg_pool(dense)
        squeezed = ad.relu(ad.conv2d(pooled, p.se_reduce_w, p.se_reduce_b))
        gate = ad.sigmoid(ad.conv2d(squeezed, p.se_expand_w, p.se_expand_b))
        assert gate.shape == (1, 64, 1, 1)
        assert (gate.data > 0.0).all() and (gate.data < 1.0).all()
        assert np.allclose(feats.data, dense.data * gate.data, atol=1e-6)

    def test_flip_equivariance_with_symmetric_kernels(self, rng):
        # convolution commutes with horizontal flips only for kernels that
        # are themselves flip-symmetric, so symmetrize a random draw
        named = {}
        for name, tensor in init_params(21).named().items():
            arr = tensor.data
            if name.endswith(".w") and arr.shape[2] == 3:
                arr = 0.5 * (arr + arr[:, :, :, ::-1])
            named[name] = Tensor(arr, name=name)
        params = NetworkParams.from_named(named, {})
        img = rng.random((1, 1, 14, 18)).astype(np.float32)
        feats = encoder_forward(params.encoder, Tensor(img)).data
        feats_flipped = encoder_forward(params.encoder,
                                        Tensor(img[:, :, :, ::-1])).data
        # interior must match exactly; the border ring may differ
        flipped_ref = feats[:, :, :, ::-1]
        assert np.allclose(feats_flipped[:, :, 1:-1, 1:-1],
                           flipped_ref[:, :, 1:-1, 1:-1], atol=2e-6)


class TestDecoder:
    def test_output_shape(self, small_params, rng):
        feats = Tensor(rng.random((1, 64, 9, 13)).astype(np.float32))
        out = decoder_forward(small_params.decoder, feats)
        assert out.shape == (1, 1, 9, 13)

    def test_zero_features_zero_biases_gives_zero_image(self):
        # explicit all-zero biases: the default init starts the output bias
        # at mid gray instead
        named = {}
        for name, tensor in init_params(0).named().items():
            arr = np.zeros_like(tensor.data) if name.endswith(".b") else tensor.data
            named[name] = Tensor(arr, name=name)
        params = NetworkParams.from_named(named, {})
        feats = Tensor(np.zeros((1, 64, 8, 8)))
        out = decoder_forward(params.decoder, feats)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_rejects_wrong_channel_count(self, small_params):
        with pytest.raises(ShapeError):
            decoder_forward(small_params.decoder, Tensor(np.zeros((1, 32, 8, 8))))

    def test_not_clamped(self, rng):
        # the decoder output feeds the loss unclamped; force a negative output
        params = init_params(2)
        feats = Tensor(rng.random((1, 64, 12, 12)).astype(np.float32) * 5.0)
        out = decoder_forward(params.decoder, feats)
        assert out.data.min() < 0.0 or out.data.max() > 1.0
