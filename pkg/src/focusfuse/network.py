"""Encoder/decoder network definition and forward passes.

The encoder is one 3x3 conv followed by a densely connected block of three
3x3 convs (every layer sees the concatenation of all earlier outputs) and a
channel-attention gate: global average pool, a bottleneck pair of 1x1 convs,
and a sigmoid whose output rescales the 64 feature channels. The decoder is
four 3x3 convs back down to a single channel. All hidden layers use ReLU;
the final decoder layer is linear. There is no pooling or striding, so
feature maps keep the input's spatial size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ShapeError

# (in_channels, out_channels) for every layer; dense-block inputs grow by 16
# per layer and the attention bottleneck divides the 64 channels by 16.
CHANNEL_PLAN = {
    "c1": (1, 16),
    "dc1": (16, 16),
    "dc2": (32, 16),
    "dc3": (48, 16),
    "se.reduce": (64, 4),
    "se.expand": (4, 64),
    "c2": (64, 64),
    "c3": (64, 32),
    "c4": (32, 16),
    "c5": (16, 1),
}

ENCODER_LAYERS = ("c1", "dc1", "dc2", "dc3", "se.reduce", "se.expand")
DECODER_LAYERS = ("c2", "c3", "c4", "c5")

# entry order of the weight file; biases follow their kernels
CANONICAL_ENTRIES = tuple(
    f"{layer}.{kind}" for layer in ENCODER_LAYERS + DECODER_LAYERS for kind in ("w", "b")
)

_SE_LAYERS = ("se.reduce", "se.expand")


def _kernel_shape(layer: str) -> tuple[int, int, int, int]:
    ci, co = CHANNEL_PLAN[layer]
    k = 1 if layer in _SE_LAYERS else 3
    return (co, ci, k, k)


def _bias_shape(layer: str) -> tuple[int, int, int, int]:
    _, co = CHANNEL_PLAN[layer]
    return (1, co, 1, 1)


@dataclass(frozen=True)
class EncoderParams:
    """First conv, dense block and attention gate of the encoder."""

    c1_w: Tensor
    c1_b: Tensor
    dc1_w: Tensor
    dc1_b: Tensor
    dc2_w: Tensor
    dc2_b: Tensor
    dc3_w: Tensor
    dc3_b: Tensor
    se_reduce_w: Tensor
    se_reduce_b: Tensor
    se_expand_w: Tensor
    se_expand_b: Tensor


@dataclass(frozen=True)
class DecoderParams:
    c2_w: Tensor
    c2_b: Tensor
    c3_w: Tensor
    c3_b: Tensor
    c4_w: Tensor
    c4_b: Tensor
    c5_w: Tensor
    c5_b: Tensor


def _attr_name(entry: str) -> str:
    return entry.replace(".", "_")


@dataclass(frozen=True)
class NetworkParams:
    """Full trainable parameter set plus bookkeeping metadata."""

    encoder: EncoderParams
    decoder: DecoderParams
    metadata: dict = field(default_factory=dict)

    def named(self) -> dict[str, Tensor]:
        """Parameters in canonical order, keyed by canonical entry name."""
        out: dict[str, Tensor] = {}
        for entry in CANONICAL_ENTRIES:
            holder = self.encoder if entry.split(".")[0] in (
                "c1", "dc1", "dc2", "dc3", "se") else self.decoder
            out[entry] = getattr(holder, _attr_name(entry))
        return out

    @staticmethod
    def from_named(named: dict[str, Tensor], metadata: Optional[dict] = None) -> "NetworkParams":
        missing = [e for e in CANONICAL_ENTRIES if e not in named]
        if missing:
            raise ShapeError(f"missing parameters: {missing}")
        tensors = {}
        for entry in CANONICAL_ENTRIES:
            t = named[entry]
            tensors[_attr_name(entry)] = t if t.name == entry else Tensor(
                t.data, name=entry, dtype=t.data.dtype)
        enc = EncoderParams(**{k: v for k, v in tensors.items()
                               if not k.startswith(("c2", "c3", "c4", "c5"))})
        dec = DecoderParams(**{k: v for k, v in tensors.items()
                               if k.startswith(("c2", "c3", "c4", "c5"))})
        p = NetworkParams(enc, dec, metadata if metadata is not None else {})
        validate_shape_chain(p.named())
        return p


def validate_shape_chain(named: dict[str, Tensor]) -> dict:
    """Check that layer shapes chain together; returns the derived plan.

    Widths other than the default plan are accepted as long as the dense
    connectivity, attention bottleneck and decoder chain stay consistent.
    """
    def dims(entry):
        return tuple(int(d) for d in named[entry].shape)

    def check(cond, msg):
        if not cond:
            raise ShapeError(f"shape chain violation: {msg}")

    for layer in ENCODER_LAYERS + DECODER_LAYERS:
        kw = dims(f"{layer}.w")
        check(len(kw) == 4, f"{layer}.w must be rank 4, got {kw}")
        k = 1 if layer in _SE_LAYERS else 3
        check(kw[2] == k and kw[3] == k, f"{layer}.w must be {k}x{k}, got {kw[2]}x{kw[3]}")
        check(dims(f"{layer}.b") == (1, kw[0], 1, 1),
              f"{layer}.b must match {kw[0]} output channels")

    w1 = dims("c1.w")[0]
    check(dims("c1.w")[1] == 1, "c1 must take a single input channel")
    w2 = dims("dc1.w")[0]
    check(dims("dc1.w")[1] == w1, "dc1 input must equal c1 output")
    w3 = dims("dc2.w")[0]
    check(dims("dc2.w")[1] == w1 + w2, "dc2 input must equal c1+dc1 outputs")
    w4 = dims("dc3.w")[0]
    check(dims("dc3.w")[1] == w1 + w2 + w3, "dc3 input must equal c1+dc1+dc2 outputs")
    dense = w1 + w2 + w3 + w4
    check(dims("se.reduce.w")[1] == dense, "attention reduce input must equal dense width")
    squeeze = dims("se.reduce.w")[0]
    check(dims("se.expand.w") == (dense, squeeze, 1, 1),
          "attention expand must invert the reduce layer")
    check(dims("c2.w")[1] == dense, "c2 input must equal encoder output width")
    check(dims("c3.w")[1] == dims("c2.w")[0], "c3 input must equal c2 output")
    check(dims("c4.w")[1] == dims("c3.w")[0], "c4 input must equal c3 output")
    check(dims("c5.w")[1] == dims("c4.w")[0], "c5 input must equal c4 output")
    check(dims("c5.w")[0] == 1, "decoder must end in a single channel")
    return {
        "dense_widths": [w1, w2, w3, w4],
        "squeeze": squeeze,
        "decoder_widths": [dims(f"{l}.w")[0] for l in DECODER_LAYERS],
    }


# Start the reconstruction at mid gray. With the DC offset gone at birth,
# training only has to learn structure; from a zero output the product-form
# structural loss otherwise favors an inverted reconstruction (both its
# factors flip sign) that the small scheduled learning rate cannot escape.
OUTPUT_BIAS_INIT = 0.5


def init_params(seed: int = 0) -> NetworkParams:
    """Kaiming-uniform kernels (fan-in, ReLU gain), seeded.

    Biases start at zero except the final decoder bias, which starts at the
    data gray level (see OUTPUT_BIAS_INIT).
    """
    rng = np.random.default_rng(seed)
    named: dict[str, Tensor] = {}
    for layer in ENCODER_LAYERS + DECODER_LAYERS:
        co, ci, kh, kw = _kernel_shape(layer)
        bound = float(np.sqrt(6.0 / (ci * kh * kw)))
        kernel = rng.uniform(-bound, bound, size=(co, ci, kh, kw)).astype(np.float32)
        named[f"{layer}.w"] = Tensor(kernel, name=f"{layer}.w")
        bias = np.zeros(_bias_shape(layer), dtype=np.float32)
        if layer == "c5":
            bias[:] = OUTPUT_BIAS_INIT
        named[f"{layer}.b"] = Tensor(bias, name=f"{layer}.b")
    meta = {"format_version": 1, "seed": seed,
            "dense_widths": [16, 16, 16, 16], "squeeze": 4,
            "decoder_widths": [64, 64, 32, 16, 1]}
    return NetworkParams.from_named(named, meta)


def encode(p: EncoderParams, x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Dense-block feature extraction for any batch size (training path)."""
    x1 = ad.relu(ad.conv2d(x, p.c1_w, p.c1_b, tape=tape), tape=tape)
    x2 = ad.relu(ad.conv2d(x1, p.dc1_w, p.dc1_b, tape=tape), tape=tape)
    cat12 = ad.channel_concat(x1, x2, tape=tape)
    x3 = ad.relu(ad.conv2d(cat12, p.dc2_w, p.dc2_b, tape=tape), tape=tape)
    cat123 = ad.channel_concat(cat12, x3, tape=tape)
    x4 = ad.relu(ad.conv2d(cat123, p.dc3_w, p.dc3_b, tape=tape), tape=tape)
    dense = ad.channel_concat(cat123, x4, tape=tape)
    pooled = ad.global_avg_pool(dense, tape=tape)
    squeezed = ad.relu(ad.conv2d(pooled, p.se_reduce_w, p.se_reduce_b, tape=tape), tape=tape)
    gate = ad.sigmoid(ad.conv2d(squeezed, p.se_expand_w, p.se_expand_b, tape=tape), tape=tape)
    return ad.channel_scale(dense, gate, tape=tape)


def decode(p: DecoderParams, f: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Reconstruction for any batch size; last layer is linear."""
    y = ad.relu(ad.conv2d(f, p.c2_w, p.c2_b, tape=tape), tape=tape)
    y = ad.relu(ad.conv2d(y, p.c3_w, p.c3_b, tape=tape), tape=tape)
    y = ad.relu(ad.conv2d(y, p.c4_w, p.c4_b, tape=tape), tape=tape)
    return ad.conv2d(y, p.c5_w, p.c5_b, tape=tape)


def encoder_forward(p: EncoderParams, image: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Deep features for one grayscale image of shape (1, 1, h, w)."""
    if image.shape[:2] != (1, 1):
        raise ShapeError(f"encoder expects one single-channel image; got shape {image.shape}")
    return encode(p, image, tape=tape)


def decoder_forward(p: DecoderParams, features: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Reconstructed image from one feature map of shape (1, c, h, w).

    The output is not clamped here; clamping to [0, 1] happens at image-save
    time so the training loss sees the raw values.
    """
    expected = features.c
    if p.c2_w.shape[1] != expected:
        raise ShapeError(
            f"features have {expected} channels but decoder expects {p.c2_w.shape[1]}")
    if features.n != 1:
        raise ShapeError(f"decoder_forward expects a single feature map; got batch {features.n}")
    return decode(p, features, tape=tape)
