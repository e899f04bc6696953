"""Activity measurement, decision maps, fusion modes and the pair pipeline.

The activity measure is the spatial frequency of the encoder's deep
features: squared row/column differences of the per-pixel feature vectors,
summed over a (2r+1)^2 window with replicated borders, root-mean-squared
over the window area. Whichever source wins the activity comparison
supplies the pixel; the comparison map is verified (morphology, small
regions, guided filter) before the final weighted average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import postprocess
from .autodiff import Tensor
from .errors import DataError, NonFiniteError, ShapeError
from .imageio import luminance
from .maps import DecisionMap, FusionConfig, SFMap
from .network import NetworkParams, decoder_forward, encoder_forward

FEATURE_MODES = ("average", "max", "absmax", "l1_norm", "sf")


@dataclass(frozen=True)
class FusionResult:
    """Fused image plus the decision map and optional intermediates."""

    fused: np.ndarray  # float32 in [0, 1], (h, w) or (h, w, 3)
    decision: Optional[DecisionMap]
    intermediates: Optional[dict] = None


def _box_sum_valid(x: np.ndarray, window: int) -> np.ndarray:
    """Sums over every fully contained window x window block (float64)."""
    h, w = x.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0, dtype=np.float64), axis=1, out=integral[1:, 1:])
    oh, ow = h - window + 1, w - window + 1
    return (integral[window:, window:] - integral[:oh, window:]
            - integral[window:, :ow] + integral[:oh, :ow])


def spatial_frequency(features: Tensor, radius: int) -> SFMap:
    """Windowed RMS of feature-vector differences along rows and columns.

    Neighbor access beyond the frame replicates the edge, so a constant
    map scores zero everywhere. ``radius`` 0 is allowed for testing (the
    window degenerates to the center pixel).
    """
    if features.n != 1:
        raise ShapeError(f"expected a single feature map; got batch {features.n}")
    if radius < 0:
        raise ValueError(f"radius must be non-negative; got {radius}")
    f = features.data[0]
    if not np.isfinite(f).all():
        raise NonFiniteError("feature map contains NaN or infinity")
    _, h, w = f.shape
    r = radius
    padded = np.pad(f.astype(np.float64), ((0, 0), (r + 1, r + 1), (r + 1, r + 1)),
                    mode="edge")
    center = padded[:, 1:1 + h + 2 * r, 1:1 + w + 2 * r]
    left = padded[:, 1:1 + h + 2 * r, 0:w + 2 * r]
    up = padded[:, 0:h + 2 * r, 1:1 + w + 2 * r]
    row_sq = ((center - left) ** 2).sum(axis=0)
    col_sq = ((center - up) ** 2).sum(axis=0)
    window = 2 * r + 1
    rf2 = _box_sum_valid(row_sq, window)
    cf2 = _box_sum_valid(col_sq, window)
    sf = np.sqrt((rf2 + cf2) / float(window * window))
    return SFMap(sf.astype(np.float32), radius)


def initial_decision_map(sf1: SFMap, sf2: SFMap) -> DecisionMap:
    """1 where the first map wins or ties, 0 elsewhere."""
    if sf1.shape != sf2.shape:
        raise ShapeError(f"activity maps differ in shape: {sf1.shape} vs {sf2.shape}")
    if sf1.radius != sf2.radius:
        raise ShapeError(f"activity maps differ in radius: {sf1.radius} vs {sf2.radius}")
    return DecisionMap((sf1.values >= sf2.values).astype(np.float32), "initial-binary")


def feature_fuse(f1: Tensor, f2: Tensor, mode: str, sf_radius: int = 5) -> Tensor:
    """Blend two feature maps; the result goes through the decoder."""
    if mode not in FEATURE_MODES:
        raise ValueError(f"feature mode must be one of {FEATURE_MODES}; got {mode!r}")
    if f1.shape != f2.shape:
        raise ShapeError(f"feature maps differ in shape: {f1.shape} vs {f2.shape}")
    a, b = f1.data, f2.data
    if mode == "average":
        return Tensor((a + b) / 2.0)
    if mode == "max":
        return Tensor(np.maximum(a, b))
    if mode == "absmax":
        return Tensor(np.where(np.abs(a) >= np.abs(b), a, b))
    if mode == "l1_norm":
        n1 = np.abs(a).sum(axis=1, keepdims=True)
        n2 = np.abs(b).sum(axis=1, keepdims=True)
        denom = n1 + n2 + 1e-12
        return Tensor(a * (n1 / denom) + b * (n2 / denom))
    # per-pixel whole-vector selection by activity comparison
    d = initial_decision_map(spatial_frequency(f1, sf_radius),
                             spatial_frequency(f2, sf_radius))
    return Tensor(np.where(d.values[None, None] > 0.5, a, b))


def fuse_weighted(img1: np.ndarray, img2: np.ndarray, decision) -> np.ndarray:
    """Per-pixel convex combination, clamped to [0, 1].

    Weight 1 selects the first image exactly and 0 the second; identical
    inputs pass through bit-exactly for any weight map.
    """
    a = np.asarray(img1, dtype=np.float32)
    b = np.asarray(img2, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    w = decision.values if isinstance(decision, DecisionMap) else np.asarray(
        decision, dtype=np.float32)
    if w.shape != a.shape[:2]:
        raise ShapeError(f"decision map {w.shape} does not match image {a.shape[:2]}")
    if a.ndim == 3:
        w = w[:, :, None]
    blended = b + w * (a - b)
    blended = np.where(w >= 1.0, a, np.where(w <= 0.0, b, blended))
    return np.clip(blended, 0.0, 1.0).astype(np.float32)


def _as_gray_pair(img1: np.ndarray, img2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(img1, dtype=np.float32)
    b = np.asarray(img2, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"source images differ in shape: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeError(f"images must be (h, w) or (h, w, 3); got {a.shape}")
    return luminance(a), luminance(b)


def fuse_pair(img1: np.ndarray, img2: np.ndarray, params: NetworkParams,
              cfg: Optional[FusionConfig] = None) -> FusionResult:
    """Fuse two registered images according to ``cfg.mode``.

    The decision-map route (``sf_dm``) measures activity on deep features,
    verifies the comparison map and blends the original images, preserving
    color. The feature routes blend encoder features and decode them, so
    their output is the decoder's grayscale reconstruction.
    """
    if params is None:
        raise DataError("fusion requires trained network parameters")
    cfg = cfg or FusionConfig()
    g1, g2 = _as_gray_pair(img1, img2)
    if g1.shape[0] < 2 * cfg.sf_radius + 1 or g1.shape[1] < 2 * cfg.sf_radius + 1:
        raise DataError(f"images {g1.shape} smaller than the activity window "
                        f"({2 * cfg.sf_radius + 1} px)")

    feats1 = encoder_forward(params.encoder, Tensor(g1[None, None]))
    feats2 = encoder_forward(params.encoder, Tensor(g2[None, None]))

    if cfg.mode != "sf_dm":
        fused_feats = feature_fuse(feats1, feats2, cfg.mode, cfg.sf_radius)
        decoded = decoder_forward(params.decoder, fused_feats)
        fused = np.clip(decoded.data[0, 0], 0.0, 1.0).astype(np.float32)
        decision = None
        if cfg.mode == "sf":
            decision = initial_decision_map(spatial_frequency(feats1, cfg.sf_radius),
                                            spatial_frequency(feats2, cfg.sf_radius))
        return FusionResult(fused, decision)

    sf1 = spatial_frequency(feats1, cfg.sf_radius)
    sf2 = spatial_frequency(feats2, cfg.sf_radius)
    initial = initial_decision_map(sf1, sf2)
    verified = postprocess.verify_binary(initial, cfg)
    fused_initial = fuse_weighted(g1, g2, verified)
    soft = postprocess.soften(verified, fused_initial, cfg)
    fused = fuse_weighted(np.asarray(img1, dtype=np.float32),
                          np.asarray(img2, dtype=np.float32), soft)
    intermediates = None
    if cfg.keep_intermediates:
        intermediates = {"sf1": sf1, "sf2": sf2, "initial_map": initial,
                         "verified_map": verified, "fused_initial": fused_initial}
    return FusionResult(fused, soft, intermediates)


def fuse_stack(images: Sequence[np.ndarray], params: NetworkParams,
               cfg: Optional[FusionConfig] = None) -> np.ndarray:
    """Fold a stack left to right: fuse the running result with each image."""
    if len(images) < 2:
        raise DataError(f"need at least 2 images to fuse; got {len(images)}")
    result = np.asarray(images[0], dtype=np.float32)
    for nxt in images[1:]:
        result = fuse_pair(result, nxt, params, cfg).fused
    return result
