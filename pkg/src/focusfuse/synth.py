"""Synthetic data: defocus pairs with known ground truth and texture corpora.

A defocus pair takes one sharp source image and blurs complementary regions
of it, so the all-in-focus answer and the per-pixel focus assignment are
known exactly. Textures are built to carry structure everywhere (broadband
noise plus gratings and shapes); a flat region would leave the activity
measure with nothing to compare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

GEOMETRIES = ("vertical-half", "horizontal-half", "circle", "thirds")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic defocus pair."""

    source: np.ndarray  # sharp grayscale image, float in [0, 1]
    sigma: float
    geometry: str
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"blur sigma must be positive; got {self.sigma}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}; got {self.geometry!r}")
        src = np.ascontiguousarray(self.source, dtype=np.float32)
        if src.ndim != 2:
            raise ShapeError(f"source must be 2-D grayscale; got shape {src.shape}")
        src.setflags(write=False)
        object.__setattr__(self, "source", src)


def gaussian_taps(sigma: float) -> np.ndarray:
    """1-D Gaussian kernel truncated at 3 sigma, normalized to sum 1."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return taps / taps.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated edges."""
    taps = gaussian_taps(sigma)
    r = len(taps) // 2
    a = np.asarray(img, dtype=np.float64)
    padded = np.pad(a, ((r, r), (0, 0)), mode="edge")
    a = sum(taps[i] * padded[i:i + a.shape[0]] for i in range(len(taps)))
    padded = np.pad(a, ((0, 0), (r, r)), mode="edge")
    a = sum(taps[i] * padded[:, i:i + a.shape[1]] for i in range(len(taps)))
    return a.astype(np.float32)


def focus_mask(shape: tuple[int, int], geometry: str, seed: int = 0) -> np.ndarray:
    """Boolean mask, True where the FIRST image of the pair is in focus."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    if geometry == "vertical-half":
        return xx >= w // 2
    if geometry == "horizontal-half":
        return yy >= h // 2
    if geometry == "circle":
        rng = np.random.default_rng(seed)
        cy = h / 2 + float(rng.uniform(-0.1, 0.1)) * h
        cx = w / 2 + float(rng.uniform(-0.1, 0.1)) * w
        radius = 0.25 * min(h, w)
        return ((yy - cy) ** 2 + (xx - cx) ** 2) > radius ** 2
    if geometry == "thirds":
        return (xx < w // 3) | (xx >= 2 * w // 3)
    raise ValueError(f"unknown geometry {geometry!r}")


def synth_pair(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Build (img_a, img_b, ground_truth, true_mask) from one sharp source.

    ``true_mask`` is 1.0 where img_a is the in-focus source, matching the
    decision-map convention that weight 1 selects the first image.
    """
    src = spec.source
    h, w = src.shape
    if min(h, w) <= 4 * spec.sigma:
        raise DataError(f"source {h}x{w} too small for sigma {spec.sigma}")
    sharp_in_a = focus_mask((h, w), spec.geometry, spec.seed)
    if sharp_in_a.all() or not sharp_in_a.any():
        raise DataError(f"degenerate focus mask for geometry {spec.geometry!r}")
    blurred = gaussian_blur(src, spec.sigma)
    img_a = np.where(sharp_in_a, src, blurred).astype(np.float32)
    img_b = np.where(sharp_in_a, blurred, src).astype(np.float32)
    return img_a, img_b, src.copy(), sharp_in_a.astype(np.float32)


def synth_stack(source: np.ndarray, sigma: float, parts: int = 3) -> list[np.ndarray]:
    """Images each sharp in one vertical band and blurred elsewhere."""
    src = np.asarray(source, dtype=np.float32)
    if src.ndim != 2:
        raise ShapeError(f"source must be 2-D grayscale; got shape {src.shape}")
    if parts < 2:
        raise ValueError("need at least 2 bands")
    h, w = src.shape
    blurred = gaussian_blur(src, sigma)
    bounds = [w * k // parts for k in range(parts + 1)]
    xs = np.arange(w)
    images = []
    for k in range(parts):
        sharp = (xs >= bounds[k]) & (xs < bounds[k + 1])
        images.append(np.where(sharp[None, :], src, blurred).astype(np.float32))
    return images


# ---------------------------------------------------------------------------
# texture corpus


def make_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """One textured grayscale image with structure at several scales."""
    base = gaussian_blur(rng.standard_normal((size, size)), float(rng.uniform(1.0, 4.0)))
    lo, hi = base.min(), base.max()
    img = (base - lo) / (hi - lo + 1e-12)

    # oriented grating
    if rng.random() < 0.7:
        theta = float(rng.uniform(0, np.pi))
        freq = float(rng.uniform(2.0, 10.0)) / size
        phase = float(rng.uniform(0, 2 * np.pi))
        yy, xx = np.mgrid[0:size, 0:size]
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img = img + float(rng.uniform(0.1, 0.3)) * wave

    # a few hard-edged shapes
    for _ in range(int(rng.integers(3, 9))):
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size * 0.05, size * 0.3, 2)
        if rng.random() < 0.5:
            inside = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img = np.where(inside, img + float(rng.uniform(-0.4, 0.4)), img)

    # fine-grain noise keeps every region non-flat
    img = img + rng.uniform(-0.03, 0.03, size=(size, size))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo + 1e-12)).astype(np.float32)


def make_training_corpus(count: int, size: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic list of textured images for desk-scale training."""
    rng = np.random.default_rng(seed)
    return [make_texture(size, rng) for _ in range(count)]
