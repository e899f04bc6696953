"""Consistency verification of decision maps.

Three stages: disk-element opening/closing to clear burrs and reconnect
regions, small-region reversal to kill isolated islands of either polarity,
and guided filtering against the initially fused image to soften the seam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .maps import DecisionMap, FusionConfig

# erosion treats everything beyond the frame as foreground and dilation as
# background, so constant maps are fixed points and duality holds exactly
_ERODE_PAD = True
_DILATE_PAD = False


def disk_element(radius: int) -> np.ndarray:
    """Boolean disk mask of side 2*radius+1 (dx^2 + dy^2 <= radius^2)."""
    if radius < 1:
        raise ValueError(f"disk radius must be at least 1; got {radius}")
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (dy * dy + dx * dx) <= radius * radius


def _offsets(element: np.ndarray) -> np.ndarray:
    if element.ndim != 2 or element.shape[0] != element.shape[1] or element.shape[0] % 2 == 0:
        raise ShapeError(f"structuring element must be odd and square; got {element.shape}")
    r = element.shape[0] // 2
    return np.argwhere(element) - r


def binary_erode(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    offs = _offsets(element)
    r = element.shape[0] // 2
    h, w = mask.shape
    padded = np.pad(mask.astype(bool), r, constant_values=_ERODE_PAD)
    out = np.ones((h, w), dtype=bool)
    for dy, dx in offs:
        out &= padded[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


def binary_dilate(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    offs = _offsets(element)
    r = element.shape[0] // 2
    h, w = mask.shape
    padded = np.pad(mask.astype(bool), r, constant_values=_DILATE_PAD)
    out = np.zeros((h, w), dtype=bool)
    for dy, dx in offs:
        out |= padded[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


def binary_open(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    return binary_dilate(binary_erode(mask, element), element)


def binary_close(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    return binary_erode(binary_dilate(mask, element), element)


def morph_open_close(d: DecisionMap, radius: int, passes: int = 1) -> DecisionMap:
    """Opening then closing with a disk element, repeated ``passes`` times."""
    if d.stage not in ("initial-binary", "verified-binary"):
        raise ShapeError(f"morphology needs a binary map; got stage {d.stage!r}")
    element = disk_element(radius)
    mask = d.values > 0.5
    for _ in range(passes):
        mask = binary_close(binary_open(mask, element), element)
    return DecisionMap(mask.astype(np.float32), d.stage)


@dataclass(frozen=True)
class RegionLabeling:
    """Connected components of one polarity: labels start at 1, 0 = not in polarity."""

    labels: np.ndarray  # (h, w) int32
    counts: dict[int, int]
    polarity: str  # "foreground" or "background"


_NEIGHBORS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def label_regions(mask: np.ndarray, polarity: str = "foreground") -> RegionLabeling:
    """8-connected components by raster-order flood fill."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    counts: dict[int, int] = {}
    next_label = 1
    mask = mask.astype(bool)
    for sy in range(h):
        row = mask[sy]
        for sx in range(w):
            if not row[sx] or labels[sy, sx]:
                continue
            stack = [(sy, sx)]
            labels[sy, sx] = next_label
            size = 0
            while stack:
                y, x = stack.pop()
                size += 1
                for dy, dx in _NEIGHBORS8:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = next_label
                        stack.append((ny, nx))
            counts[next_label] = size
            next_label += 1
    return RegionLabeling(labels, counts, polarity)


def remove_small_regions(d: DecisionMap, area_threshold: int) -> DecisionMap:
    """Reverse components strictly smaller than the threshold.

    Foreground first, then background on the already-corrected map, so a
    small hole inside a small island resolves with the island.
    """
    if d.stage not in ("initial-binary", "verified-binary"):
        raise ShapeError(f"small-region removal needs a binary map; got stage {d.stage!r}")
    mask = d.values > 0.5
    fg = label_regions(mask, "foreground")
    for label, count in fg.counts.items():
        if count < area_threshold:
            mask[fg.labels == label] = False
    bg = label_regions(~mask, "background")
    for label, count in bg.counts.items():
        if count < area_threshold:
            mask[bg.labels == label] = True
    return DecisionMap(mask.astype(np.float32), d.stage)


# ---------------------------------------------------------------------------
# guided filter


def _box_mean(x: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window clipped to the image (shrinking borders)."""
    h, w = x.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0, dtype=np.float64), axis=1, out=integral[1:, 1:])
    y0 = np.maximum(np.arange(h) - radius, 0)
    y1 = np.minimum(np.arange(h) + radius, h - 1) + 1
    x0 = np.maximum(np.arange(w) - radius, 0)
    x1 = np.minimum(np.arange(w) + radius, w - 1) + 1
    sums = (integral[y1[:, None], x1[None, :]] - integral[y0[:, None], x1[None, :]]
            - integral[y1[:, None], x0[None, :]] + integral[y0[:, None], x0[None, :]])
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums / counts


def guided_filter(guidance: np.ndarray, inp: np.ndarray,
                  radius: int, eps: float) -> np.ndarray:
    """Local-linear-model filter of ``inp`` steered by ``guidance``.

    Box statistics use integral images; windows shrink at the borders rather
    than padding, so the a/b estimates never see fabricated pixels.
    """
    if eps <= 0:
        raise ValueError(f"guided-filter eps must be positive; got {eps}")
    guide = np.asarray(guidance, dtype=np.float64)
    p = np.asarray(inp, dtype=np.float64)
    if guide.ndim != 2 or guide.shape != p.shape:
        raise ShapeError(
            f"guidance {guide.shape} and input {p.shape} must be equal 2-D shapes")
    mean_i = _box_mean(guide, radius)
    mean_p = _box_mean(p, radius)
    cov_ip = _box_mean(guide * p, radius) - mean_i * mean_p
    var_i = _box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    q = _box_mean(a, radius) * guide + _box_mean(b, radius)
    return q.astype(np.float32)


# ---------------------------------------------------------------------------
# full verification


def verify_binary(d: DecisionMap, cfg: FusionConfig) -> DecisionMap:
    """Morphology plus small-region reversal; stays binary."""
    h, w = d.shape
    cleaned = morph_open_close(d, cfg.effective_morph_radius, cfg.morph_passes)
    threshold = int(cfg.area_fraction * h * w)
    cleaned = remove_small_regions(cleaned, threshold)
    return DecisionMap(cleaned.values, "verified-binary")


def soften(verified: DecisionMap, fused_initial: np.ndarray, cfg: FusionConfig) -> DecisionMap:
    """Guided-filter the verified map against the initial fusion; clamp to [0, 1]."""
    if verified.stage != "verified-binary":
        raise ShapeError(f"soften expects a verified-binary map; got {verified.stage!r}")
    soft = guided_filter(fused_initial, verified.values, cfg.gf_radius, cfg.gf_eps)
    return DecisionMap(np.clip(soft, 0.0, 1.0), "soft")


def verify(d: DecisionMap, fused_initial: np.ndarray, cfg: FusionConfig) -> DecisionMap:
    """Full verification chain: binary cleanup, then guided softening."""
    return soften(verify_binary(d, cfg), fused_initial, cfg)
