"""Shared per-pixel map types and the fusion configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError

FUSION_MODES = ("average", "max", "absmax", "l1_norm", "sf", "sf_dm")

BINARY_STAGES = ("initial-binary", "verified-binary")
STAGES = BINARY_STAGES + ("soft",)


@dataclass(frozen=True)
class SFMap:
    """Per-pixel activity map: spatial frequency of the deep features."""

    values: np.ndarray  # (h, w) float32, non-negative
    radius: int

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ShapeError(f"activity map must be 2-D; got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ShapeError("activity map contains non-finite values")
        if (v < 0).any():
            raise ShapeError("activity map must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DecisionMap:
    """Per-pixel source weights: binary while being verified, soft after."""

    values: np.ndarray  # (h, w) float32
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ShapeError(f"unknown decision-map stage {self.stage!r}")
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ShapeError(f"decision map must be 2-D; got shape {v.shape}")
        if self.stage in BINARY_STAGES:
            if not np.isin(v, (0.0, 1.0)).all():
                raise ShapeError(f"{self.stage} decision map must contain only 0 and 1")
        else:
            if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
                raise ShapeError("soft decision map must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_u8(self) -> np.ndarray:
        """8-bit grayscale export (0 -> weight 0, 255 -> weight 1)."""
        return np.floor(self.values * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class FusionConfig:
    """All pipeline knobs.

    ``morph_radius`` defaults to the spatial-frequency kernel radius, which
    is the size at which burrs get removed without eating real regions.
    """

    sf_radius: int = 5
    morph_radius: Optional[int] = None
    area_fraction: float = 0.01
    gf_radius: int = 4
    gf_eps: float = 0.1
    mode: str = "sf_dm"
    morph_passes: int = 1
    keep_intermediates: bool = False

    def __post_init__(self):
        if self.sf_radius < 1:
            raise ValueError("sf_radius must be at least 1")
        if self.morph_radius is not None and self.morph_radius < 1:
            raise ValueError("morph_radius must be at least 1")
        if not 0.0 < self.area_fraction < 1.0:
            raise ValueError("area_fraction must be in (0, 1)")
        if self.gf_radius < 1:
            raise ValueError("gf_radius must be at least 1")
        if self.gf_eps <= 0.0:
            raise ValueError("gf_eps must be positive")
        if self.mode not in FUSION_MODES:
            raise ValueError(f"mode must be one of {FUSION_MODES}; got {self.mode!r}")
        if self.morph_passes < 1:
            raise ValueError("morph_passes must be at least 1")

    @property
    def effective_morph_radius(self) -> int:
        return self.sf_radius if self.morph_radius is None else self.morph_radius
