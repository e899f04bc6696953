"""Objective fusion quality scoring.

The gradient-preservation score compares Sobel edge strength and
orientation between each source and the fused image, squashes both through
sigmoidal preservation curves, and averages the per-source scores weighted
by source edge strength. Constants follow the metric's original
publication (Xydeas & Petrovic, Electronics Letters 36(4), 2000) and are
frozen here.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError
from .fusion import fuse_pair
from .imageio import luminance
from .maps import FusionConfig
from .network import NetworkParams
from .training import ssim_value

QG_CONSTANTS = {
    "gamma_g": 0.9994, "k_g": -15.0, "delta_g": 0.5,
    "gamma_a": 0.9879, "k_a": -22.0, "delta_a": 0.8,
    "weight_power": 1.0,
}

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)


def _correlate3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="reflect")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = _correlate3(img, _SOBEL_X)
    gy = _correlate3(img, _SOBEL_Y)
    strength = np.sqrt(gx * gx + gy * gy)
    angle = np.arctan(gy / np.where(gx == 0.0, 1e-5, gx))
    return strength, angle


def _preservation(src_g, src_a, fus_g, fus_a) -> np.ndarray:
    c = QG_CONSTANTS
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(src_g > fus_g,
                         fus_g / np.where(src_g == 0.0, 1e-5, src_g),
                         src_g / np.where(fus_g == 0.0, 1e-5, fus_g))
    ratio = np.nan_to_num(ratio, nan=0.0)
    angle_sim = 1.0 - np.abs(src_a - fus_a) * 2.0 / np.pi
    qg = c["gamma_g"] / (1.0 + np.exp(c["k_g"] * (ratio - c["delta_g"])))
    qa = c["gamma_a"] / (1.0 + np.exp(c["k_a"] * (angle_sim - c["delta_a"])))
    return qg * qa


def metric_qg(img_a: np.ndarray, img_b: np.ndarray, fused: np.ndarray) -> float:
    """Gradient-preservation score in [0, 1]; symmetric in the two sources."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    f = np.asarray(fused, dtype=np.float64)
    if not (a.shape == b.shape == f.shape) or a.ndim != 2:
        raise ShapeError(
            f"metric needs three equal single-channel images; got {a.shape}, {b.shape}, {f.shape}")
    ag, aa = _gradients(a)
    bg, ba = _gradients(b)
    fg, fa = _gradients(f)
    q_af = _preservation(ag, aa, fg, fa)
    q_bf = _preservation(bg, ba, fg, fa)
    power = QG_CONSTANTS["weight_power"]
    wa = ag ** power
    wb = bg ** power
    denom = float((wa + wb).sum())
    if denom == 0.0:
        return 0.0
    return float((q_af * wa + q_bf * wb).sum() / denom)


# ---------------------------------------------------------------------------
# ablation evaluation


@dataclass(frozen=True)
class FusionPair:
    """One test pair, optionally with its all-in-focus ground truth."""

    name: str
    img_a: np.ndarray
    img_b: np.ndarray
    ground_truth: Optional[np.ndarray] = None


@dataclass
class MetricReport:
    config: dict
    per_pair: list = field(default_factory=list)
    means: dict = field(default_factory=dict)
    first_places: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "per_pair": self.per_pair,
                           "means": self.means, "first_places": self.first_places,
                           "skipped": self.skipped}, indent=2)

    def write_csv(self, path, metric: str = "qg") -> None:
        """One row per mode: mean score and first-place count for ``metric``."""
        modes = sorted(self.means.get(metric, {}))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mode", f"mean_{metric}", "first_places"])
            for mode in modes:
                writer.writerow([mode, f"{self.means[metric][mode]:.4f}",
                                 self.first_places.get(metric, {}).get(mode, 0)])


def evaluate(pairs: Sequence[FusionPair], modes: Sequence[str], params: NetworkParams,
             cfg: Optional[FusionConfig] = None, jobs: int = 1) -> MetricReport:
    """Fuse every pair with every mode and score the results.

    Ties award the first-place point to all tied modes. Pairs that fail to
    fuse are skipped with a warning and recorded in the report.
    """
    if not pairs:
        raise ValueError("need at least one pair to evaluate")
    if not modes:
        raise ValueError("need at least one fusion mode")
    base = cfg or FusionConfig()
    report = MetricReport(config={
        "modes": list(modes), "sf_radius": base.sf_radius,
        "area_fraction": base.area_fraction, "gf_radius": base.gf_radius,
        "gf_eps": base.gf_eps, "qg_constants": dict(QG_CONSTANTS),
    })

    def fuse_one(pair: FusionPair, mode: str):
        mode_cfg = FusionConfig(sf_radius=base.sf_radius, morph_radius=base.morph_radius,
                                area_fraction=base.area_fraction, gf_radius=base.gf_radius,
                                gf_eps=base.gf_eps, mode=mode,
                                morph_passes=base.morph_passes)
        return fuse_pair(pair.img_a, pair.img_b, params, mode_cfg)

    tasks = [(pair, mode) for pair in pairs for mode in modes]
    results: dict[tuple[str, str], dict] = {}
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fused_list = list(pool.map(lambda t: _try_fuse(fuse_one, *t), tasks))
    else:
        fused_list = [_try_fuse(fuse_one, pair, mode) for pair, mode in tasks]

    failed_pairs = set()
    for (pair, mode), fused in zip(tasks, fused_list):
        if fused is None:
            failed_pairs.add(pair.name)
            continue
        results[(pair.name, mode)] = _score(pair, fused)
    for name in sorted(failed_pairs):
        report.skipped.append(name)

    metric_names = ["qg"] + (["ssim_gt"] if any(
        p.ground_truth is not None for p in pairs) else [])
    sums = {m: {mode: 0.0 for mode in modes} for m in metric_names}
    firsts = {m: {mode: 0 for mode in modes} for m in metric_names}
    counted = {m: 0 for m in metric_names}
    for pair in pairs:
        if pair.name in failed_pairs:
            continue
        row = {"pair": pair.name, "scores": {}}
        for mode in modes:
            row["scores"][mode] = results[(pair.name, mode)]
        report.per_pair.append(row)
        for metric in metric_names:
            values = {mode: row["scores"][mode].get(metric) for mode in modes}
            if any(v is None for v in values.values()):
                continue
            counted[metric] += 1
            best = max(values.values())
            for mode, v in values.items():
                sums[metric][mode] += v
                if v == best:
                    firsts[metric][mode] += 1
    for metric in metric_names:
        if counted[metric]:
            report.means[metric] = {mode: sums[metric][mode] / counted[metric]
                                    for mode in modes}
            report.first_places[metric] = firsts[metric]
    return report


def _try_fuse(fuse_one, pair, mode):
    try:
        return fuse_one(pair, mode)
    except Exception as exc:  # pragma: no cover - exercised via corrupt inputs
        warnings.warn(f"skipping pair {pair.name!r} ({mode}): {exc}")
        return None


def _score(pair: FusionPair, result) -> dict:
    fused_gray = luminance(result.fused)
    scores = {"qg": metric_qg(luminance(pair.img_a), luminance(pair.img_b), fused_gray)}
    if pair.ground_truth is not None:
        scores["ssim_gt"] = max(0.0, ssim_value(fused_gray, luminance(pair.ground_truth)))
    return scores
