"""Unsupervised reconstruction training of the encoder/decoder pair.

The loss is ``weight * (1 - SSIM(output, input)) + RMS(output - input)``.
The pixel term is the Euclidean distance normalized by the square root of
the pixel count, so the balance against the SSIM term does not depend on
patch size. SSIM uses the conventional 11x11 Gaussian window (sigma 1.5)
with stability constants 0.01^2 and 0.03^2 on a dynamic range of 1.0,
evaluated over fully covered windows only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradientSet, Tape, Tensor
from .errors import DataError, NonFiniteError, ShapeError
from .network import NetworkParams, decode, encode, init_params

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window (sums to 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _blur(x: Tensor, taps: np.ndarray, tape: Optional[Tape]) -> Tensor:
    """Separable valid-mode Gaussian windowing (vertical then horizontal)."""
    return ad.filter2d(ad.filter2d(x, taps[:, None], tape=tape),
                       taps[None, :], tape=tape)


def ssim(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean local structural similarity as a scalar tensor in [-1, 1]."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim needs equal shapes; got {a.shape} and {b.shape}")
    if a.h < SSIM_WINDOW or a.w < SSIM_WINDOW:
        raise ShapeError(
            f"image {a.h}x{a.w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    # the 2-D Gaussian window factors into two 1-D passes
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    taps = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    taps /= taps.sum()

    mu_a = _blur(a, taps, tape)
    mu_b = _blur(b, taps, tape)
    mu_aa = ad.mul(mu_a, mu_a, tape=tape)
    mu_bb = ad.mul(mu_b, mu_b, tape=tape)
    mu_ab = ad.mul(mu_a, mu_b, tape=tape)
    var_a = ad.sub(_blur(ad.mul(a, a, tape=tape), taps, tape), mu_aa, tape=tape)
    var_b = ad.sub(_blur(ad.mul(b, b, tape=tape), taps, tape), mu_bb, tape=tape)
    cov = ad.sub(_blur(ad.mul(a, b, tape=tape), taps, tape), mu_ab, tape=tape)

    lum = ad.affine(mu_ab, 2.0, SSIM_C1, tape=tape)
    struct = ad.affine(cov, 2.0, SSIM_C2, tape=tape)
    den_lum = ad.affine(ad.add(mu_aa, mu_bb, tape=tape), 1.0, SSIM_C1, tape=tape)
    den_struct = ad.affine(ad.add(var_a, var_b, tape=tape), 1.0, SSIM_C2, tape=tape)
    ssim_map = ad.div(ad.mul(lum, struct, tape=tape),
                      ad.mul(den_lum, den_struct, tape=tape), tape=tape)
    return ad.reduce_mean(ssim_map, tape=tape)


def _as_image_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None, None]
    return Tensor(arr)


def ssim_value(a, b) -> float:
    """SSIM between two images (2-D arrays or rank-4 tensors) as a float."""
    return ssim(_as_image_tensor(a), _as_image_tensor(b)).item()


def loss_total(output: Tensor, target: Tensor, weight: float,
               tape: Optional[Tape] = None) -> Tensor:
    """weight * (1 - ssim) + per-pixel RMS reconstruction error.

    The pixel term is the Euclidean distance normalized by the square root
    of the pixel count, so the weight balances against the structural term
    independent of patch size.
    """
    if output.shape != target.shape:
        raise ShapeError(f"loss needs equal shapes; got {output.shape} and {target.shape}")
    diff = ad.sub(output, target, tape=tape)
    pixel = ad.sqrt(ad.reduce_mean(ad.mul(diff, diff, tape=tape), tape=tape), tape=tape)
    structural = ad.affine(ssim(output, target, tape=tape), -weight, weight, tape=tape)
    return ad.add(structural, pixel, tape=tape)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_params(params: Mapping[str, Tensor]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: Mapping[str, Tensor], grads: GradientSet | Mapping[str, Tensor],
              state: AdamState, lr: float) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update; purely functional."""
    if set(params) != set(grads):
        raise ShapeError(
            f"gradient names {sorted(set(grads) ^ set(params))} do not match parameters")
    t = state.t + 1
    corr1 = 1.0 - ADAM_BETA1 ** t
    corr2 = 1.0 - ADAM_BETA2 ** t
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name].data
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient for {name} is not finite")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)
        new_params[name] = Tensor((p.data - step).astype(np.float32), name=name)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def lr_schedule(epoch: int, base_lr: float, decay: float = 0.8, every: int = 2) -> float:
    """base_lr decayed by ``decay`` once per ``every`` epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative; got {epoch}")
    return base_lr * decay ** (epoch // every)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    ssim_weight: float = 3.0
    base_lr: float = 1e-4
    lr_decay: float = 0.8
    decay_every: int = 2
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    patch_size: int = 64
    crops_per_image: int = 2
    val_fraction: float = 0.1
    history_path: Optional[str] = None
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.ssim_weight < 0:
            raise ValueError("ssim_weight must be non-negative")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.patch_size < SSIM_WINDOW:
            raise ValueError(f"patch_size must be at least {SSIM_WINDOW}")
        if self.batch_size < 1 or self.epochs < 1 or self.crops_per_image < 1:
            raise ValueError("batch_size, epochs and crops_per_image must be positive")


def _random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape
    if h < size or w < size:
        raise DataError(f"corpus image {h}x{w} smaller than patch size {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return img[y:y + size, x:x + size]


def _evaluate(params: NetworkParams, images: Sequence[np.ndarray],
              weight: float) -> tuple[float, float]:
    losses, ssims = [], []
    for img in images:
        x = Tensor(np.asarray(img, dtype=np.float32)[None, None])
        out = decode(params.decoder, encode(params.encoder, x))
        losses.append(loss_total(out, x, weight).item())
        ssims.append(ssim(out, x).item())
    return float(np.mean(losses)), float(np.mean(ssims))


def train(corpus: Sequence[np.ndarray], cfg: TrainConfig) -> tuple[NetworkParams, list[dict]]:
    """Reconstruction training over a corpus of 2-D grayscale arrays in [0, 1].

    Returns the best-validation parameters and the per-epoch history. With a
    fixed seed and corpus the resulting weights are bit-reproducible. If the
    loss stops being finite, training aborts and the last good checkpoint is
    returned with the final history record marked ``diverged``.
    """
    if len(corpus) == 0:
        raise DataError("training corpus is empty")
    images = [np.asarray(img, dtype=np.float32) for img in corpus]
    for img in images:
        if img.ndim != 2:
            raise DataError(f"corpus images must be 2-D grayscale; got shape {img.shape}")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(images))
    n_val = min(len(images) - 1, max(1, round(cfg.val_fraction * len(images))))
    val_images = [images[i] for i in order[:n_val]]
    train_images = [images[i] for i in order[n_val:]]
    if not val_images:
        val_images = train_images  # single-image corpus: validate on it

    params = init_params(cfg.seed)
    named = params.named()
    state = AdamState.for_params(named)
    best_loss = math.inf
    best_params = params
    history: list[dict] = []
    diverged = False

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay, cfg.decay_every)
        patches = [_random_crop(img, cfg.patch_size, rng)
                   for img in train_images for _ in range(cfg.crops_per_image)]
        rng.shuffle(patches)
        epoch_losses = []
        for start in range(0, len(patches), cfg.batch_size):
            batch = np.stack(patches[start:start + cfg.batch_size])[:, None]
            x = Tensor(batch)
            tape = Tape()
            out = decode(params.decoder, encode(params.encoder, x, tape), tape)
            loss = loss_total(out, x, cfg.ssim_weight, tape)
            value = loss.item()
            if not math.isfinite(value):
                diverged = True
                break
            epoch_losses.append(value)
            grads = tape.backward()
            named, state = adam_step(named, grads, state, lr)
            params = NetworkParams.from_named(named, params.metadata)
        if diverged:
            history.append({"epoch": epoch, "lr": lr, "train_loss": float("nan"),
                            "val_loss": float("nan"), "val_ssim": float("nan"),
                            "diverged": True})
            break

        val_loss, val_ssim = _evaluate(params, val_images, cfg.ssim_weight)
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                  "val_loss": val_loss, "val_ssim": val_ssim}
        history.append(record)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params
            if cfg.checkpoint_path:
                from .weights import save_weights
                save_weights(best_params, cfg.checkpoint_path)

    if cfg.history_path:
        with open(cfg.history_path, "w", encoding="utf-8") as fh:
            for record in history:
                fh.write(json.dumps(record) + "\n")
    return best_params, history
