"""8-bit image buffers with PNG and binary PGM/PPM round-tripping.

Buffers hold the raw 8-bit samples plus a normalized float view in [0, 1].
Quantization rounds half away from zero, so 0.5 maps to 128 and the
normalize/quantize round trip is exact for every 8-bit value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (BadImageSizeError, ShapeError, TruncatedImageError,
                     UnsupportedImageError)

# BT.601 luma coefficients
_LUMA = (0.299, 0.587, 0.114)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit image, single channel (h, w) or RGB (h, w, 3)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if s.ndim not in (2, 3) or (s.ndim == 3 and s.shape[2] != 3):
            raise ShapeError(f"image must be (h, w) or (h, w, 3); got shape {s.shape}")
        if s.shape[0] == 0 or s.shape[1] == 0:
            raise BadImageSizeError(f"image has a zero dimension: {s.shape}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3

    def to_float(self) -> np.ndarray:
        """Normalized float32 view in [0, 1]."""
        return self.samples.astype(np.float32) / 255.0

    @staticmethod
    def from_float(arr: np.ndarray) -> "ImageBuffer":
        """Clamp to [0, 1] and quantize, rounding half away from zero."""
        a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
        return ImageBuffer(np.floor(a * 255.0 + 0.5).astype(np.uint8))


def quantize(arr: np.ndarray) -> np.ndarray:
    return ImageBuffer.from_float(arr).samples


def luminance(arr: np.ndarray) -> np.ndarray:
    """BT.601 luminance of a float RGB array; grayscale passes through."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        return a
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"expected (h, w) or (h, w, 3); got shape {a.shape}")
    return (a[:, :, 0] * _LUMA[0] + a[:, :, 1] * _LUMA[1]
            + a[:, :, 2] * _LUMA[2]).astype(np.float32)


def rgb_to_gray(img: ImageBuffer) -> ImageBuffer:
    """BT.601 conversion in normalized space, re-quantized to 8 bits."""
    if img.channels != 3:
        raise ShapeError(f"rgb_to_gray needs a 3-channel image; got {img.channels}")
    return ImageBuffer.from_float(luminance(img.to_float()))


# ---------------------------------------------------------------------------
# binary PGM / PPM


def _parse_pnm(blob: bytes, path) -> ImageBuffer:
    magic = blob[:2]
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedImageError(f"{path}: header ends early")
        try:
            fields.append(int(blob[start:pos]))
        except ValueError:
            raise UnsupportedImageError(f"{path}: malformed header token") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise BadImageSizeError(f"{path}: declared size {width}x{height}")
    if maxval != 255:
        raise UnsupportedImageError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = blob[pos:pos + need]
    if len(payload) < need:
        raise TruncatedImageError(f"{path}: expected {need} sample bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return ImageBuffer(arr.reshape(shape).copy())


def _write_pnm(img: ImageBuffer, path) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    Path(path).write_bytes(header + img.samples.tobytes())


# ---------------------------------------------------------------------------
# load / save


def load_image(path) -> ImageBuffer:
    """Load a PNG or binary PGM/PPM file (format detected by signature)."""
    blob = Path(path).read_bytes()
    if blob[:2] in (b"P5", b"P6"):
        return _parse_pnm(blob, path)
    if blob[:2] in (b"P1", b"P2", b"P3", b"P4"):
        raise UnsupportedImageError(f"{path}: only binary (P5/P6) PGM/PPM is supported")
    if blob[:8] != _PNG_SIGNATURE:
        raise UnsupportedImageError(f"{path}: not a PNG or binary PGM/PPM file")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif im.mode in ("RGB", "RGBA", "LA", "P", "1"):
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            else:
                raise UnsupportedImageError(f"{path}: unsupported PNG mode {im.mode}")
    except UnidentifiedImageError:
        raise UnsupportedImageError(f"{path}: not a decodable image") from None
    except OSError as exc:
        raise TruncatedImageError(f"{path}: {exc}") from None
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise BadImageSizeError(f"{path}: image has a zero dimension")
    return ImageBuffer(arr)


def save_image(img, path) -> None:
    """Write 8-bit PNG/PGM/PPM chosen by file extension.

    Accepts an ImageBuffer or a float array in [0, 1] (quantized on the way
    out). PGM requires a single channel and PPM three.
    """
    if not isinstance(img, ImageBuffer):
        img = ImageBuffer.from_float(img)
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        Image.fromarray(img.samples).save(path, format="PNG")
    elif suffix == ".pgm":
        if img.channels != 1:
            raise ShapeError("PGM stores single-channel images only")
        _write_pnm(img, path)
    elif suffix == ".ppm":
        if img.channels != 3:
            raise ShapeError("PPM stores 3-channel images only")
        _write_pnm(img, path)
    else:
        raise UnsupportedImageError(f"unsupported output extension {suffix!r}")
