"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(bad files, mismatched sizes) exit 2, numeric failures exit 3.
"""


class FocusFuseError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FocusFuseError, ValueError):
    """Operands have incompatible or malformed shapes."""


class NonFiniteError(FocusFuseError, ArithmeticError):
    """A NaN or infinity showed up where only finite values are allowed."""


class DataError(FocusFuseError, ValueError):
    """Input data (files, corpora, masks) is unusable."""


class ImageIOError(DataError):
    """An image file could not be read or written."""


class UnsupportedImageError(ImageIOError):
    """The file is not one of the supported image formats."""


class TruncatedImageError(ImageIOError):
    """The image file ends before the pixel data does."""


class BadImageSizeError(ImageIOError):
    """The image declares a zero or negative dimension."""


class WeightFormatError(FocusFuseError, ValueError):
    """A weight file failed validation.

    ``code`` identifies the failure: bad_magic, bad_version, truncated,
    bad_dtype, bad_crc, bad_layout or shape_chain.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
