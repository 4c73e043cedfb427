"""Binary netpbm (PGM/PPM) export and import of feature vectors."""

import logging
import re
from dataclasses import dataclass

import numpy as np

from .datasets import quantize
from .storage import PathLike, atomic_write_bytes


logger = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    """Raised for unsupported channel counts and malformed netpbm headers."""


_MAGIC_BY_CHANNELS = {1: b"P5", 3: b"P6"}
_CHANNELS_BY_MAGIC = {v: k for k, v in _MAGIC_BY_CHANNELS.items()}

# magic, width, height, maxval, then exactly one whitespace byte
_HEADER = re.compile(rb"\A(P[56])(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


@dataclass(frozen=True)
class ImageRecord:
    """8-bit image; `pixels` is row-major then channel-major."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.channels not in _MAGIC_BY_CHANNELS:
            raise ImageFormatError(f"Unsupported channel count: {self.channels}")
        pixels = np.asarray(self.pixels, dtype=np.uint8).ravel()
        if pixels.size != self.width * self.height * self.channels:
            raise ImageFormatError(
                f"{self.width}x{self.height}x{self.channels} image needs "
                f"{self.width * self.height * self.channels} pixels, got {pixels.size}"
            )
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_features(cls, values, width: int, height: int, channels: int = 1) -> "ImageRecord":
        """Quantize [0, 1] features with round(v * 255), halves rounding up."""
        return cls(width, height, channels, quantize(np.asarray(values, dtype=np.float64)))

    def to_features(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    def encode(self) -> bytes:
        header = b"%s\n%d %d\n255\n" % (_MAGIC_BY_CHANNELS[self.channels], self.width, self.height)
        return header + self.pixels.tobytes()


def decode_image(data: bytes) -> ImageRecord:
    """
    Parse a binary PGM (P5) or PPM (P6) with maxval 255.

    Raises:
        ImageFormatError: On a malformed header or truncated pixel data
    """
    match = _HEADER.match(data)
    if match is None:
        raise ImageFormatError("Malformed netpbm header")
    magic, width, height, maxval = match.group(1), int(match.group(2)), int(match.group(3)), int(match.group(4))
    if maxval != 255:
        raise ImageFormatError(f"Only maxval 255 is supported, got {maxval}")
    channels = _CHANNELS_BY_MAGIC[magic]
    size = width * height * channels
    body = data[match.end():]
    if len(body) < size:
        raise ImageFormatError(f"Truncated pixel data: expected {size} bytes, found {len(body)}")
    return ImageRecord(width, height, channels, np.frombuffer(body[:size], dtype=np.uint8))


def save_image(path: PathLike, record: ImageRecord):
    atomic_write_bytes(path, record.encode())
    logger.debug(f"[Image] Saved {record.width}x{record.height}x{record.channels} image to {path}")


def load_image(path: PathLike) -> ImageRecord:
    with open(path, "rb") as f:
        return decode_image(f.read())
