"""Labeled datasets: the generated mini-digits fixture and IDX files."""

import logging
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .storage import PathLike, atomic_write_bytes


logger = logging.getLogger(__name__)


IDX_IMAGES_MAGIC = 0x00000803
IDX_IMAGES_RGB_MAGIC = 0x00000804
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed IDX files; `offset` is the byte where parsing failed."""

    def __init__(self, message: str, path: PathLike, offset: int):
        super().__init__(f"{path}: {message} (at byte offset {offset})")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class LabeledDataset:
    """
    Feature matrix of shape (N, n) in [0, 1] with integer labels below class_count.

    `image_shape` is (height, width, channels); features are the row-major,
    channel-last flattening of that image.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    image_shape: tuple[int, int, int]

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"features {features.shape} and labels {labels.shape} do not describe the same samples"
            )
        h, w, c = self.image_shape
        if h * w * c != features.shape[1]:
            raise ValueError(f"image_shape {self.image_shape} does not flatten to {features.shape[1]} features")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for x, y in zip(self.features, self.labels):
            yield x, int(y)

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.class_count, self.image_shape)


# Seven-segment strokes on a 10x10 canvas: (row0, col0, row1, col1), inclusive.
_SEGMENTS = {
    "a": (1, 2, 1, 7),
    "b": (1, 7, 5, 7),
    "c": (5, 7, 8, 7),
    "d": (8, 2, 8, 7),
    "e": (5, 2, 8, 2),
    "f": (1, 2, 5, 2),
    "g": (5, 2, 5, 7),
}

_DIGIT_SEGMENTS = (
    "abcdef", "bc", "abged", "abgcd", "fgbc",
    "afgcd", "afgedc", "abc", "abcdefg", "abcdfg",
)

MINI_DIGITS_SIDE = 10


def render_glyph(digit: int, intensity: float = 1.0, shift: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Draw one mini digit as a (10, 10) array."""
    canvas = np.zeros((MINI_DIGITS_SIDE, MINI_DIGITS_SIDE))
    dy, dx = shift
    for name in _DIGIT_SEGMENTS[digit]:
        r0, c0, r1, c1 = _SEGMENTS[name]
        canvas[r0 + dy:r1 + dy + 1, c0 + dx:c1 + dx + 1] = intensity
    return canvas


def make_mini_digits(
    seed: int = 0,
    train_size: int = 2000,
    test_size: int = 400,
    noise: float = 0.08,
) -> tuple[LabeledDataset, LabeledDataset]:
    """
    Generate the bundled 10-class mini-digits fixture.

    Each sample is a seven-segment glyph shifted by up to one pixel in each
    direction, drawn at a random stroke intensity and covered with clipped
    Gaussian noise. The same seed always yields the same arrays.

    Returns:
        (train, test) datasets of 10x10 single-channel images
    """
    rng = np.random.default_rng(seed)

    def draw(count: int) -> LabeledDataset:
        labels = rng.permutation(np.arange(count) % 10)
        images = np.empty((count, MINI_DIGITS_SIDE * MINI_DIGITS_SIDE))
        for k, digit in enumerate(labels):
            shift = tuple(int(v) for v in rng.integers(-1, 2, size=2))
            glyph = render_glyph(int(digit), float(rng.uniform(0.75, 1.0)), shift)
            glyph += rng.normal(0.0, noise, size=glyph.shape)
            images[k] = np.clip(glyph, 0.0, 1.0).ravel()
        return LabeledDataset(images, labels, 10, (MINI_DIGITS_SIDE, MINI_DIGITS_SIDE, 1))

    train = draw(train_size)
    test = draw(test_size)
    logger.debug(f"[Dataset] Generated mini-digits: {train_size} train / {test_size} test (seed {seed})")
    return train, test


def _read_header(data: bytes, path: PathLike, expected_magics: tuple[int, ...]) -> tuple[int, list[int], int]:
    if len(data) < 4:
        raise IdxFormatError("file too short for the magic number", path, len(data))
    magic = struct.unpack(">I", data[:4])[0]
    if magic not in expected_magics:
        raise IdxFormatError(f"wrong magic number 0x{magic:08x}", path, 0)
    rank = magic & 0xFF
    header_end = 4 + 4 * rank
    if len(data) < header_end:
        raise IdxFormatError("truncated dimension header", path, len(data))
    dims = list(struct.unpack(f">{rank}I", data[4:header_end]))
    return magic, dims, header_end


def load_idx(images_path: PathLike, labels_path: PathLike, class_count: Optional[int] = None) -> LabeledDataset:
    """
    Parse an IDX image file and its label file into a dataset.

    Images are u8 tensors of rank 3 (N, rows, cols) or rank 4 (N, rows, cols,
    channels); bytes are divided by 255.

    Args:
        images_path: IDX file with magic 0x00000803 or 0x00000804
        labels_path: IDX file with magic 0x00000801
        class_count: Number of classes; defaults to the largest label + 1

    Raises:
        IdxFormatError: On wrong magic, truncation or a count mismatch
    """
    with open(images_path, "rb") as f:
        image_bytes = f.read()
    with open(labels_path, "rb") as f:
        label_bytes = f.read()

    magic, dims, offset = _read_header(image_bytes, images_path, (IDX_IMAGES_MAGIC, IDX_IMAGES_RGB_MAGIC))
    count, rows, cols = dims[:3]
    channels = dims[3] if magic == IDX_IMAGES_RGB_MAGIC else 1
    expected = offset + count * rows * cols * channels
    if len(image_bytes) < expected:
        raise IdxFormatError(
            f"truncated pixel data: expected {expected} bytes, found {len(image_bytes)}", images_path, len(image_bytes)
        )
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols * channels, offset=offset)

    _, (label_count,), label_offset = _read_header(label_bytes, labels_path, (IDX_LABELS_MAGIC,))
    if label_count != count:
        raise IdxFormatError(f"label count {label_count} does not match image count {count}", labels_path, 4)
    if len(label_bytes) < label_offset + label_count:
        raise IdxFormatError("truncated label data", labels_path, len(label_bytes))
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=label_count, offset=label_offset)

    if class_count is None:
        class_count = max(int(labels.max()) + 1 if labels.size else 2, 2)

    dataset = LabeledDataset(
        features=pixels.reshape(count, rows * cols * channels).astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        class_count=class_count,
        image_shape=(rows, cols, channels),
    )
    logger.info(f"[Dataset] Loaded {count} samples of {rows}x{cols}x{channels} from {images_path}")
    return dataset


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to bytes with round-half-up: floor(v*255 + 0.5)."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_idx(images_path: PathLike, labels_path: PathLike, dataset: LabeledDataset):
    """Write `dataset` as an IDX image/label file pair (8-bit quantized)."""
    rows, cols, channels = dataset.image_shape
    count = len(dataset)
    if channels == 1:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols)
    else:
        header = struct.pack(">IIIII", IDX_IMAGES_RGB_MAGIC, count, rows, cols, channels)
    atomic_write_bytes(images_path, header + quantize(dataset.features).tobytes())
    atomic_write_bytes(
        labels_path,
        struct.pack(">II", IDX_LABELS_MAGIC, count) + dataset.labels.astype(np.uint8).tobytes(),
    )
    logger.info(f"[Dataset] Wrote {count} samples to {images_path}")
