# bitalloc/imageio.py
"""
Image loading/saving, BT.601 4:2:0 conversion and block partitioning.

Rounding in this module is half-up everywhere; it changes bytes, so it is
fixed here rather than left to numpy's banker's rounding.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ConfigError, DimensionError, ImageFormatError
from .gridio import atomic_write

logger = logging.getLogger(__name__)

# BT.601 limited range, 8-bit, coefficients scaled by 1/255
RGB_TO_YUV = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
YUV_OFFSET = np.array([16.0, 128.0, 128.0])
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

LUMA_RANGE = (16, 235)
CHROMA_RANGE = (16, 240)


def round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class RasterImage:
    """Interleaved 8-bit samples, shape (height, width, channels)."""
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 2:
            samples = samples[:, :, None]
        if samples.ndim != 3 or samples.shape[2] not in (1, 3):
            raise ImageFormatError(f"expected 1 or 3 channels, got shape {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ImageFormatError("image must be at least 1x1")
        if samples.dtype != np.uint8:
            if np.any(samples < 0) or np.any(samples > 255):
                raise ImageFormatError("sample values must lie in [0, 255]")
            samples = samples.astype(np.uint8)
        samples = np.ascontiguousarray(samples)
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]

    @property
    def channels(self):
        return self.samples.shape[2]

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.samples.shape == other.samples.shape and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class YuvFrame:
    luma: np.ndarray
    chroma_u: np.ndarray
    chroma_v: np.ndarray
    range_tag: str = 'limited'

    @property
    def width(self):
        return self.luma.shape[1]

    @property
    def height(self):
        return self.luma.shape[0]


@dataclass(frozen=True)
class BlockGrid:
    width: int
    height: int
    block_size: int

    @property
    def blocks_x(self):
        return -(-self.width // self.block_size)

    @property
    def blocks_y(self):
        return -(-self.height // self.block_size)

    @property
    def shape(self):
        """(rows, cols), the layout of every per-block array."""
        return self.blocks_y, self.blocks_x

    def __len__(self):
        return self.blocks_x * self.blocks_y

    def extents(self):
        """Row-major ``(x0, y0, w, h)`` for every block; edge blocks are partial."""
        b = self.block_size
        return [
            (bx * b, by * b, min(b, self.width - bx * b), min(b, self.height - by * b))
            for by in range(self.blocks_y)
            for bx in range(self.blocks_x)
        ]

    def pixel_counts(self):
        """Pixels per block, shaped like :attr:`shape`."""
        b = self.block_size
        widths = np.minimum(b, self.width - b * np.arange(self.blocks_x))
        heights = np.minimum(b, self.height - b * np.arange(self.blocks_y))
        return np.outer(heights, widths).astype(np.float64)


# ============= PPM =============

def _read_header_tokens(data, count, path):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated header", path)
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def parse_ppm(data, path=None):
    if data[:2] != b'P6':
        raise ImageFormatError(f"unsupported magic '{data[:2].decode('latin-1')}'", path)
    tokens, offset = _read_header_tokens(data, 4, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("non-numeric header field", path) from exc
    if width < 1 or height < 1:
        raise ImageFormatError("image dimensions must be positive", path)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval} (only 255)", path)
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise ImageFormatError(f"truncated payload: {len(payload)} of {expected} bytes", path)
    samples = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RasterImage(samples)


def load_ppm(path):
    """Load a binary P6 pixmap with maxval 255."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ImageFormatError("file not found", path) from exc
    except OSError as exc:
        raise ImageFormatError(f"cannot read image ({exc})", path) from exc
    img = parse_ppm(data, path)
    logger.debug(f"loaded {path}: {img.width}x{img.height}")
    return img


def format_ppm(img):
    if img.channels != 3:
        samples = np.repeat(img.samples, 3, axis=2)
    else:
        samples = img.samples
    header = f"P6\n{img.width} {img.height}\n255\n".encode('ascii')
    return header + samples.tobytes()


def save_ppm(img, path):
    """Write ``img`` as P6; single-channel images are replicated to RGB."""
    atomic_write(path, format_ppm(img))


def load_image(path):
    """P6 is read natively; anything else goes through Pillow."""
    path = Path(path)
    try:
        with path.open('rb') as fh:
            magic = fh.read(2)
    except FileNotFoundError as exc:
        raise ImageFormatError("file not found", path) from exc
    if magic == b'P6':
        return load_ppm(path)
    try:
        with Image.open(path) as pil:
            pil = pil.convert('L' if pil.mode in ('L', 'I;16', 'I') else 'RGB')
            return RasterImage(np.asarray(pil, dtype=np.uint8))
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"unsupported magic '{magic.decode('latin-1')}'", path) from exc


# ============= YUV 4:2:0 =============

def _box_average(plane):
    """2x2 mean; odd edges average only the samples present."""
    h, w = plane.shape
    ch, cw = -(-h // 2), -(-w // 2)
    padded = np.zeros((ch * 2, cw * 2))
    counts = np.zeros((ch * 2, cw * 2))
    padded[:h, :w] = plane
    counts[:h, :w] = 1.0
    sums = padded.reshape(ch, 2, cw, 2).sum(axis=(1, 3))
    n = counts.reshape(ch, 2, cw, 2).sum(axis=(1, 3))
    return sums / n


def rgb_to_yuv420(img):
    """BT.601 limited range conversion with 2x2 box-averaged chroma."""
    if img.channels != 3:
        raise ImageFormatError("rgb_to_yuv420 needs a 3-channel image")
    rgb = img.samples.astype(np.float64)
    yuv = rgb @ RGB_TO_YUV.T + YUV_OFFSET

    luma = np.clip(round_half_up(yuv[:, :, 0]), *LUMA_RANGE).astype(np.uint8)
    chroma_u = np.clip(round_half_up(_box_average(yuv[:, :, 1])), *CHROMA_RANGE).astype(np.uint8)
    chroma_v = np.clip(round_half_up(_box_average(yuv[:, :, 2])), *CHROMA_RANGE).astype(np.uint8)
    return YuvFrame(luma=luma, chroma_u=chroma_u, chroma_v=chroma_v)


def yuv420_to_rgb(frame):
    """Inverse of :func:`rgb_to_yuv420`; chroma is replicated 2x2."""
    h, w = frame.luma.shape
    u = np.repeat(np.repeat(frame.chroma_u, 2, axis=0), 2, axis=1)[:h, :w]
    v = np.repeat(np.repeat(frame.chroma_v, 2, axis=0), 2, axis=1)[:h, :w]
    yuv = np.stack([frame.luma, u, v], axis=-1).astype(np.float64) - YUV_OFFSET
    rgb = yuv @ YUV_TO_RGB.T
    return RasterImage(np.clip(round_half_up(rgb), 0, 255).astype(np.uint8))


def format_yuv420(frame):
    return frame.luma.tobytes() + frame.chroma_u.tobytes() + frame.chroma_v.tobytes()


def write_yuv420(frame, path):
    """Planar Y, then U, then V, row-major 8-bit; the reference encoder layout."""
    atomic_write(path, format_yuv420(frame))


def luma_plane(img):
    """The plane the allocation and the toy codec work on."""
    if img.channels == 1:
        return img.samples[:, :, 0]
    return rgb_to_yuv420(img).luma


def source_frame(img):
    """
    The 4:2:0 frame handed to an encoder. Its luma is :func:`luma_plane`;
    grey input gets neutral chroma.
    """
    if img.channels == 3:
        return rgb_to_yuv420(img)
    luma = img.samples[:, :, 0].copy()
    h, w = luma.shape
    neutral = np.full((-(-h // 2), -(-w // 2)), 128, dtype=np.uint8)
    return YuvFrame(luma=luma, chroma_u=neutral, chroma_v=neutral.copy())


# ============= blocks =============

def block_partition(width, height, block_size=64):
    if min(width, height, block_size) < 1:
        raise ConfigError(f"block_partition needs positive sizes, got {width}x{height}/{block_size}")
    return BlockGrid(width=int(width), height=int(height), block_size=int(block_size))


def check_same_size(a, b):
    if a.samples.shape != b.samples.shape:
        raise DimensionError(
            f"image size mismatch: {a.width}x{a.height}x{a.channels} "
            f"vs {b.width}x{b.height}x{b.channels}"
        )


def ceil_div(n, d):
    return -(-int(n) // int(d))
