# bitalloc/toysim.py
"""
Desk-scale intra codec proxy used to check what a QP map does to the rate.

Luma only: 8x8 orthonormal DCT, uniform quantization with the
``Q(qp) = 2 ** ((qp - 4) / 6)`` step law and order-0 exp-Golomb bit counts.
No prediction and no context modelling, so the rate reacts only to
quantization.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .alloc import BlockAllocation, QpMap, round_half_away
from .exceptions import ConfigError, DimensionError, GridFormatError, GridMismatchError
from .gridio import read_grid, write_grid
from .imageio import block_partition, round_half_up

logger = logging.getLogger(__name__)

BITS_TAG = 'BITS'
TU_SIZE = 8
_TU_AXES = (-2, -1)


@dataclass(frozen=True)
class ToyCodecConfig:
    tu_size: int = TU_SIZE
    block_size: int = 64

    def __post_init__(self):
        if self.tu_size != TU_SIZE:
            raise ConfigError(f"the proxy codec only supports {TU_SIZE}x{TU_SIZE} transforms")
        if self.block_size % self.tu_size:
            raise ConfigError(f"block size {self.block_size} is not a multiple of {self.tu_size}")


@dataclass(frozen=True)
class RdPoint:
    rate: float
    distortion: float
    quality: float
    per_block_bits: np.ndarray
    base_qp: int

    @property
    def total_bits(self):
        return int(self.per_block_bits.sum())


def qstep(qp):
    """Quantization step; doubles every 6 QP."""
    return np.power(2.0, (np.asarray(qp, dtype=np.float64) - 4.0) / 6.0)


def dct8_forward(block):
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-2:] != (TU_SIZE, TU_SIZE):
        raise DimensionError(f"expected {TU_SIZE}x{TU_SIZE} blocks, got {block.shape}")
    return dctn(block, type=2, norm='ortho', axes=_TU_AXES)


def dct8_inverse(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-2:] != (TU_SIZE, TU_SIZE):
        raise DimensionError(f"expected {TU_SIZE}x{TU_SIZE} blocks, got {coeffs.shape}")
    return idctn(coeffs, type=2, norm='ortho', axes=_TU_AXES)


def quantize(coeff, qp):
    levels = round_half_away(np.asarray(coeff, dtype=np.float64) / qstep(qp)).astype(np.int64)
    return int(levels) if levels.ndim == 0 else levels


def dequantize(level, qp):
    values = np.asarray(level, dtype=np.float64) * qstep(qp)
    return float(values) if values.ndim == 0 else values


def golomb_bits(level):
    """
    Order-0 exp-Golomb length of a signed level.

    Positive q maps to 2q - 1, non-positive q to -2q; the code for m takes
    2 * floor(log2(m + 1)) + 1 bits.
    """
    level = np.asarray(level, dtype=np.int64)
    mapped = np.where(level > 0, 2 * level - 1, -2 * level)
    # frexp gives m + 1 = f * 2**e with f in [0.5, 1), so floor(log2) = e - 1
    _, exponent = np.frexp((mapped + 1).astype(np.float64))
    bits = 2 * (exponent.astype(np.int64) - 1) + 1
    return int(bits) if bits.ndim == 0 else bits


def _to_tus(plane):
    """(H, W) padded plane -> (ty, tx, 8, 8)."""
    h, w = plane.shape
    return plane.reshape(h // TU_SIZE, TU_SIZE, w // TU_SIZE, TU_SIZE).swapaxes(1, 2)


def _from_tus(tus):
    ty, tx = tus.shape[:2]
    return tus.swapaxes(1, 2).reshape(ty * TU_SIZE, tx * TU_SIZE)


def _qp_grid(qp_map, grid):
    if isinstance(qp_map, BlockAllocation):
        qp_map = qp_map.qp_map()
    if isinstance(qp_map, QpMap):
        if qp_map.grid.shape != grid.shape or qp_map.grid.block_size != grid.block_size:
            raise GridMismatchError(
                f"QP map is {qp_map.grid.blocks_x}x{qp_map.grid.blocks_y} blocks of "
                f"{qp_map.grid.block_size}, image needs {grid.blocks_x}x{grid.blocks_y} "
                f"blocks of {grid.block_size}"
            )
        return np.asarray(qp_map.qp, dtype=np.int64), qp_map.base_qp
    qp = int(qp_map)
    return np.full(grid.shape, qp, dtype=np.int64), qp


def encode_image(luma, qp_map, cfg=None):
    """
    Encode a luma plane with a scalar QP, a :class:`QpMap` or a
    :class:`BlockAllocation`.

    Returns ``(RdPoint, reconstruction)``; the reconstruction is 8-bit and
    the distortion is measured on it.
    """
    cfg = cfg or ToyCodecConfig()
    luma = np.asarray(luma)
    if luma.ndim != 2 or min(luma.shape) < TU_SIZE:
        raise DimensionError(f"luma plane must be 2-D and at least {TU_SIZE}x{TU_SIZE}, got {luma.shape}")
    h, w = luma.shape
    grid = block_partition(w, h, cfg.block_size)
    block_qp, base_qp = _qp_grid(qp_map, grid)

    # pad to whole TUs by edge replication; padded TUs count towards the rate
    pad_h, pad_w = (-h) % TU_SIZE, (-w) % TU_SIZE
    plane = np.pad(luma.astype(np.float64), ((0, pad_h), (0, pad_w)), mode='edge')
    tus = _to_tus(plane)
    ty, tx = tus.shape[:2]

    per_tu = cfg.block_size // TU_SIZE
    tu_block_y = np.arange(ty) // per_tu
    tu_block_x = np.arange(tx) // per_tu
    tu_qp = block_qp[tu_block_y[:, None], tu_block_x[None, :]]
    step = qstep(tu_qp)[:, :, None, None]

    levels = round_half_away(dct8_forward(tus) / step).astype(np.int64)
    tu_bits = golomb_bits(levels).sum(axis=_TU_AXES)

    per_block_bits = np.zeros(grid.shape, dtype=np.int64)
    np.add.at(per_block_bits, (tu_block_y[:, None], tu_block_x[None, :]), tu_bits)

    recon = _from_tus(dct8_inverse(levels * step))[:h, :w]
    recon = np.clip(round_half_up(recon), 0, 255).astype(np.uint8)

    mse = float(np.mean((recon.astype(np.float64) - luma.astype(np.float64)) ** 2))
    quality = float('inf') if mse == 0 else 10.0 * np.log10(255.0 ** 2 / mse)
    point = RdPoint(
        rate=float(per_block_bits.sum()) / (w * h),
        distortion=mse,
        quality=float(quality),
        per_block_bits=per_block_bits,
        base_qp=base_qp,
    )
    logger.debug(f"encoded {w}x{h} at base QP {base_qp}: {point.rate:.4f} bpp, {point.quality:.3f} dB")
    return point, recon


def rd_sweep(luma, qps, qp_map=None, cfg=None):
    """
    One RdPoint per base QP; ``qp_map`` offsets (if any) ride on every base.
    """
    results = []
    for qp in qps:
        current = qp if qp_map is None else _rebase(qp_map, qp)
        results.append(encode_image(luma, current, cfg))
    return results


def _rebase(qp_map, base_qp):
    if isinstance(qp_map, BlockAllocation):
        qp_map = qp_map.qp_map()
    return qp_map.with_base(int(base_qp))


def write_block_bits(point, block_size, path):
    write_grid(path, BITS_TAG, (block_size, point.base_qp), point.per_block_bits, kind='int')


def read_block_bits(path):
    """Returns ``(block_size, base_qp, bits grid)``."""
    (block_size, base_qp), bits = read_grid(path, BITS_TAG, header_len=2, kind='int')
    if np.any(bits < 0):
        raise GridFormatError("negative bit count", path)
    return block_size, base_qp, bits
