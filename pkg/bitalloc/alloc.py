# bitalloc/alloc.py
"""
Step map -> per-block bit ratio -> QP offset and lambda scale.

For block k with mean step QS_k the bit ratio is the reciprocal step,
normalized so its pixel-weighted mean is 1. Through the R-lambda model
``lambda = alpha * R ** beta`` the block multiplier becomes
``lambda_k = r_k ** beta_k * lambda`` and, with QP moving N units per
doubling of lambda, the offset is ``slope * N * beta_k * log2(r_k)``,
rounded half away from zero and clamped.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError, GridMismatchError, InputFormatError
from .gridio import read_grid, write_grid
from .imageio import BlockGrid, block_partition, ceil_div
from .stepnet import DOWNSAMPLE

logger = logging.getLogger(__name__)

QPMAP_TAG = 'QPMAP'
LSCALE_TAG = 'LSCALE'
BMAP_TAG = 'BMAP'

QP_RANGE = (0, 63)
DEFAULT_LAMBDA_TABLE = {37: 1.0, 32: 4.0, 27: 8.0, 22: 16.0}


def round_half_away(values):
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


@dataclass(frozen=True)
class AllocConfig:
    base_qp: int = 37
    beta: object = -1.367
    slope: float = 1.0
    clamp: float = 4
    n_const: int = 3
    block_size: int = 64
    eps: float = 1e-6
    lambda_table: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDA_TABLE))

    def __post_init__(self):
        if not QP_RANGE[0] <= self.base_qp <= QP_RANGE[1]:
            raise ConfigError(f"base QP {self.base_qp} outside {QP_RANGE[0]}..{QP_RANGE[1]}")
        if not self.slope > 0:
            raise ConfigError(f"slope must be positive, got {self.slope}")
        if not self.clamp >= 0:
            raise ConfigError(f"clamp must be non-negative, got {self.clamp}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.n_const == 0:
            raise ConfigError("n_const must be non-zero")
        if self.block_size < 1:
            raise ConfigError(f"block size must be positive, got {self.block_size}")
        if not np.isscalar(self.beta):
            beta = np.array(self.beta, dtype=np.float64)
            if beta.ndim != 2 or not np.all(np.isfinite(beta)):
                raise ConfigError("beta map must be a finite 2-D grid")
            beta.setflags(write=False)
            object.__setattr__(self, 'beta', beta)
        elif not math.isfinite(self.beta):
            raise ConfigError("beta must be finite")

    def beta_grid(self, grid):
        """Per-block beta, broadcasting a scalar."""
        if np.isscalar(self.beta):
            return np.full(grid.shape, float(self.beta))
        if self.beta.shape != grid.shape:
            raise GridMismatchError(
                f"beta map is {self.beta.shape[1]}x{self.beta.shape[0]} blocks, "
                f"image grid is {grid.blocks_x}x{grid.blocks_y}"
            )
        return self.beta

    def lambda_for_qp(self, qp=None):
        """Rate-alignment lambda for ``qp`` (default: base QP), or None."""
        return self.lambda_table.get(self.base_qp if qp is None else qp)

    def echo(self):
        """Every field, JSON-ready, for run manifests."""
        beta = float(self.beta) if np.isscalar(self.beta) else self.beta.tolist()
        return {
            'base_qp': self.base_qp,
            'beta': beta,
            'slope': self.slope,
            'clamp': self.clamp if math.isfinite(self.clamp) else None,
            'n_const': self.n_const,
            'block_size': self.block_size,
            'eps': self.eps,
            'lambda_table': {str(k): v for k, v in sorted(self.lambda_table.items())},
        }


@dataclass(frozen=True)
class QpMap:
    """Integer offsets per block plus the base QP they apply to."""
    grid: BlockGrid
    base_qp: int
    dqp: np.ndarray

    def __post_init__(self):
        dqp = np.array(self.dqp, dtype=np.int64)
        if dqp.shape != self.grid.shape:
            raise GridMismatchError(f"QP map shape {dqp.shape} does not match grid {self.grid.shape}")
        dqp.setflags(write=False)
        object.__setattr__(self, 'dqp', dqp)

    @property
    def qp(self):
        return self.base_qp + self.dqp

    @classmethod
    def zeros(cls, grid, base_qp):
        return cls(grid=grid, base_qp=base_qp, dqp=np.zeros(grid.shape, dtype=np.int64))

    def with_base(self, base_qp):
        return QpMap(grid=self.grid, base_qp=base_qp, dqp=self.dqp)


@dataclass(frozen=True)
class BlockRecord:
    index: int
    qs: float
    ratio: float
    beta: float
    dqp: int
    qp: int
    lambda_scale: float


@dataclass(frozen=True)
class BlockAllocation:
    """
    Per-block allocation, every array shaped like ``grid.shape`` (row-major).
    """
    grid: BlockGrid
    base_qp: int
    n_const: int
    qs: np.ndarray
    ratio: np.ndarray
    beta: np.ndarray
    dqp: np.ndarray
    lambda_scale: np.ndarray

    @property
    def qp(self):
        return self.base_qp + self.dqp

    def qp_map(self):
        return QpMap(grid=self.grid, base_qp=self.base_qp, dqp=self.dqp)

    def records(self):
        qp = self.qp
        for k, (r, c) in enumerate(np.ndindex(*self.grid.shape)):
            yield BlockRecord(
                index=k,
                qs=float(self.qs[r, c]),
                ratio=float(self.ratio[r, c]),
                beta=float(self.beta[r, c]),
                dqp=int(self.dqp[r, c]),
                qp=int(qp[r, c]),
                lambda_scale=float(self.lambda_scale[r, c]),
            )


@dataclass(frozen=True)
class LinearityReport:
    slope_through_origin: float
    r_squared: float
    n_blocks: int


# ============= per-block steps and ratios =============

def block_mean_step(step_map, grid):
    """
    Mean latent step over the cells each block overlaps.

    Latent cell (i, j) covers pixels [16j, 16j+16) x [16i, 16i+16); a 64-px
    block owns a 4x4 window and edge blocks average only what they overlap.
    """
    if not step_map.matches(grid.width, grid.height):
        raise DimensionError(
            f"step map {step_map.grid_w}x{step_map.grid_h} does not fit a "
            f"{grid.width}x{grid.height} image"
        )
    qs = np.empty(grid.shape, dtype=np.float64)
    values = step_map.values
    for by, bx in np.ndindex(*grid.shape):
        x0, y0 = bx * grid.block_size, by * grid.block_size
        x1 = min(x0 + grid.block_size, grid.width)
        y1 = min(y0 + grid.block_size, grid.height)
        window = values[y0 // DOWNSAMPLE:ceil_div(y1, DOWNSAMPLE), x0 // DOWNSAMPLE:ceil_div(x1, DOWNSAMPLE)]
        qs[by, bx] = window.mean()
    return qs


def _weighted_normalize(raw, grid):
    weights = grid.pixel_counts()
    mean = float(np.sum(raw * weights) / np.sum(weights))
    return raw / mean


def bit_ratios(qs, grid, eps=1e-6):
    """Reciprocal steps normalized to a pixel-weighted mean of 1."""
    qs = np.asarray(qs, dtype=np.float64)
    if qs.size == 0:
        raise InputFormatError("no blocks to normalize")
    if not np.all(np.isfinite(qs)):
        raise InputFormatError("block steps must be finite")
    qs = qs.reshape(grid.shape)
    raw = 1.0 / np.maximum(qs, eps)
    return _weighted_normalize(raw, grid)


def measured_bit_ratios(bits_per_block, grid, eps=1e-6):
    """
    Ratios from measured per-block bits instead of reciprocal steps.

    ``r_k = (bits_k / pixels_k) / (total bits / total pixels)``; blocks that
    produced no bits are floored at ``eps`` bits per pixel.
    """
    bits = np.asarray(bits_per_block, dtype=np.float64)
    if bits.size != len(grid):
        raise GridMismatchError(f"{bits.size} block bit counts for a {len(grid)}-block grid")
    bits = bits.reshape(grid.shape)
    if np.any(bits < 0) or not np.all(np.isfinite(bits)):
        raise InputFormatError("bit counts must be finite and non-negative")
    if bits.sum() <= 0:
        raise InputFormatError("total bits must be positive")
    density = np.maximum(bits / grid.pixel_counts(), eps)
    return _weighted_normalize(density, grid)


def raw_qp_offset(ratio, beta, cfg):
    """slope * N * beta * log2(r), before rounding and clamping."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if np.any(ratio <= 0):
        raise InputFormatError("bit ratio must be positive")
    return cfg.slope * cfg.n_const * np.asarray(beta, dtype=np.float64) * np.log2(ratio)


def qp_offset(ratio, beta, cfg):
    raw = raw_qp_offset(ratio, beta, cfg)
    dqp = np.clip(round_half_away(raw), -cfg.clamp, cfg.clamp).astype(np.int64)
    return int(dqp) if dqp.ndim == 0 else dqp


def lambda_adapt(dqp, n_const=3):
    """Multiplier for the frame lambda: 2 ** (dqp / N)."""
    scale = np.power(2.0, np.asarray(dqp, dtype=np.float64) / n_const)
    return float(scale) if scale.ndim == 0 else scale


def build_allocation(step_map, width, height, cfg, measured_bits=None):
    """
    Full chain: block means, ratios, offsets, lambda scales.

    With ``measured_bits`` the ratios come from real per-block bit counts and
    the step map only fills the ``qs`` field.
    """
    grid = block_partition(width, height, cfg.block_size)
    qs = block_mean_step(step_map, grid)
    if measured_bits is None:
        ratio = bit_ratios(qs, grid, cfg.eps)
    else:
        ratio = measured_bit_ratios(measured_bits, grid, cfg.eps)
    beta = cfg.beta_grid(grid)
    dqp = qp_offset(ratio, beta, cfg)
    scale = lambda_adapt(dqp, cfg.n_const)
    logger.debug(
        f"allocation {grid.blocks_x}x{grid.blocks_y} blocks, base QP {cfg.base_qp}, "
        f"dQP range [{dqp.min()}, {dqp.max()}]"
    )
    return BlockAllocation(
        grid=grid, base_qp=cfg.base_qp, n_const=cfg.n_const,
        qs=qs, ratio=ratio, beta=np.array(beta, dtype=np.float64),
        dqp=np.asarray(dqp, dtype=np.int64).reshape(grid.shape),
        lambda_scale=np.asarray(scale, dtype=np.float64).reshape(grid.shape),
    )


def zero_allocation(width, height, cfg):
    """Fixed-QP configuration: every offset 0, every lambda scale 1."""
    grid = block_partition(width, height, cfg.block_size)
    ones = np.ones(grid.shape)
    return BlockAllocation(
        grid=grid, base_qp=cfg.base_qp, n_const=cfg.n_const,
        qs=ones, ratio=ones, beta=np.array(cfg.beta_grid(grid), dtype=np.float64),
        dqp=np.zeros(grid.shape, dtype=np.int64), lambda_scale=ones,
    )


def linearity_fit(bits_per_block, qs):
    """
    Fit normalized bits against normalized reciprocal steps through the origin.
    """
    bits = np.asarray(bits_per_block, dtype=np.float64).ravel()
    qs = np.asarray(qs, dtype=np.float64).ravel()
    if bits.size != qs.size:
        raise DimensionError(f"{bits.size} bit counts for {qs.size} blocks")
    if bits.size < 2:
        raise InputFormatError("linearity fit needs at least 2 blocks")
    if np.any(bits < 0):
        raise InputFormatError("bit counts must be non-negative")
    if bits.mean() <= 0:
        raise InputFormatError("total bits must be positive")
    if np.any(qs <= 0):
        raise InputFormatError("block steps must be positive")

    inv = 1.0 / qs
    x = inv / inv.mean()
    y = bits / bits.mean()
    slope = float(np.dot(x, y) / np.dot(x, x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 0.0 if ss_tot == 0 else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return LinearityReport(slope_through_origin=slope, r_squared=r_squared, n_blocks=int(bits.size))


# ============= QPMAP / LSCALE / BMAP files =============

def write_qp_map(qp_map, path):
    g = qp_map.grid
    write_grid(path, QPMAP_TAG, (g.block_size, qp_map.base_qp), qp_map.dqp, kind='int')


def write_lambda_scales(allocation, path):
    g = allocation.grid
    write_grid(path, LSCALE_TAG, (g.block_size, allocation.base_qp), allocation.lambda_scale, kind='float')


def _grid_from_header(values, block_size, path, width=None, height=None):
    rows, cols = values.shape
    if block_size < 1:
        raise InputFormatError("block size must be positive", path)
    if width is None:
        return block_partition(cols * block_size, rows * block_size, block_size)
    grid = block_partition(width, height, block_size)
    if grid.shape != (rows, cols):
        raise GridMismatchError(
            f"file holds {cols}x{rows} blocks, a {width}x{height} image needs "
            f"{grid.blocks_x}x{grid.blocks_y}", path
        )
    return grid


def read_qp_map(path, width=None, height=None):
    """
    Read a QPMAP file. Without image dims the grid is taken as full blocks.
    """
    (block_size, base_qp), dqp = read_grid(path, QPMAP_TAG, header_len=2, kind='int')
    grid = _grid_from_header(dqp, block_size, path, width, height)
    return QpMap(grid=grid, base_qp=base_qp, dqp=dqp)


def read_lambda_scales(path):
    (block_size, base_qp), scales = read_grid(path, LSCALE_TAG, header_len=2, kind='float')
    return block_size, base_qp, scales


def write_beta_map(beta, block_size, path, base_qp=0):
    write_grid(path, BMAP_TAG, (block_size, base_qp), beta, kind='float')


def read_beta_map(path):
    """Returns ``(block_size, base_qp, beta grid)``. A base QP of 0 means unbound."""
    (block_size, base_qp), beta = read_grid(path, BMAP_TAG, header_len=2, kind='float')
    return block_size, base_qp, beta
