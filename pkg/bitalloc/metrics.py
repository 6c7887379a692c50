# bitalloc/metrics.py
"""
Full-reference quality metrics: PSNR, SSIM, MS-SSIM and the LPIPS dB scale.

Colour inputs are scored per channel and averaged; ``luma_only`` scores the
BT.601 luma plane instead.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from .exceptions import InputFormatError
from .imageio import RasterImage, check_same_size, luma_plane

logger = logging.getLogger(__name__)

DATA_RANGE = 255.0
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = (K1 * DATA_RANGE) ** 2
C2 = (K2 * DATA_RANGE) ** 2

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIZE = WINDOW_SIZE * 2 ** (len(MS_SSIM_WEIGHTS) - 1)


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: Optional[float]
    ms_ssim: Optional[float]
    lpips_db: Optional[float] = None


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


_WINDOW = gaussian_window()


def _planes(img, luma_only):
    if luma_only:
        return [luma_plane(img).astype(np.float64)]
    return [img.samples[:, :, c].astype(np.float64) for c in range(img.channels)]


def psnr(a, b):
    """PSNR over all samples; identical inputs give ``inf``."""
    check_same_size(a, b)
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    mse = float(np.mean(diff ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def _filter(x):
    return convolve2d(x, _WINDOW, mode='valid')


def _ssim_terms(x, y):
    """Mean SSIM and mean contrast-structure term for one plane pair."""
    mu_x = _filter(x)
    mu_y = _filter(y)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = _filter(x * x) - mu_xx
    sigma_yy = _filter(y * y) - mu_yy
    sigma_xy = _filter(x * y) - mu_xy

    cs_map = (2 * sigma_xy + C2) / (sigma_xx + sigma_yy + C2)
    luminance = (2 * mu_xy + C1) / (mu_xx + mu_yy + C1)
    return float(np.mean(luminance * cs_map)), float(np.mean(cs_map))


def _check_min_size(img, minimum, what):
    if min(img.width, img.height) < minimum:
        raise InputFormatError(f"{what} needs images of at least {minimum}x{minimum}, got {img.width}x{img.height}")


def ssim(a, b, luma_only=False):
    check_same_size(a, b)
    _check_min_size(a, WINDOW_SIZE, "SSIM")
    values = [_ssim_terms(x, y)[0] for x, y in zip(_planes(a, luma_only), _planes(b, luma_only))]
    return float(np.mean(values))


def _downsample(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _ms_ssim_plane(x, y):
    value = 1.0
    last = len(MS_SSIM_WEIGHTS) - 1
    for scale, weight in enumerate(MS_SSIM_WEIGHTS):
        full, cs = _ssim_terms(x, y)
        if scale == last:
            # top scale: mean of luminance * cs
            value *= max(full, 0.0) ** weight
        else:
            value *= max(cs, 0.0) ** weight
            x, y = _downsample(x), _downsample(y)
    return value


def ms_ssim(a, b, luma_only=False):
    """Five-scale MS-SSIM; negative per-scale terms are clipped to 0."""
    check_same_size(a, b)
    _check_min_size(a, MS_SSIM_MIN_SIZE, "MS-SSIM")
    values = [_ms_ssim_plane(x, y) for x, y in zip(_planes(a, luma_only), _planes(b, luma_only))]
    return float(np.mean(values))


def lpips_to_db(value):
    """-10 log10(LPIPS), the higher-is-better scale used for BD-rate."""
    value = float(value)
    if not value > 0:
        raise InputFormatError(f"LPIPS value must be positive, got {value}")
    return -10.0 * math.log10(value)


def evaluate(ref, test, luma_only=False, lpips=None):
    """
    All metrics for one pair; SSIM/MS-SSIM are None when the images are too
    small for their windows.
    """
    if not isinstance(ref, RasterImage) or not isinstance(test, RasterImage):
        raise TypeError("evaluate expects RasterImage inputs")
    check_same_size(ref, test)
    smallest = min(ref.width, ref.height)
    ssim_value = ssim(ref, test, luma_only) if smallest >= WINDOW_SIZE else None
    ms_value = ms_ssim(ref, test, luma_only) if smallest >= MS_SSIM_MIN_SIZE else None
    if ms_value is None:
        logger.warning(f"{ref.width}x{ref.height} is below the MS-SSIM minimum of {MS_SSIM_MIN_SIZE}")
    if luma_only:
        ref_l = RasterImage(luma_plane(ref))
        test_l = RasterImage(luma_plane(test))
        psnr_value = psnr(ref_l, test_l)
    else:
        psnr_value = psnr(ref, test)
    return MetricReport(
        psnr=psnr_value,
        ssim=ssim_value,
        ms_ssim=ms_value,
        lpips_db=lpips_to_db(lpips) if lpips is not None else None,
    )

