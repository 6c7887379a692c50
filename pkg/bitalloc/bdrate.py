# bitalloc/bdrate.py
"""
Bjontegaard delta rate / delta quality between two rate-quality curves.

The default ("cubic") fits a least-squares cubic and integrates it in closed
form; "pchip" integrates a monotone piecewise cubic through the points.
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import PchipInterpolator

from .exceptions import CurveError, NoOverlapError
from .metrics import lpips_to_db

logger = logging.getLogger(__name__)

METRIC_TAGS = ('psnr', 'ssim', 'msssim', 'lpips_db')
MODES = ('cubic', 'pchip')
MIN_POINTS = 4
CSV_FIELDS = ('rate_bpp', 'quality')


@dataclass(frozen=True)
class RdCurve:
    """Points sorted by rate; qualities strictly increase with rate."""
    rates: tuple
    qualities: tuple
    metric_tag: str = 'psnr'

    @classmethod
    def from_points(cls, points, metric_tag='psnr'):
        if metric_tag not in METRIC_TAGS:
            raise CurveError(f"unknown metric tag '{metric_tag}'")
        points = sorted((float(r), float(q)) for r, q in points)
        if len(points) < MIN_POINTS:
            raise CurveError(f"need at least {MIN_POINTS} points for a cubic fit, got {len(points)}")
        rates = np.array([p[0] for p in points])
        qualities = np.array([p[1] for p in points])
        if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(qualities))):
            raise CurveError("curve values must be finite")
        if np.any(rates <= 0):
            raise CurveError("rates must be strictly positive")
        if np.any(np.diff(rates) <= 0):
            raise CurveError("rates must be distinct")
        if np.any(np.diff(qualities) <= 0):
            raise CurveError("quality must increase strictly with rate")
        return cls(rates=tuple(rates.tolist()), qualities=tuple(qualities.tolist()), metric_tag=metric_tag)

    @property
    def log_rates(self):
        return np.log10(np.array(self.rates))

    def scaled(self, rate_factor=1.0, quality_offset=0.0):
        return RdCurve.from_points(
            [(r * rate_factor, q + quality_offset) for r, q in zip(self.rates, self.qualities)],
            self.metric_tag,
        )


@dataclass(frozen=True)
class BdResult:
    bd_rate_percent: float
    bd_quality: float
    overlap: tuple
    rate_overlap: tuple
    mode: str
    fit_residuals: dict

    def as_dict(self, diagnostics=False):
        data = {
            'bd_rate_percent': self.bd_rate_percent,
            'bd_quality': self.bd_quality,
            'overlap': list(self.overlap),
        }
        if diagnostics:
            data['diagnostics'] = {
                'mode': self.mode,
                'rate_overlap': list(self.rate_overlap),
                'fit_residuals': dict(self.fit_residuals),
            }
        return data


@dataclass(frozen=True)
class CubicFit:
    """Cubic in a centred/scaled variable ``(x - centre) / scale``."""
    poly: Polynomial
    centre: float
    scale: float
    residual_rms: float

    def integrate(self, lo, hi):
        antiderivative = self.poly.integ()
        a = (lo - self.centre) / self.scale
        b = (hi - self.centre) / self.scale
        return float(antiderivative(b) - antiderivative(a)) * self.scale


def fit_cubic(x, y):
    """Least-squares cubic via the normal equations on a conditioned abscissa."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    centre = float(x.mean())
    scale = float(np.max(np.abs(x - centre))) or 1.0
    t = (x - centre) / scale
    vander = np.vander(t, 4, increasing=True)
    try:
        coeffs = np.linalg.solve(vander.T @ vander, vander.T @ y)
    except np.linalg.LinAlgError as exc:
        raise CurveError("cubic fit is singular (repeated abscissae?)") from exc
    poly = Polynomial(coeffs)
    residual = float(np.sqrt(np.mean((poly(t) - y) ** 2)))
    return CubicFit(poly=poly, centre=centre, scale=scale, residual_rms=residual)


def _overlap(a, b, what):
    lo = max(min(a), min(b))
    hi = min(max(a), max(b))
    if not hi > lo:
        raise NoOverlapError(f"{what} ranges do not overlap ([{min(a)}, {max(a)}] vs [{min(b)}, {max(b)}])")
    return lo, hi


def _integral(x, y, lo, hi, mode):
    """Integral of y(x) over [lo, hi] plus the fit residual."""
    if mode == 'cubic':
        fit = fit_cubic(x, y)
        return fit.integrate(lo, hi), fit.residual_rms
    if mode == 'pchip':
        return float(PchipInterpolator(x, y).integrate(lo, hi)), 0.0
    raise CurveError(f"unknown interpolation mode '{mode}'")


def _check_pair(anchor, test):
    if anchor.metric_tag != test.metric_tag:
        raise CurveError(f"metric mismatch: {anchor.metric_tag} vs {test.metric_tag}")


def bd_rate(anchor, test, mode='cubic'):
    """Average rate difference (%) of ``test`` against ``anchor`` at equal quality."""
    return _bd_rate(anchor, test, mode)[0]


def _bd_rate(anchor, test, mode):
    _check_pair(anchor, test)
    lo, hi = _overlap(anchor.qualities, test.qualities, "quality")
    int_anchor, res_anchor = _integral(anchor.qualities, anchor.log_rates, lo, hi, mode)
    int_test, res_test = _integral(test.qualities, test.log_rates, lo, hi, mode)
    avg_log_diff = (int_test - int_anchor) / (hi - lo)
    return (10.0 ** avg_log_diff - 1.0) * 100.0, (lo, hi), (res_anchor, res_test)


def bd_quality(anchor, test, mode='cubic'):
    """Average quality difference of ``test`` against ``anchor`` at equal rate."""
    return _bd_quality(anchor, test, mode)[0]


def _bd_quality(anchor, test, mode):
    _check_pair(anchor, test)
    lo, hi = _overlap(anchor.log_rates, test.log_rates, "log-rate")
    int_anchor, res_anchor = _integral(anchor.log_rates, anchor.qualities, lo, hi, mode)
    int_test, res_test = _integral(test.log_rates, test.qualities, lo, hi, mode)
    return (int_test - int_anchor) / (hi - lo), (lo, hi), (res_anchor, res_test)


def compare(anchor, test, mode='cubic'):
    """Both deltas plus diagnostics."""
    rate, q_overlap, rate_res = _bd_rate(anchor, test, mode)
    quality, r_overlap, quality_res = _bd_quality(anchor, test, mode)
    result = BdResult(
        bd_rate_percent=rate,
        bd_quality=quality,
        overlap=q_overlap,
        rate_overlap=(10.0 ** r_overlap[0], 10.0 ** r_overlap[1]),
        mode=mode,
        fit_residuals={
            'anchor_log_rate': rate_res[0], 'test_log_rate': rate_res[1],
            'anchor_quality': quality_res[0], 'test_quality': quality_res[1],
        },
    )
    logger.debug(
        f"bd-rate {rate:.4f}% bd-quality {quality:.6f} over quality [{q_overlap[0]}, {q_overlap[1]}] "
        f"and rate [{result.rate_overlap[0]:.6g}, {result.rate_overlap[1]:.6g}] bpp; fit residuals "
        + " ".join(f"{name}={value:.3g}" for name, value in result.fit_residuals.items())
    )
    return result


def read_rd_csv(path, metric_tag='psnr'):
    """
    Read ``rate_bpp,quality`` rows (extra columns are ignored).

    ``metric_tag='lpips'`` marks raw LPIPS values, converted to dB here.
    """
    raw_lpips = metric_tag == 'lpips'
    tag = 'lpips_db' if raw_lpips else metric_tag
    points = []
    try:
        with Path(path).open(newline='', encoding='utf-8') as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or any(f not in reader.fieldnames for f in CSV_FIELDS):
                raise CurveError(f"CSV header must contain {','.join(CSV_FIELDS)}", path)
            for line, row in enumerate(reader, start=2):
                try:
                    rate = float(row['rate_bpp'])
                    quality = float(row['quality'])
                except (TypeError, ValueError) as exc:
                    raise CurveError(f"bad number on line {line}", path) from exc
                if raw_lpips:
                    quality = lpips_to_db(quality)
                points.append((rate, quality))
    except FileNotFoundError as exc:
        raise CurveError("file not found", path) from exc
    except CurveError as exc:
        if exc.path is None:
            raise CurveError(str(exc), path) from exc
        raise
    if any(math.isinf(q) for _, q in points):
        raise CurveError("infinite quality value (lossless point?)", path)
    return RdCurve.from_points(points, tag)
