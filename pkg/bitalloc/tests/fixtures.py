# bitalloc/tests/fixtures.py
"""Deterministic images and network weights shared by the test suites."""
import numpy as np

from bitalloc.imageio import RasterImage
from bitalloc.stepnet import build_weights, reference_architecture

FIXTURE_WIDTH = 4

# one 1x1 conv, 3 -> 1, stride 1
SINGLE_CONV = "QSNW1\nlayers 1\nconv 3 1 1 1\n0.5 0.25 0.25\n0.0\n"


def fixture_weights(seed=0, width=FIXTURE_WIDTH):
    """Reference architecture at a reduced channel width, seeded."""
    return build_weights(reference_architecture(width), np.random.default_rng(seed))


def textured_image(width, height, seed=0, channels=3):
    """Smooth gradient plus per-region noise of varying strength."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = 128 + 60 * np.sin(xx / 23.0 + seed) * np.cos(yy / 17.0)
    # noise amplitude varies across the frame so blocks differ in cost
    amplitude = 5 + 40 * (xx / max(width - 1, 1)) * (yy / max(height - 1, 1))
    planes = [base + amplitude * rng.standard_normal((height, width)) for _ in range(channels)]
    samples = np.clip(np.rint(np.stack(planes, axis=-1)), 0, 255).astype(np.uint8)
    return RasterImage(samples)


def constant_image(width, height, value, channels=3):
    return RasterImage(np.full((height, width, channels), value, dtype=np.uint8))


def noisy_copy(img, sigma, seed=0):
    rng = np.random.default_rng(seed)
    noisy = img.samples.astype(np.float64) + sigma * rng.standard_normal(img.samples.shape)
    return RasterImage(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))
