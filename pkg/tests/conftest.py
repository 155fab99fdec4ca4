import numpy as np
import pytest
from scipy import ndimage

from ridgerect.fields import DistortionField


def make_smooth_field(height_blocks, width_blocks, block_size_px, amplitude, seed, sigma=2.0):
    """Zero-mean smooth random field with the given peak amplitude in px."""
    rng = np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.normal(size=(height_blocks, width_blocks)), sigma)
    dy = ndimage.gaussian_filter(rng.normal(size=(height_blocks, width_blocks)), sigma)
    for a in (dx, dy):
        a -= a.mean()
    peak = max(np.abs(dx).max(), np.abs(dy).max())
    return DistortionField(dx / peak * amplitude, dy / peak * amplitude, block_size_px)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
