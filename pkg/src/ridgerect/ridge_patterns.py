"""Procedurally generated ridge-pattern images for tests and demos.

Real captures are not shipped with the toolkit; these patterns have the
statistics the pipeline needs (500-ppi-like ridge period, smooth orientation
flow, endings and bifurcations from phase dislocations, an elliptical
support on a white background) and come with an exact support mask.
"""

import numpy as np
from scipy import ndimage

from .preprocess import Mask

DEFAULT_PERIOD_PX = 9.0


def ridge_pattern(seed, size=512, period=DEFAULT_PERIOD_PX):
    """One synthetic print: (uint8 image, Mask).  Deterministic per seed.

    The ridge phase combines an off-center elliptical whorl with smooth
    random flow distortion, which yields curved ridges with a sprinkling of
    endings and bifurcations.  Ridges are dark on a white background.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    cx = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    cy = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    ax = rng.uniform(0.75, 1.3)
    ay = rng.uniform(0.75, 1.3)
    tilt = rng.uniform(0, np.pi)
    xr = (xx - cx) * np.cos(tilt) + (yy - cy) * np.sin(tilt)
    yr = -(xx - cx) * np.sin(tilt) + (yy - cy) * np.cos(tilt)
    radius = np.hypot(xr * ax, yr * ay)

    # Smooth phase noise produces dislocations (minutiae).
    noise = rng.normal(size=(size, size))
    noise = ndimage.gaussian_filter(noise, sigma=size / 16)
    noise *= rng.uniform(2.0, 4.0) / max(np.abs(noise).max(), 1e-9)
    phase = 2 * np.pi * radius / period + noise * np.pi

    gray = 127.5 * (1.0 - np.cos(phase))

    sup_ax = size * rng.uniform(0.30, 0.38)
    sup_ay = size * rng.uniform(0.34, 0.42)
    support = ((xx - size / 2) / sup_ax) ** 2 + ((yy - size / 2) / sup_ay) ** 2 <= 1.0
    img = np.where(support, gray, 255.0)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), Mask(support, "pixel")


def ridge_pattern_set(num_fingers, images_per_finger, size=512, seed=0, period=DEFAULT_PERIOD_PX):
    """A small gallery: {finger_id: [(image, mask), ...]}.

    Images of one finger share the ridge structure and differ by small pose
    jitter, mimicking repeated impressions.
    """
    gallery = {}
    for f in range(num_fingers):
        base_seed = seed * 100_003 + f
        impressions = []
        for i in range(images_per_finger):
            img, mask = ridge_pattern(base_seed, size=size, period=period)
            if i > 0:
                rng = np.random.default_rng(base_seed * 31 + i)
                shift = rng.integers(-size // 32, size // 32 + 1, size=2)
                img = np.roll(img, shift, axis=(0, 1))
                grid = np.roll(mask.to_pixel(), shift, axis=(0, 1))
                mask = Mask(grid, "pixel")
            impressions.append((img, mask))
        gallery[f"finger{f:03d}"] = impressions
    return gallery
