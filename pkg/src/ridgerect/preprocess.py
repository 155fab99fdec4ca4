"""Fingerprint preprocessing: enhancement, binarization, thinning, mask, centering.

The default pipeline reduces a raw grayscale print to a 1-px ridge skeleton,
a single-component segmentation mask, and the integer centering shift that
moves the mask centroid onto the image center.  The same shift must later be
applied to the raw image before rectification.
"""

import cv2
import numpy as np
from scipy import ndimage
from skimage.morphology import thin as _guo_hall_thin

from .errors import EmptyForeground, FlatImage, ShapeMismatch
from .orientation import estimate_orientation

PREPROCESS_MODES = ("enhance", "binarize", "thin")

MIN_RIDGE_PERIOD = 5.0
MAX_RIDGE_PERIOD = 15.0
NUM_GABOR_ORIENTATIONS = 8
NUM_GABOR_PERIODS = 6


class Mask:
    """Binary foreground mask at pixel or block16 resolution."""

    def __init__(self, grid, resolution_tag="pixel"):
        if resolution_tag not in ("pixel", "block16"):
            raise ShapeMismatch(f"unknown resolution tag {resolution_tag!r}")
        self.grid = np.asarray(grid).astype(bool)
        self.resolution_tag = resolution_tag

    @property
    def area(self):
        return int(self.grid.sum())

    def to_pixel(self, block_size_px=16):
        if self.resolution_tag == "pixel":
            return self.grid
        return np.kron(self.grid, np.ones((block_size_px, block_size_px), dtype=bool))

    def to_blocks(self, block_size_px=16, threshold=0.5):
        if self.resolution_tag == "block16":
            return self.grid
        h, w = self.grid.shape
        if h % block_size_px or w % block_size_px:
            raise ShapeMismatch("mask size must be a multiple of the block size")
        pooled = self.grid.reshape(
            h // block_size_px, block_size_px, w // block_size_px, block_size_px
        ).mean(axis=(1, 3))
        return pooled >= threshold

    def centroid(self):
        """(x, y) centroid of the foreground in grid units."""
        ys, xs = np.nonzero(self.grid)
        if xs.size == 0:
            raise EmptyForeground("mask has no foreground")
        return float(xs.mean()), float(ys.mean())


class PreprocessedSample:
    """Network-ready preprocessed image, its mask, and the centering shift."""

    def __init__(self, skeleton, mask, centering_offset):
        self.skeleton = skeleton
        self.mask = mask
        self.centering_offset = (int(centering_offset[0]), int(centering_offset[1]))


def _dynamic_range(img):
    return int(img.max()) - int(img.min()) if img.size else 0


def _local_ridge_periods(img, block=16, window=32):
    """Dominant local ridge period per block via windowed FFT, px/ridge."""
    h, w = img.shape
    hb, wb = h // block, w // block
    pad = (window - block) // 2
    padded = np.pad(img, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, (window, window))[::block, ::block]
    win = win[:hb, :wb].astype(np.float64)
    win = win - win.mean(axis=(-2, -1), keepdims=True)
    taper = np.hanning(window)
    win = win * taper[None, None, :, None] * taper[None, None, None, :]
    spec = np.abs(np.fft.fft2(win))
    fy = np.fft.fftfreq(window)
    fx = np.fft.fftfreq(window)
    rad = np.hypot(fy[:, None], fx[None, :])
    band = (rad >= 1.0 / MAX_RIDGE_PERIOD) & (rad <= 1.0 / MIN_RIDGE_PERIOD)
    spec_band = np.where(band[None, None], spec, 0.0)
    flat_idx = spec_band.reshape(hb, wb, -1).argmax(axis=-1)
    peak_rad = rad.ravel()[flat_idx]
    energy = spec_band.reshape(hb, wb, -1).max(axis=-1)
    periods = np.where(peak_rad > 0, 1.0 / np.maximum(peak_rad, 1e-9), 0.0)
    good = (energy > 0) & (periods >= MIN_RIDGE_PERIOD) & (periods <= MAX_RIDGE_PERIOD)
    fallback = np.median(periods[good]) if good.any() else 9.0
    periods[~good] = fallback
    return np.clip(periods, MIN_RIDGE_PERIOD, MAX_RIDGE_PERIOD)


def enhance(image, block=16):
    """Contextual Gabor enhancement steered by block orientation and period.

    Orientations are quantized to 8 bins and periods to 6 levels inside
    [5, 15] px/ridge; each (orientation, period) pair is one filtering pass
    and pixels take the response of their block's pair.  Output is
    normalized to the full 8-bit range.
    """
    img = np.asarray(image)
    if _dynamic_range(img) < 4:
        raise FlatImage("image dynamic range below 4 gray levels")
    h, w = img.shape
    if h % block or w % block:
        raise ShapeMismatch(f"image {img.shape} not divisible into {block}-px blocks")
    norm = (img.astype(np.float64) - img.mean()) / max(img.std(), 1e-6)

    angles = estimate_orientation(norm, block=block)
    periods = _local_ridge_periods(norm, block=block)

    bin_width = 180.0 / NUM_GABOR_ORIENTATIONS
    theta_bin = np.floor((angles + 90.0) / bin_width).astype(int) % NUM_GABOR_ORIENTATIONS
    period_levels = np.linspace(MIN_RIDGE_PERIOD, MAX_RIDGE_PERIOD, NUM_GABOR_PERIODS)
    period_bin = np.abs(periods[..., None] - period_levels).argmin(axis=-1)

    out = np.zeros_like(norm)
    theta_px = np.kron(theta_bin, np.ones((block, block), dtype=int))
    period_px = np.kron(period_bin, np.ones((block, block), dtype=int))
    for ti in np.unique(theta_bin):
        theta = np.deg2rad(-90.0 + (ti + 0.5) * bin_width)
        for pi in np.unique(period_bin[theta_bin == ti]):
            lam = period_levels[pi]
            sigma = 0.5 * lam
            ksize = 2 * int(np.ceil(2.5 * sigma)) + 1
            kernel = cv2.getGaborKernel((ksize, ksize), sigma, theta, lam, 0.5, 0.0)
            kernel -= kernel.mean()
            resp = cv2.filter2D(norm, -1, kernel, borderType=cv2.BORDER_REFLECT)
            sel = (theta_px == ti) & (period_px == pi)
            out[sel] = resp[sel]

    lo, hi = out.min(), out.max()
    if hi - lo < 1e-9:
        raise FlatImage("enhancement produced a flat response")
    return np.rint((out - lo) / (hi - lo) * 255.0).astype(np.uint8)


def binarize(image, window=25):
    """Local mean threshold; dark pixels (ridges) become foreground."""
    img = np.asarray(image, dtype=np.float64)
    local_mean = ndimage.uniform_filter(img, size=window, mode="nearest")
    return img < np.maximum(local_mean, 1.0)


def thin(binary):
    """Morphological thinning to a 1-px-wide 8-connected skeleton."""
    binary = np.asarray(binary).astype(bool)
    if not binary.any():
        return np.zeros_like(binary)
    return _guo_hall_thin(binary)


def segment(image, block=16):
    """Block-wise gradient-energy mask: threshold, largest component, fill holes.

    Accepts grayscale or binary input and returns a pixel-resolution
    :class:`Mask` whose foreground is one connected component without holes.
    """
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if _dynamic_range(img) < 4:
        raise EmptyForeground("image has no usable contrast")
    h, w = img.shape
    if h % block or w % block:
        raise ShapeMismatch(f"image {img.shape} not divisible into {block}-px blocks")
    gy, gx = np.gradient(img.astype(np.float64))
    energy = (gx * gx + gy * gy).reshape(h // block, block, w // block, block).sum(axis=(1, 3))
    positive = energy[energy > 0]
    if positive.size == 0:
        raise EmptyForeground("no block has gradient energy")
    thresh = _otsu(energy)
    fg = energy > thresh
    if not fg.any():
        raise EmptyForeground("no block exceeds the gradient threshold")
    labels, count = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, count + 1))
    keep = labels == (1 + int(np.argmax(sizes)))
    keep = ndimage.binary_fill_holes(keep)
    return Mask(np.kron(keep, np.ones((block, block), dtype=bool)), "pixel")


def _otsu(values):
    """Otsu threshold over a value array (256-bin histogram)."""
    v = values.ravel().astype(np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return lo
    hist, edges = np.histogram(v, bins=256, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2
    weight1 = np.cumsum(hist)
    weight2 = weight1[-1] - weight1
    with np.errstate(divide="ignore", invalid="ignore"):
        mean1 = np.cumsum(hist * centers) / weight1
        mean2 = (np.cumsum((hist * centers)[::-1])[::-1]) / np.maximum(weight2, 1)
    var_between = weight1[:-1] * weight2[:-1] * (mean1[:-1] - mean2[:-1]) ** 2
    var_between = np.nan_to_num(var_between)
    return centers[np.argmax(var_between)]


def shift_image(image, offset, fill=0):
    """Integer translation by (dx, dy) with constant fill."""
    dx, dy = int(offset[0]), int(offset[1])
    out = np.full_like(image, fill)
    h, w = image.shape
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    out[ys_dst, xs_dst] = image[ys_src, xs_src]
    return out


def center(image, mask):
    """Shift image and mask so the mask centroid lands on the image center.

    The integer (dx, dy) shift is recorded so the raw image can later be
    centered by the same displacement.
    """
    mask_px = mask.to_pixel() if isinstance(mask, Mask) else np.asarray(mask).astype(bool)
    if not mask_px.any():
        raise EmptyForeground("cannot center an empty mask")
    h, w = mask_px.shape
    cx, cy = Mask(mask_px).centroid()
    dx = int(np.rint((w - 1) / 2.0 - cx))
    dy = int(np.rint((h - 1) / 2.0 - cy))
    shifted_img = shift_image(image, (dx, dy), fill=0)
    shifted_mask = Mask(shift_image(mask_px, (dx, dy), fill=False), "pixel")
    return PreprocessedSample(shifted_img, shifted_mask, (dx, dy))


def preprocess_image(image, mode="thin", block=16, do_center=True):
    """Full strategy-A chain: enhance, segment, reduce per mode, center.

    Returns a :class:`PreprocessedSample`; ``skeleton`` holds the
    mode-dependent network input (grayscale for ``enhance``, {0, 255} for
    ``binarize``/``thin``), blanked outside the dilated mask.
    """
    if mode not in PREPROCESS_MODES:
        raise ShapeMismatch(f"mode must be one of {PREPROCESS_MODES}, got {mode!r}")
    enhanced = enhance(image, block=block)
    mask = segment(enhanced, block=block)
    mask_px = mask.to_pixel()
    dilated = ndimage.binary_dilation(mask_px, iterations=2)
    if mode == "enhance":
        prep = np.where(dilated, enhanced, 0).astype(np.uint8)
    elif mode == "binarize":
        prep = (binarize(enhanced) & dilated).astype(np.uint8) * 255
    else:
        prep = (thin(binarize(enhanced)) & dilated).astype(np.uint8) * 255
    if not do_center:
        return PreprocessedSample(prep, mask, (0, 0))
    return center(prep, mask)
