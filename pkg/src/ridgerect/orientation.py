"""Block-wise ridge orientation: estimation, 180-class encoding, coherence.

Angle convention: orientations are undirected and reported as the angle of
the *ridge normal* (the dominant gray-level gradient direction), measured
from the +x axis toward +y (image rows grow downward), in degrees in
[-90, 90).  A vertical grating (ridges along y, intensity varying along x)
has angle 0.
"""

import struct

import numpy as np
from scipy import ndimage

from .errors import FileFormatError, RangeError, ShapeMismatch

ORIENTATION_MAGIC = b"ORNT1"
NUM_CLASSES = 180


def estimate_orientation(image, block=16):
    """Structure-tensor orientation per block, degrees in [-90, 90).

    Low-energy blocks fall back to angle 0; callers are expected to mask
    them out.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h % block or w % block:
        raise ShapeMismatch(f"image {img.shape} not divisible into {block}-px blocks")
    gy, gx = np.gradient(img)
    sxx = _block_sum(gx * gx, block)
    syy = _block_sum(gy * gy, block)
    sxy = _block_sum(gx * gy, block)
    angles = 0.5 * np.degrees(np.arctan2(2.0 * sxy, sxx - syy))
    energy = sxx + syy
    angles[energy <= 1e-12] = 0.0
    angles[angles >= 90.0] -= 180.0
    angles[angles < -90.0] += 180.0
    return angles


def _block_sum(arr, block):
    h, w = arr.shape
    return arr.reshape(h // block, block, w // block, block).sum(axis=(1, 3))


def angle_to_class(angle):
    """Bin an angle in [-90, 90) into one of 180 one-degree classes."""
    angle = np.asarray(angle, dtype=np.float64)
    if np.any(angle < -90.0) or np.any(angle >= 90.0):
        raise RangeError("angle outside [-90, 90)")
    cls = np.floor(angle + 90.0).astype(np.int64)
    return np.clip(cls, 0, NUM_CLASSES - 1)


def class_to_angle(cls):
    """Bin center of a class index: class 90 -> 0.5 degrees."""
    cls = np.asarray(cls)
    if np.any(cls < 0) or np.any(cls >= NUM_CLASSES):
        raise RangeError("class index outside [0, 179]")
    return cls.astype(np.float64) - 90.0 + 0.5


def classes_to_one_hot(cls):
    """(H, W) class grid -> (H, W, 180) one-hot probabilities."""
    cls = np.asarray(cls)
    out = np.zeros(cls.shape + (NUM_CLASSES,), dtype=np.float64)
    idx = np.indices(cls.shape)
    out[(*idx, cls)] = 1.0
    return out


def orientation_vectors(probs):
    """Per-cell mean double-angle unit-vector components (d_cos, d_sin, norm).

    Component t (1-based) of the probability vector maps to the unit vector
    at 360*t/T degrees, which doubles undirected orientations so that
    orthogonal orientations cancel.
    """
    probs = np.asarray(probs, dtype=np.float64)
    t = probs.shape[-1]
    ang = np.deg2rad(360.0 * np.arange(1, t + 1) / t)
    d_cos = probs @ np.cos(ang) / t
    d_sin = probs @ np.sin(ang) / t
    return d_cos, d_sin, np.hypot(d_cos, d_sin)


def coherence(probs, guard=1e-12):
    """Local orientation coherence map in [0, 1].

    Per cell: the norm of the 3x3 box-summed mean orientation vector divided
    by the 3x3 box sum of per-cell norms (all-one kernel, clamp-to-edge
    borders).  Cells whose denominator falls below ``guard`` are vacuously
    coherent and get 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ShapeMismatch("probability grid must be (H, W, T)")
    d_cos, d_sin, d_norm = orientation_vectors(probs)
    num = np.hypot(_box3(d_cos), _box3(d_sin))
    den = _box3(d_norm)
    coh = np.ones_like(num)
    ok = den >= guard
    coh[ok] = num[ok] / den[ok]
    return coh


def _box3(arr):
    # 3x3 all-one kernel with clamp-to-edge borders.
    return ndimage.uniform_filter(arr, size=3, mode="nearest") * 9.0


def save_orientation(path, angles, block_size_px=16):
    """Write an angle grid in the ORNT1 binary format."""
    angles = np.asarray(angles, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(ORIENTATION_MAGIC)
        fh.write(struct.pack("<III", angles.shape[1], angles.shape[0], block_size_px))
        fh.write(angles.astype("<f4").tobytes(order="C"))


def load_orientation(path):
    """Read an ORNT1 file; returns (angles, block_size_px)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != ORIENTATION_MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {ORIENTATION_MAGIC!r}")
        w, h, bs = struct.unpack("<III", fh.read(12))
        payload = fh.read(4 * h * w)
        if len(payload) != 4 * h * w:
            raise FileFormatError("truncated orientation payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64), bs
