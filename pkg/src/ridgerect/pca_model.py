"""Statistical distortion model: PCA over displacement fields.

Fields are flattened as ``concat(dx.ravel(), dy.ravel())`` and modeled by
standard PCA.  Synthesis draws a field as

    F = F0 + sum_i c_i * sqrt(lambda_i) * E_i

with unit-norm eigenvector fields ``E_i`` and unitless coefficients ``c_i``
sampled uniformly from ``[-c_max, c_max]`` (default 2.0, 8 components).
"""

import struct

import numpy as np

from .errors import (
    FileFormatError,
    InsufficientSamples,
    LengthMismatch,
    ShapeMismatch,
    ZeroVariance,
)
from .fields import DistortionField

MODEL_MAGIC = b"DPCA1"

DEFAULT_NUM_COMPONENTS = 8
DEFAULT_COEFF_RANGE = 2.0


class PcaDistortionModel:
    """Mean field, eigenvalues (descending), and unit-norm component fields."""

    def __init__(self, mean_field, eigenvalues, components):
        self.mean_field = mean_field
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.components = list(components)
        if np.any(np.diff(self.eigenvalues) > 1e-12):
            raise ShapeMismatch("eigenvalues must be sorted descending")
        if np.any(self.eigenvalues < -1e-9):
            raise ShapeMismatch("eigenvalues must be nonnegative")
        self.eigenvalues = np.clip(self.eigenvalues, 0.0, None)
        for comp in self.components:
            if comp.shape != mean_field.shape or comp.block_size_px != mean_field.block_size_px:
                raise ShapeMismatch("components must share the mean field's grid")

    @property
    def num_components(self):
        return len(self.components)

    @property
    def grid_shape(self):
        return self.mean_field.shape

    def component_matrix(self):
        """Components as rows of a (t, 2*H*W) matrix."""
        return np.stack([_flatten(c) for c in self.components]) if self.components else np.zeros((0, 2 * self.mean_field.dx.size))

    def project(self, field):
        """Coefficients of a field in this model (zero where a component has no variance)."""
        if field.shape != self.grid_shape:
            raise ShapeMismatch("field grid does not match model grid")
        delta = _flatten(field) - _flatten(self.mean_field)
        raw = self.component_matrix() @ delta
        scale = np.sqrt(self.eigenvalues)
        coeffs = np.zeros(self.num_components)
        nz = scale > 0
        coeffs[nz] = raw[nz] / scale[nz]
        return coeffs


def _flatten(field):
    return np.concatenate([field.dx.ravel(), field.dy.ravel()])


def _unflatten(vec, like):
    n = like.dx.size
    return DistortionField(
        vec[:n].reshape(like.shape),
        vec[n:].reshape(like.shape),
        like.block_size_px,
    )


def fit_pca(samples, num_components=DEFAULT_NUM_COMPONENTS):
    """Fit the distortion model to a list of fields on identical grids.

    Uses the (N-1)-normalized sample covariance; the eigenproblem is solved
    through an SVD of the centered data matrix, which works through the
    smaller of the two problem dimensions.
    """
    if not samples:
        raise InsufficientSamples("no samples")
    first = samples[0]
    for s in samples[1:]:
        if s.shape != first.shape or s.block_size_px != first.block_size_px:
            raise ShapeMismatch("all sample fields must share one grid geometry")
    n = len(samples)
    if n < num_components + 1:
        raise InsufficientSamples(
            f"{n} samples cannot support {num_components} components (need >= {num_components + 1})"
        )
    x = np.stack([_flatten(s) for s in samples])
    mean = x.mean(axis=0)
    xc = x - mean
    _, svals, vt = np.linalg.svd(xc, full_matrices=False)
    eigenvalues = svals**2 / (n - 1)
    comps = vt[:num_components]
    # Canonical sign: largest-magnitude entry of each component positive.
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1
    mean_field = _unflatten(mean, first)
    components = [_unflatten(c, first) for c in comps]
    return PcaDistortionModel(mean_field, eigenvalues[:num_components], components)


def synthesize_field(model, coefficients):
    """F = F0 + sum_i c_i * sqrt(lambda_i) * E_i."""
    coefficients = np.asarray(coefficients, dtype=np.float64).ravel()
    if coefficients.size != model.num_components:
        raise LengthMismatch(
            f"{coefficients.size} coefficients for {model.num_components} components"
        )
    vec = _flatten(model.mean_field).copy()
    scales = coefficients * np.sqrt(model.eigenvalues)
    for c, comp in zip(scales, model.components):
        vec += c * _flatten(comp)
    return _unflatten(vec, model.mean_field)


def sample_coefficients(rng_seed, t=DEFAULT_NUM_COMPONENTS, c_max=DEFAULT_COEFF_RANGE):
    """I.i.d. Uniform(-c_max, c_max) coefficients, deterministic per seed."""
    if t < 1:
        raise LengthMismatch("need at least one component")
    if c_max <= 0:
        raise ShapeMismatch("c_max must be positive")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(-c_max, c_max, size=t)


def cumulative_variance(model):
    """Nondecreasing prefix shares of variance across retained components."""
    total = model.eigenvalues.sum()
    if total <= 0:
        raise ZeroVariance("model has zero total variance")
    return np.cumsum(model.eigenvalues) / total


def save_model(path, model):
    """Write a model in the DPCA1 binary format (little-endian float32)."""
    mf = model.mean_field
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIII", mf.width_blocks, mf.height_blocks, mf.block_size_px, model.num_components))
        fh.write(_flatten(mf).astype("<f4").tobytes())
        fh.write(model.eigenvalues.astype("<f4").tobytes())
        for comp in model.components:
            fh.write(_flatten(comp).astype("<f4").tobytes())


def load_model(path):
    """Read a DPCA1 model file."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MODEL_MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        w, h, bs, t = struct.unpack("<IIII", fh.read(16))
        d = 2 * h * w
        data = np.frombuffer(fh.read(4 * (d + t + t * d)), dtype="<f4").astype(np.float64)
    if data.size != d + t + t * d:
        raise FileFormatError("truncated model payload")
    like = DistortionField(np.zeros((h, w)), np.zeros((h, w)), bs)
    mean = _unflatten(data[:d], like)
    eigenvalues = data[d : d + t]
    comps = [_unflatten(data[d + t + i * d : d + t + (i + 1) * d], like) for i in range(t)]
    return PcaDistortionModel(mean, eigenvalues, comps)
