"""Single-image fingerprint distortion rectification toolkit."""

__version__ = "0.1.0"

from .fields import (
    DistortionField,
    PointCorrespondences,
    RigidTransform,
    fit_rigid,
    fit_tps_field,
    invert_field,
    load_field,
    remove_dc,
    save_field,
    upsample_field,
    warp_image,
)
from .pca_model import (
    PcaDistortionModel,
    cumulative_variance,
    fit_pca,
    load_model,
    sample_coefficients,
    save_model,
    synthesize_field,
)

__all__ = [
    "DistortionField",
    "PointCorrespondences",
    "RigidTransform",
    "PcaDistortionModel",
    "cumulative_variance",
    "fit_pca",
    "fit_rigid",
    "fit_tps_field",
    "invert_field",
    "load_field",
    "load_model",
    "remove_dc",
    "sample_coefficients",
    "save_field",
    "save_model",
    "synthesize_field",
    "upsample_field",
    "warp_image",
]
