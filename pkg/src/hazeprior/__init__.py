"""Synthetic haze generation and codebook-prior matching at desk scale."""

from .chm import (
    CalibrationResult,
    DeltaProfile,
    assign_at_alpha,
    calibrate_alpha,
    distance_matrix,
    histogram_at_alpha,
    kl_divergence,
    match_chm,
    weight,
)
from .codebook import (
    Codebook,
    CodeGrid,
    FrequencyProfile,
    activation_frequency,
    fit_kmeans,
    match_nearest,
    quantize_grid,
    reconstruct_from_codes,
)
from .fusion import bilinear_warp, normalized_add
from .hazegen import (
    DegradationParams,
    HazySample,
    ParamRanges,
    degrade,
    sample_params,
    scattering,
    synth_dataset,
    transmission_from_depth,
)
from .imgcore import PatchGrid, RngStream, assemble_patches, extract_patches, load_image, save_image

__version__ = "0.1.0"
