"""Sparse-voxel windowed attention with relative signal encodings."""

from ._core import (
    DataError,
    Encoder,
    LookupTables,
    ParseError,
    PointCloud,
    Quantizer,
    SemanticError,
    VoxattnError,
    centroid_variance,
    default_subsets,
    gradcheck,
    h_divergence,
    load_ply,
    mix_schedule,
    modulation_param_count,
    noisy_scene,
    occupancy_histogram,
    pairwise_variance,
    plane_scene,
    project_signals,
    read_feature_dump,
    save_ply,
    variance_histogram,
    virtualize_signals,
    voxel_hierarchy,
    window_attention,
)

__version__ = "0.1.0"
