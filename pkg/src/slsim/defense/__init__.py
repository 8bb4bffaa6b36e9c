from slsim.defense.expansion import pkt_expand, poly_feature_map
from slsim.defense.filtering import (
    VARIANTS,
    FilterDiagnostics,
    adaptive_radius,
    ball_filter,
    coordinate_median,
    distances_to,
    embedding_variance,
    filter_batch,
    majority_radius,
    transform,
)
from slsim.defense.reduction import TransformConfig, pca_reduce, umap_reduce

__all__ = [
    "VARIANTS",
    "FilterDiagnostics",
    "TransformConfig",
    "adaptive_radius",
    "ball_filter",
    "coordinate_median",
    "distances_to",
    "embedding_variance",
    "filter_batch",
    "majority_radius",
    "pca_reduce",
    "pkt_expand",
    "poly_feature_map",
    "transform",
    "umap_reduce",
]
