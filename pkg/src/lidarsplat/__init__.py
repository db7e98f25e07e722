"""LiDAR-centric Gaussian-splat toolkit.

Complexity-guided point budgets, curvature-scheduled splitting, and
confidence-weighted metric depth supervision, verified end to end with a
CPU planar-splat depth renderer and a desk-scale finite-difference trainer.
"""

from .cameras import CameraView, DepthMap, lidar_depth_map, look_at, project_point
from .complexity import (
    AllocationConfig,
    ComplexityField,
    allocation_probabilities,
    compute_complexity_field,
    curvature,
    local_covariance,
    normalize_scores,
    sample_budget,
    texture_complexity,
)
from .losses import (
    ConfidenceMap,
    LossWeights,
    confidence_weights,
    depth_loss,
    l1_rgb,
    laplacian,
    psnr,
    ssim,
    total_loss,
)
from .pointcloud import (
    NeighborIndex,
    PlyParseError,
    PointCloud,
    build_neighbor_index,
    chunk_iterate,
    knn,
    load_pointcloud,
    save_pointcloud,
)
from .render import PlanarSplat, RenderedFrame, plane_params, render_color, render_depth, splat_alpha
from .splats import (
    Gaussian,
    GaussianSet,
    SplitSchedule,
    associate_lidar_normals,
    covariance_of,
    estimate_point_normals,
    gaussian_normal,
    normal_alignment_loss,
    online_curvature,
    select_split_candidates,
    split_gaussian,
    split_threshold,
)
from .training import TrainConfig, TrainState, densify, finite_diff_grad, train_step

__version__ = "0.1.0"

__all__ = [
    "AllocationConfig",
    "CameraView",
    "ComplexityField",
    "ConfidenceMap",
    "DepthMap",
    "Gaussian",
    "GaussianSet",
    "LossWeights",
    "NeighborIndex",
    "PlanarSplat",
    "PlyParseError",
    "PointCloud",
    "RenderedFrame",
    "SplitSchedule",
    "TrainConfig",
    "TrainState",
    "allocation_probabilities",
    "associate_lidar_normals",
    "build_neighbor_index",
    "chunk_iterate",
    "compute_complexity_field",
    "confidence_weights",
    "covariance_of",
    "curvature",
    "densify",
    "depth_loss",
    "estimate_point_normals",
    "finite_diff_grad",
    "gaussian_normal",
    "knn",
    "l1_rgb",
    "laplacian",
    "lidar_depth_map",
    "load_pointcloud",
    "local_covariance",
    "look_at",
    "normal_alignment_loss",
    "normalize_scores",
    "online_curvature",
    "plane_params",
    "project_point",
    "psnr",
    "render_color",
    "render_depth",
    "sample_budget",
    "save_pointcloud",
    "select_split_candidates",
    "splat_alpha",
    "split_gaussian",
    "split_threshold",
    "ssim",
    "texture_complexity",
    "total_loss",
    "train_step",
]
