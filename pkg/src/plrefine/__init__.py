"""Laser-constrained refinement of depth-map point clouds.

The package covers the full geometric pipeline: back-projecting depth images
into clouds, lifting a planar laser scan into a front-view band mask,
accumulating dense local maps from recent scans, extracting scan-derived
constraint features, training/applying the two-headed MLP refinement, and
scoring results with depth metrics, transport distance, and fitness score.
Synthetic box-and-wall scenes provide fully-labeled data for training and
evaluation at desk scale.
"""

from .geometry import CameraModel, DepthImage, PointCloud, Pose, Vec3, rasterize_depth
from .laser import (
    BoundarySet,
    LaserScan2D,
    Mask,
    build_boundaries,
    build_laser_mask,
    scan_from_polar,
)
from .local_map import LocalMap, ScanBuffer, build_local_map
from .metrics import (
    CloudMetrics,
    DepthMetrics,
    EfsResult,
    depth_metrics,
    efs,
    emd_exact,
    emd_sinkhorn,
)
from .mlp import Adam, Mlp, Sgd
from .refine import (
    RefinementModel,
    TrainConfig,
    apply_refinement,
    extract_xy_feature,
    extract_z_feature,
    load_refinement_model,
    refinement_loss,
    save_refinement_model,
    train_refinement,
)
from .spatial import (
    ConfidenceGrid,
    KdIndex,
    build_confidence_grid,
    build_index,
    knn,
    sample_confidence,
)
from .synth import (
    Box,
    CorruptionSpec,
    SceneSpec,
    SensorRig,
    SynthSample,
    Wall,
    corrupt_cloud,
    distance_to_surface,
    generate_dataset,
    render_depth,
    simulate_laser,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BoundarySet",
    "Box",
    "CameraModel",
    "CloudMetrics",
    "ConfidenceGrid",
    "CorruptionSpec",
    "DepthImage",
    "DepthMetrics",
    "EfsResult",
    "KdIndex",
    "LaserScan2D",
    "LocalMap",
    "Mask",
    "Mlp",
    "PointCloud",
    "Pose",
    "RefinementModel",
    "ScanBuffer",
    "SceneSpec",
    "SensorRig",
    "Sgd",
    "SynthSample",
    "TrainConfig",
    "Vec3",
    "Wall",
    "apply_refinement",
    "build_boundaries",
    "build_confidence_grid",
    "build_index",
    "build_laser_mask",
    "build_local_map",
    "corrupt_cloud",
    "depth_metrics",
    "distance_to_surface",
    "efs",
    "emd_exact",
    "emd_sinkhorn",
    "extract_xy_feature",
    "extract_z_feature",
    "generate_dataset",
    "knn",
    "load_refinement_model",
    "rasterize_depth",
    "refinement_loss",
    "render_depth",
    "sample_confidence",
    "save_refinement_model",
    "scan_from_polar",
    "simulate_laser",
    "train_refinement",
]
