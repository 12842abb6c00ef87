"""2D-3D alignment and calibrated shape evaluation.

The package solves camera pose from 2D-3D keypoint correspondences
(virtual-control-point initialization, exhaustive focal sweep, damped
least-squares refinement, plus RANSAC and annotator-subset-consensus
robust variants) and scores 3D reconstructions with calibrated metrics:
voxel IoU under a shared preprocessing protocol, Chamfer distance, and
an epsilon-approximate earth mover's distance on surface samples.

Supporting layers: a deterministic triangle rasterizer for silhouette
audits, dataset and mesh/voxel/cloud file I/O, a benchmark CLI, and an
HTTP annotation service.
"""

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateMesh,
    DegenerateProjection,
    DimensionMismatch,
    EmptyCloud,
    EmptyGrid,
    EmptyInput,
    EmptyMesh,
    EmptySurface,
    IndexOutOfRange,
    LengthMismatch,
    MissingPair,
    NoConsensus,
    NoSolution,
    OutOfRangeAngle,
    ParseError,
    ResolutionMismatch,
    SchemaError,
    ShapeAlignError,
    SizeMismatch,
    TooFewPoints,
    ZeroExtent,
    ZeroVariance,
)
from .geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    ProjectionMatrix,
    RigidPose,
    TriangleMesh,
    compose,
    pose_from_rt,
    project,
    project_points,
    projection_depths,
    reprojection_error,
    rotation_geodesic_deg,
    rotation_matrix,
)
from .epnp import epnp
from .solver import (
    AlignmentSolution,
    AnnotationTriple,
    MethodTag,
    SolverConfig,
    consensus_keypoints,
    focal_values,
    refine_lma,
    solve,
    solve_epnp_focal_sweep,
    solve_ransac,
    solve_subset_consensus,
)
from .voxel import (
    GT_THRESHOLD,
    MetricConfig,
    PrepareTrace,
    VoxelGrid,
    best_threshold,
    iou,
    marching_cubes,
    prepare_iou,
    prepare_iou_traced,
    sweep_thresholds,
)
from .pointcloud import (
    Assignment,
    PointCloud,
    chamfer,
    chamfer_brute_force,
    derive_seed,
    emd,
    emd_brute_force,
    emd_with_assignment,
    normalize,
    sample_surface,
    voxel_to_cloud,
)
from .silhouette import (
    BinaryMask,
    mask_iou,
    read_pgm,
    render_silhouette,
    write_pgm,
)
from .dataset import (
    AnnotationRecord,
    filter_records,
    load_annotations,
    load_mesh,
    record_to_json,
    save_annotations,
    with_pose,
)
from .voxio import (
    read_binvox,
    read_voxf,
    read_xyz,
    write_voxf,
    write_xyz,
)
from .bench import (
    AuditReport,
    Embedding,
    EvalReport,
    RecallReport,
    audit_alignment,
    evaluate_reconstructions,
    pearson,
    pose_accuracy,
    recall_at_k,
    spearman,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
