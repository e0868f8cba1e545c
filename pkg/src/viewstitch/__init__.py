"""Two-view object stitching over voxel object hypotheses."""

from .affinity import AffinityLabels, AffinityMatrix, balanced_affinity_loss, build_affinity, feasible_pairs
from .geometry import (
    AffineMap,
    EmptyCloudError,
    GeometryError,
    NonRepresentableError,
    SceneObject,
    SimilarityTransform,
    UnitQuaternion,
    VoxelGrid,
    apply_transform,
    chamfer,
    compose,
    fscore,
    inverse,
    rotation_geodesic,
    scale_error,
    voxels_to_edge_points,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .pose_space import (
    CameraPoseDistribution,
    PoseHypothesis,
    RotationBinSet,
    TranslationBinSet,
    kmeans_translations,
    spherical_kmeans_rotations,
    top_k_hypotheses,
)
from .stitcher import (
    Correspondence,
    EdgeParams,
    ObjectiveTerms,
    StitchError,
    StitchResult,
    StitchWeights,
    merge,
    objective,
    sample_correspondences,
    solve,
    stitch_distance,
)

__version__ = "0.1.0"
