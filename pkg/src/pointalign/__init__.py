"""Robust point-map alignment, camera recovery, losses, and evaluation."""

from .camera import (
    CameraSolution,
    FovDegrees,
    closed_form_focal,
    fov_from_focal,
    project,
    recover_focal_shift,
    unproject,
)
from .errors import (
    ConvergenceError,
    DegenerateGeometryError,
    InputError,
    PmapFormatError,
    PointalignError,
)
from .losses import (
    LOSS_PRESETS,
    LocalLossResult,
    LossBreakdown,
    SphereRegion,
    binarize_mask,
    global_loss,
    grid_normals,
    loss_breakdown,
    mask_loss,
    multiscale_local_loss,
    normal_loss,
    select_sphere,
    sphere_radius,
    trimmed_mean,
)
from .maps import (
    POSITIVE_DEPTH_EPS,
    DepthMap,
    DisparityMap,
    ImageGrid,
    PointMap,
    SimilarityAlign,
    depth_to_disparity,
    downsample_pointmap,
    pointmap_to_depth,
)
from .metrics import (
    FovErrorReport,
    MetricReport,
    eval_depth,
    eval_disparity_affine,
    eval_fov,
    eval_point_affine,
    eval_point_local,
    eval_point_scale,
    macro_average,
)
from .oracle import (
    oracle_align_1d,
    oracle_align_3d_full,
    oracle_align_3d_restricted,
    oracle_subproblem,
)
from .pmap_io import (
    PmapData,
    export_ply,
    read_depth,
    read_disparity,
    read_pmap,
    read_pointmap,
    write_depth,
    write_pmap,
    write_pointmap,
)
from .scenes import FAMILIES, SyntheticScene, make_scene
from .solver import (
    DEFAULT_ALIGN_RESOLUTION,
    DEFAULT_TAU,
    AlignResult,
    SubproblemSolution,
    WeightedResiduals,
    align_anchored_1ch,
    align_least_squares,
    align_median_baseline,
    align_scale_only,
    align_scale_shift_1d,
    align_scale_shift_3d,
    objective_value,
    solve_subproblem,
    solve_subproblem_truncated,
    solve_subproblem_untruncated,
)

__version__ = "0.1.0"
