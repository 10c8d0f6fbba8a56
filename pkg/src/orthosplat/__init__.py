"""Batch pipeline: Gaussian-splat scenes -> pseudo-orthophotos -> drone-only
Fisher-vector descriptors -> cross-view retrieval evaluation."""

__version__ = "0.1.0"

from .gaussian_field import (
    CameraPose,
    Gaussian,
    GaussianField,
    covariance_of,
    estimate_visibility,
    parse_gaussian_ply,
    prune,
    write_gaussian_ply,
)
from .point_sampler import (
    PointCloud,
    SamplerConfig,
    allocate_samples,
    importance_scores,
    normal_of,
    sample_gaussian,
    sample_point_cloud,
    sh_color,
)
from .ground_plane import LocalCloud, PlaneFrame, estimate_frame, fit_plane_ransac, pca_basis, to_local_frame
from .ortho_renderer import (
    Layer,
    Orthophoto,
    RasterSpec,
    RenderConfig,
    choose_resolution,
    composite,
    downsample_ssaa,
    estimate_roof_height,
    render_orthophoto,
    splat_ground,
    splat_roof,
)
from .inpaint import (
    CompletionJob,
    HoleComponent,
    center_crop,
    classify_holes,
    export_completion_job,
    fallback_large_fill,
    hole_mask,
    import_completion,
    inpaint_orthophoto,
    knn_fill,
    morph_cleanup,
    telea_fill,
)
from .features import PatchFeatureSet, baseline_extract, load_feature_file, pool_multiview, write_feature_file
from .vocabulary import Codebook, DiagGmm, EmConfig, fit_gmm, fit_kmeans, posteriors, subsample_descriptors
from .fisher_agg import (
    DescriptorStore,
    GlobalDescriptor,
    aggregate,
    fisher_vector,
    power_l2_normalize,
    softvlad,
    vlad,
)
from .retrieval import Gallery, average_precision, evaluate, rank, recall_at_k
