"""Approximately rigid-motion-invariant image representations.

Images are projected onto the sphere through a family of maps that deform the
planar rigid-motion group into the 3D rotation group; the spherical bispectrum
of the projection is then invariant to rotations exactly and to translations
approximately.  The package provides the numerical pipeline (projection,
Clebsch-Gordan tables, bispectrum and its Jacobian, debiased estimation from
noisy streams, inversion and alignment), experiment drivers for
multi-reference alignment and invariant classification, scikit-learn style
feature transformers, and a CLI.
"""

from .bispectrum import (
    BispectrumVector,
    bispectrum,
    bispectrum_jacobian,
    read_bispectrum,
    relative_error,
    triplet_count,
    triplets,
    write_bispectrum,
)
from .classify import (
    ClassificationConfig,
    ClassificationResult,
    KnnGraph,
    knn_graph,
    node_scores,
    randomized_low_rank,
    rotational_bispectrum,
    run_classification,
    steerable_expand,
)
from .clebsch import CGTable, build_table, cg_oracle, cg_vector, load_table
from .estimation import BispectrumAccumulator, DebiasOperators, build_debias, estimate_bispectrum
from .estimators import RotationalBispectrumFeatures, SphericalBispectrumFeatures, validate_images
from .groups import (
    RigidMotion,
    contract,
    group_action_bound,
    homomorphism_defect_bound,
    plane_to_sphere,
    so3_exp,
    sphere_to_plane,
)
from .harmonics import (
    DesignValidationError,
    ShCoefficients,
    SphericalDesign,
    assoc_legendre,
    design_matrix,
    estimate_coefficients,
    load_design,
    power_spectrum,
    product_quadrature,
    random_real_coefficients,
    symmetrize_real,
    ylm,
)
from .inversion import (
    AlignmentResult,
    InversionOptions,
    InversionResult,
    RotationSequence,
    align,
    correlation,
    invert_bispectrum,
    rotate_shc,
    rotation_sequence,
)
from .mra import (
    MraConfig,
    MraReport,
    back_projection_bound,
    fit_loglog_slope,
    run_mra,
    synthesize_dataset,
)
from .projection import (
    ImageGrid,
    ProjectionOperator,
    apply_rigid_motion,
    back_project,
    build_projection_operator,
    load_image,
    project_image,
    random_smooth_image,
    save_image,
)

__version__ = "0.1.0"
