"""Masked-face privacy toolkit.

Synthesizes surgical-style masks over face images, trains soft-biometric
attribute models on the results, tests prediction bias across demographic
groups, and scores per-modality privacy vulnerability from survey-derived
attribute importance.
"""

__version__ = "0.1.0"

from .datasets import (
    AGE_BIN_NAMES,
    AGE_BINS,
    RACES,
    SEXES,
    AttributeLabel,
    SplitManifest,
    age_bin_name,
    bin_age,
    format_label,
    make_random_split,
    make_uniform_split,
    parse_label,
    read_manifest,
    scan_labels,
    write_manifest,
)
from .errors import (
    ConfigMismatchError,
    CorruptCheckpointError,
    DegenerateGeometryError,
    DegenerateSamplesError,
    DomainError,
    EmptyInputError,
    EmptyPartitionError,
    InsufficientDataError,
    InvalidRankingError,
    KeyMismatchError,
    LandmarkFailureError,
    MalformedFilenameError,
    MaskPrivacyError,
    NoFaceFoundError,
    OutOfRangePredictabilityError,
    StageError,
    TooFewItemsError,
    WeightMismatchError,
    ZeroMarginError,
)
from .geometry import points_in_polygon, polygon_area, polygon_raster_mask
from .landmarks import (
    LANDMARK_TEMPLATE,
    Box,
    CascadeFaceLocator,
    ExternalLandmarkAdapter,
    LandmarkSet,
    TemplateLandmarkProvider,
    VarianceFaceLocator,
)
from .masking import (
    BatchSummary,
    MaskResult,
    MaskSpec,
    MaskSynthesizer,
    apply_mask,
    build_mask_polygon,
    mask_dataset,
    mask_image,
)
from .privacy import (
    ImportanceWeights,
    PviReport,
    SurveyResponse,
    build_pvi_report,
    compute_pvi,
    compute_rii,
    pvi_reduction,
    read_survey_csv,
    write_survey_csv,
)
from .records import (
    PredictionRecord,
    attach_attributes,
    read_records_csv,
    write_records_csv,
)
from .stats import (
    ContingencyTable,
    TestResult,
    analyze_task,
    chi2_sf,
    chi_square_independence,
    confusion_matrix,
    contingency_from_records,
    evaluate_records,
    mann_whitney_u,
    mann_whitney_u_exact,
    normal_sf,
    regularized_gamma_q,
    subgroup_accuracy,
    subgroup_mae,
)

__all__ = [name for name in dir() if not name.startswith("_")]
