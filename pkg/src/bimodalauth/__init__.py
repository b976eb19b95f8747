"""Bimodal face and voice authentication.

Face samples pass through cascade detection, geometric alignment and
photometric normalization into a shared eigenface space; voice samples
become MFCC sequences matched against per-user vector-quantization
codebooks. The two match distances are normalized through double
sigmoids and fused by a weighted sum; one threshold on the fused score
yields the accept/reject decision. The package also ships a
reproducible evaluation harness, a loopback TCP service and a CLI.
"""

from .config import Config, apply_overrides, load_config, parse_config
from .errors import (
    BimodalAuthError,
    ConfigurationError,
    FormatError,
    InsufficientDataError,
)
from .imaging import (
    BilateralParams,
    GrayImage,
    IntegralImage,
    affine_warp,
    bilateral_filter,
    equalize_histogram,
    integral_image,
    load_pgm,
    load_pgm_file,
    save_pgm_file,
    write_pgm,
)
from .face_detect import (
    CascadeModel,
    Detection,
    EyeNotFoundError,
    EyeRegions,
    NoFaceError,
    detect_objects,
    load_cascade_file,
    locate_eyes,
    parse_cascade,
    validate_face,
)
from .face_pipeline import (
    CanonicalFace,
    CanonicalParams,
    acquire_canonical_face,
    align_face,
    compute_alignment,
    preprocess_face,
    split_equalize,
)
from .eigenfaces import (
    EigenModel,
    FaceMatch,
    FaceTemplate,
    enroll_face,
    match_face,
    mean_template,
    project,
    reconstruct,
    train_eigenmodel,
)
from .speech_features import (
    MelFilterbank,
    MfccParams,
    MfccSequence,
    PcmSignal,
    build_filterbank,
    extract_mfcc,
    load_wav,
    load_wav_file,
    make_window,
    mel,
    mel_to_hz,
    save_wav_file,
    write_wav,
)
from .vq_model import (
    Codebook,
    VoiceMatch,
    codebook_distance,
    lbg_train,
    match_voice,
)
from .fusion import (
    FusionDecision,
    FusionParams,
    MatchScore,
    ModalityParams,
    decide,
    fuse_pair,
    fuse_wss,
    normalize_double_sigmoid,
)
from .profile_store import (
    ProfileExistsError,
    ProfileNotFoundError,
    ProfileStore,
    StoreIntegrityError,
    UserProfile,
    rebuild_model,
)
from .evaluation import (
    ConfusionMatrix,
    DatasetIndex,
    EvaluationResult,
    MetricsReport,
    TrialPlan,
    build_trials,
    compute_metrics,
    generate_synthetic_corpus,
    index_dataset,
    run_evaluation,
    threshold_sweep,
)
from .authsvc import (
    AuthClient,
    AuthOutcome,
    AuthServer,
    ModelSnapshot,
    ModelStaleError,
    NoEnrolledUsersError,
    UnknownUserError,
    authenticate_samples,
    evaluate_probe,
    load_snapshot,
    register_samples,
    train_store_model,
)

__version__ = "0.1.0"

__all__ = [
    "AuthClient",
    "AuthOutcome",
    "AuthServer",
    "BilateralParams",
    "BimodalAuthError",
    "CanonicalFace",
    "CanonicalParams",
    "CascadeModel",
    "Codebook",
    "Config",
    "ConfigurationError",
    "ConfusionMatrix",
    "DatasetIndex",
    "Detection",
    "EigenModel",
    "EvaluationResult",
    "EyeNotFoundError",
    "EyeRegions",
    "FaceMatch",
    "FaceTemplate",
    "FormatError",
    "FusionDecision",
    "FusionParams",
    "GrayImage",
    "InsufficientDataError",
    "IntegralImage",
    "MatchScore",
    "MelFilterbank",
    "MetricsReport",
    "MfccParams",
    "MfccSequence",
    "ModalityParams",
    "ModelSnapshot",
    "ModelStaleError",
    "NoEnrolledUsersError",
    "NoFaceError",
    "PcmSignal",
    "ProfileExistsError",
    "ProfileNotFoundError",
    "ProfileStore",
    "StoreIntegrityError",
    "TrialPlan",
    "UnknownUserError",
    "UserProfile",
    "VoiceMatch",
    "acquire_canonical_face",
    "affine_warp",
    "align_face",
    "apply_overrides",
    "authenticate_samples",
    "bilateral_filter",
    "build_filterbank",
    "build_trials",
    "codebook_distance",
    "compute_alignment",
    "compute_metrics",
    "decide",
    "detect_objects",
    "enroll_face",
    "equalize_histogram",
    "evaluate_probe",
    "extract_mfcc",
    "fuse_pair",
    "fuse_wss",
    "generate_synthetic_corpus",
    "index_dataset",
    "integral_image",
    "lbg_train",
    "load_cascade_file",
    "load_config",
    "load_pgm",
    "load_pgm_file",
    "load_snapshot",
    "load_wav",
    "load_wav_file",
    "locate_eyes",
    "make_window",
    "match_face",
    "match_voice",
    "mean_template",
    "mel",
    "mel_to_hz",
    "normalize_double_sigmoid",
    "parse_cascade",
    "parse_config",
    "preprocess_face",
    "project",
    "rebuild_model",
    "reconstruct",
    "register_samples",
    "run_evaluation",
    "save_pgm_file",
    "save_wav_file",
    "split_equalize",
    "threshold_sweep",
    "train_eigenmodel",
    "train_store_model",
    "validate_face",
    "write_pgm",
    "write_wav",
]
