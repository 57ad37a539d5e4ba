"""uxpr: find electrical devices in volumetric scans.

The pipeline has four stages: Unpack (scale-space sieve decomposition),
eXtract (connected segments + intensity histograms), Predict (histogram
classifiers), Repack (per-voxel verdict voting). A simulated-bag
generator and an evaluation harness round it out.
"""

__version__ = "0.1.0"

from .volume import (
    Connectivity,
    FlatZoneGraph,
    InvariantError,
    LabelEntry,
    LabelVolume,
    SignedVolume,
    Volume,
    connected_components,
    extremal_zones,
    flat_zones,
    overlap_count,
)
from .sieve import (
    FilterKind,
    ScaleSchedule,
    SieveDecomposition,
    abs_channel,
    apply_filter,
    brute_force_sieve_1d,
    decompose,
    load_decomposition,
    save_decomposition,
)
from .uxv import UxvError, load_labels, load_signed, load_volume, read_uxv, save_labels, save_signed, save_volume, write_uxv
from .segments import (
    FIVE_CLASS,
    TWO_CLASS,
    Segment,
    SegmentRecord,
    Task,
    auto_label_segment,
    build_records,
    default_schedule,
    extract_segments,
    ground_truth_segments,
    load_segments,
    parse_task,
    save_segments,
    segment_histogram,
)
from .classify import (
    Dataset,
    Ensemble,
    ForestModel,
    ForestParams,
    NearestNeighbour,
    Prediction,
    ensemble_predict,
    forest_predict,
    forest_train,
    knn_predict,
    load_model,
    load_predictions,
    predict_records,
    save_model,
    save_predictions,
    train_ensemble,
)
from .bagsim import (
    Bag,
    Placement,
    PoolObject,
    generate_phantom_pool,
    load_bag,
    load_pool,
    pack_bag,
    rotate_object,
    save_bag,
    save_pool,
)
from .repack import (
    LIKELY,
    UNLIKELY,
    VERY_UNLIKELY,
    RepackMap,
    flatten2d,
    load_pgm,
    load_repack,
    mip_projection,
    render_verdict_maps,
    repack_vote,
    save_pgm,
    save_repack,
)
from .evaluate import (
    CaseRecord,
    EvalResult,
    Metrics,
    compute_metrics,
    flatten_ground_truth,
    leave_one_class_out_evaluate,
    lobo_evaluate,
    mann_whitney_auroc,
    roc_curve,
    save_report,
    save_summary_csv,
    trapezoid_area,
)

__all__ = [
    "__version__",
    "Connectivity", "FlatZoneGraph", "InvariantError", "LabelEntry", "LabelVolume",
    "SignedVolume", "Volume", "connected_components", "extremal_zones", "flat_zones",
    "overlap_count",
    "FilterKind", "ScaleSchedule", "SieveDecomposition", "abs_channel", "apply_filter",
    "brute_force_sieve_1d", "decompose", "load_decomposition", "save_decomposition",
    "UxvError", "load_labels", "load_signed", "load_volume", "read_uxv",
    "save_labels", "save_signed", "save_volume", "write_uxv",
    "FIVE_CLASS", "TWO_CLASS", "Segment", "SegmentRecord", "Task",
    "auto_label_segment", "build_records", "default_schedule", "extract_segments",
    "ground_truth_segments", "load_segments", "parse_task", "save_segments",
    "segment_histogram",
    "Dataset", "Ensemble", "ForestModel", "ForestParams", "NearestNeighbour",
    "Prediction", "ensemble_predict", "forest_predict", "forest_train", "knn_predict",
    "load_model", "load_predictions", "predict_records", "save_model",
    "save_predictions", "train_ensemble",
    "Bag", "Placement", "PoolObject", "generate_phantom_pool", "load_bag",
    "load_pool", "pack_bag", "rotate_object", "save_bag", "save_pool",
    "LIKELY", "UNLIKELY", "VERY_UNLIKELY", "RepackMap", "flatten2d", "load_pgm",
    "load_repack", "mip_projection", "render_verdict_maps", "repack_vote",
    "save_pgm", "save_repack",
    "CaseRecord", "EvalResult", "Metrics", "compute_metrics", "flatten_ground_truth",
    "leave_one_class_out_evaluate", "lobo_evaluate", "mann_whitney_auroc",
    "roc_curve", "save_report", "save_summary_csv", "trapezoid_area",
]
