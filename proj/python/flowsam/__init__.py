"""Incremental non-Gaussian factor-graph inference with normalizing flows."""

from ._flowsam import (
    AmbiguousRangeFactor,
    Dataset,
    ManhattanConfig,
    OdometryFactor,
    Pose2,
    PriorFactor,
    RangeBiasModel,
    RangeFactor,
    SampleSet,
    SeparatorDensityFactor,
    Session,
    TrainConfig,
    UpdateStats,
    VariableId,
    VarKind,
    ambiguous_range,
    association_belief,
    calibrate_ranges,
    generate_manhattan,
    generate_small_loop,
    load_range_odometry,
    mmd,
    odometry,
    prior,
    range_measurement,
    read_dataset,
    reference_posterior,
    rmse,
    sample_set,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousRangeFactor",
    "Dataset",
    "ManhattanConfig",
    "OdometryFactor",
    "Pose2",
    "PriorFactor",
    "RangeBiasModel",
    "RangeFactor",
    "SampleSet",
    "SeparatorDensityFactor",
    "Session",
    "TrainConfig",
    "UpdateStats",
    "VariableId",
    "VarKind",
    "ambiguous_range",
    "association_belief",
    "calibrate_ranges",
    "generate_manhattan",
    "generate_small_loop",
    "load_range_odometry",
    "mmd",
    "odometry",
    "prior",
    "range_measurement",
    "read_dataset",
    "reference_posterior",
    "rmse",
    "sample_set",
    "write_dataset",
]
