"""LoRA adapter calibration, merging and diagnostics."""

from ._core import (
    DEFAULT_NAME_PATTERN,
    Adapter,
    AdapterSet,
    Error,
    IoError,
    LayerKey,
    MergeConfig,
    NumericalError,
    PipelineResult,
    ValidationError,
    calibrate_layer,
    compare_configs,
    component_energy,
    dare_preprocess,
    effective_rank,
    gen_overlap_set,
    gen_toy,
    merge_task_arithmetic,
    merge_ties,
    merge_tsv,
    merged_b_stats,
    numerical_rank,
    oracle_linear_average,
    orthonormal_basis,
    overlap_score,
    pairwise_overlap,
    read_adapter,
    run_pipeline,
    shared_basis,
    sharing_profile,
    spectral_stats,
    task_contributions,
    thin_svd,
    write_adapter,
    write_merged,
)


def merge_config(**fields):
    """MergeConfig with the given fields set, validated."""
    config = MergeConfig()
    for name, value in fields.items():
        if not hasattr(config, name):
            raise TypeError(f"unknown MergeConfig field {name!r}")
        setattr(config, name, value)
    config.validate()
    return config


__all__ = [name for name in dir() if not name.startswith("_")]
