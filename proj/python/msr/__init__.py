"""Multimodal sequential recommendation pipeline."""

from ._core import (
    ConfigError,
    DependencyError,
    MsrError,
    UserEvalRecord,
    auc,
    default_config_yaml,
    extract_yes_no,
    hit_rate,
    interaction_probability,
    load_sft_dataset,
    make_fixture,
    make_record,
    mrr,
    run,
    segment_blocks,
    t_half_width,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "MsrError",
    "UserEvalRecord",
    "auc",
    "default_config_yaml",
    "extract_yes_no",
    "hit_rate",
    "interaction_probability",
    "load_sft_dataset",
    "make_fixture",
    "make_record",
    "mrr",
    "run",
    "segment_blocks",
    "t_half_width",
]
